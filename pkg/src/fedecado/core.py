"""Shared state containers and vector primitives.

Parameter vectors are plain 1-D ``float64`` numpy arrays. The helpers here
enforce exact shapes (no silent broadcasting) and provide the max-abs norm
used for every tolerance comparison in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

__all__ = [
    "ShapeError",
    "as_param",
    "max_abs",
    "check_same_shape",
    "check_finite",
    "Config",
    "StepMemory",
    "ClientRecord",
    "CentralState",
    "TrajectorySegment",
]


class ShapeError(ValueError):
    """Raised when two vectors that must agree in shape do not."""


def as_param(values: Any, dim: Optional[int] = None) -> np.ndarray:
    """Return a fresh 1-D float64 copy of ``values``, optionally of length ``dim``."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"expected dimension {dim}, got {arr.shape[0]}")
    return arr


def max_abs(values: np.ndarray) -> float:
    """Max absolute component; 0.0 for an empty array."""
    arr = np.asarray(values)
    if arr.size == 0:
        return 0.0
    return float(np.max(np.abs(arr)))


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "vectors") -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_finite(values: np.ndarray, what: str = "vector") -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class Config:
    """Run-level knobs.

    ``gamma`` is the single accuracy tolerance shared by the client and
    server step controllers. ``max_dt`` caps a single client step,
    ``growth`` caps how fast the server step may grow after an accepted
    step, ``alignment`` selects how client trajectories are presented to
    the server (``"hold"`` or ``"interpolate"``) and ``sensitivity``
    selects the client response model (``"auto"``, ``"dense"``, ``"diag"``).
    """

    gamma: float = 1e-2
    stop_tol: float = 1e-6
    max_rounds: int = 500
    seed: int = 0
    default_dt: float = 0.1
    max_backtracks: int = 30
    L_override: Optional[float] = None
    participation: float = 1.0
    max_dt: float = 1.0
    growth: float = 2.0
    alignment: str = "hold"
    sensitivity: str = "auto"
    dense_max: int = 64
    hessian_sample: int = 64
    max_substeps: int = 200_000
    divergence_bound: float = 1e12

    def __post_init__(self) -> None:
        def positive(name: str) -> None:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")

        for name in ("gamma", "stop_tol", "default_dt", "max_dt", "divergence_bound"):
            positive(name)
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")
        if self.L_override is not None:
            positive("L_override")
        if not (0.0 < self.participation <= 1.0):
            raise ValueError("participation must lie in (0, 1]")
        if not (self.growth >= 1.0):
            raise ValueError("growth must be >= 1")
        if self.alignment not in ("hold", "interpolate"):
            raise ValueError("alignment must be 'hold' or 'interpolate'")
        if self.sensitivity not in ("auto", "dense", "diag"):
            raise ValueError("sensitivity must be 'auto', 'dense' or 'diag'")
        if self.dense_max < 1 or self.hessian_sample < 1 or self.max_substeps < 1:
            raise ValueError("dense_max, hessian_sample and max_substeps must be >= 1")

    def with_(self, **changes: Any) -> "Config":
        return replace(self, **changes)


@dataclass
class StepMemory:
    """Last point and weighted gradient seen by a client's step-size rule."""

    x: np.ndarray
    g: np.ndarray
    bound: Optional[float] = None


@dataclass
class ClientRecord:
    """Mutable per-client state carried across rounds.

    ``response`` is the client's current model of how its reported state
    reacts to a change of its coupling flow (a resistance: vector for the
    diagonal model, matrix for the dense one). ``raw_response`` is the
    last measured window response before smoothing.
    """

    id: int
    weight: float
    objective: Any
    x: np.ndarray
    I: np.ndarray
    epochs: int = 1
    sensitivity: Any = None
    inductance: Optional[np.ndarray] = None
    window: float = 0.0
    prev_x: Optional[np.ndarray] = None
    prev_t: float = 0.0
    prev_I: Optional[np.ndarray] = None
    response: Optional[np.ndarray] = None
    raw_response: Optional[np.ndarray] = None
    memory: Optional[StepMemory] = None
    sample: Optional[np.ndarray] = None
    dense: bool = False
    grad_evals: int = 0

    def __post_init__(self) -> None:
        self.x = as_param(self.x)
        self.I = as_param(self.I, self.x.shape[0])
        if not (0.0 < self.weight <= 1.0):
            raise ValueError(f"client {self.id}: weight must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError(f"client {self.id}: epochs must be >= 1")
        if self.window < 0:
            raise ValueError(f"client {self.id}: window must be >= 0")
        if self.prev_x is None:
            self.prev_x = self.x.copy()
        if self.prev_I is None:
            self.prev_I = self.I.copy()

    @property
    def dim(self) -> int:
        return int(self.x.shape[0])


@dataclass
class CentralState:
    x_c: np.ndarray
    clock: float = 0.0
    last_dt: float = 0.1
    round: int = 0

    def __post_init__(self) -> None:
        self.x_c = as_param(self.x_c)
        if self.clock < 0:
            raise ValueError("clock must be >= 0")
        if not self.last_dt > 0:
            raise ValueError("last_dt must be > 0")


@dataclass(frozen=True)
class TrajectorySegment:
    """Straight-line trajectory from ``(t1, x1)`` to ``(t2, x2)``."""

    t1: float
    t2: float
    x1: np.ndarray = field(repr=False)
    x2: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not self.t2 > self.t1:
            raise ValueError(f"degenerate segment: t2={self.t2} must exceed t1={self.t1}")
        check_same_shape(self.x1, self.x2, "segment endpoints")

    @property
    def slope(self) -> np.ndarray:
        return (self.x2 - self.x1) / (self.t2 - self.t1)

    @classmethod
    def constant(cls, x: np.ndarray, t1: float, t2: float) -> "TrajectorySegment":
        x = as_param(x)
        return cls(t1, t2, x, x.copy())
