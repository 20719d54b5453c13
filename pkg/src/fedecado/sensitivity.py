"""Client sensitivities, critical-damping inductances and small-system oracles.

A client branch behaves like a resistor of conductance ``g`` in series
with an inductor ``L`` feeding a unit capacitor. Its characteristic
polynomial is ``L s^2 + s/g + 1/C``, so ``L = 1/(4 g^2)`` places a
repeated real root and critically damps the branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import as_param

__all__ = [
    "SensitivityModel",
    "DampingRegime",
    "build_sensitivity",
    "critical_inductance",
    "branch_eigenvalues",
    "damping_classify",
    "simulate_rlc",
    "rlc_state",
    "settling_time",
    "assemble_linear_system",
    "system_eig_oracle",
    "LinearizedSystem",
    "perturbation_sensitivity",
    "ORACLE_MAX_DIM",
]

ORACLE_MAX_DIM = 50
_CRITICAL_TOL = 1e-6


@dataclass(frozen=True)
class SensitivityModel:
    """Positive diagonal conductance with the nominal step it was built for."""

    diag: np.ndarray
    nominal_dt: float
    dense: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        d = as_param(self.diag)
        if not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ValueError("sensitivity entries must be positive and finite")
        if not self.nominal_dt > 0:
            raise ValueError("nominal_dt must be > 0")
        object.__setattr__(self, "diag", d)
        if self.dense is not None:
            M = np.asarray(self.dense, dtype=np.float64)
            if M.shape != (d.size, d.size):
                raise ValueError("dense sensitivity has the wrong shape")
            if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.abs(M).max()):
                raise ValueError("dense sensitivity must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError("dense sensitivity must be positive definite")
            object.__setattr__(self, "dense", 0.5 * (M + M.T))


@dataclass(frozen=True)
class DampingRegime:
    label: str
    zeta: float


def build_sensitivity(client, nominal_dt: float, sample=None, dense: bool = False) -> SensitivityModel:
    """Nominal conductance ``1/nominal_dt + p * Hbar`` at the client's current state."""
    if not nominal_dt > 0:
        raise ValueError("nominal_dt must be > 0")
    obj = client.objective
    diag = 1.0 / nominal_dt + client.weight * obj.hessian_diag(client.x, sample)
    mat = None
    if dense:
        H = obj.hessian(client.x, sample)
        mat = np.eye(client.dim) / nominal_dt + client.weight * 0.5 * (H + H.T)
    return SensitivityModel(diag, float(nominal_dt), mat)


def critical_inductance(G, L_override: Optional[float] = None) -> np.ndarray:
    """Elementwise ``1/(4 G^2)``, or the constant ``L_override`` when given."""
    diag = G.diag if isinstance(G, SensitivityModel) else as_param(G)
    if not np.all(diag > 0):
        raise ValueError("sensitivity entries must be strictly positive")
    if L_override is not None:
        if not L_override > 0:
            raise ValueError("L_override must be > 0")
        return np.full(diag.shape, float(L_override))
    return 0.25 / diag ** 2


def _check_positive(**kw) -> None:
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")


def branch_eigenvalues(g: float, L: float, C: float = 1.0) -> Tuple[complex, complex]:
    """Roots of ``L s^2 + s/g + 1/C``.

    A discriminant within rounding of zero is snapped to zero so the
    critically damped case yields an exactly repeated root.
    """
    _check_positive(g=g, L=L, C=C)
    b = 1.0 / g
    disc = b * b - 4.0 * L / C
    if abs(disc) <= 64.0 * np.finfo(float).eps * b * b:
        disc = 0.0
    if disc >= 0:
        r = math.sqrt(disc)
        # cancellation-free pair
        q = -0.5 * (b + r)
        s1 = q / L
        s2 = (1.0 / C) / q
        return complex(s1), complex(s2)
    w = math.sqrt(-disc) / (2.0 * L)
    re = -b / (2.0 * L)
    return complex(re, w), complex(re, -w)


def damping_classify(g: float, L: float, C: float = 1.0) -> DampingRegime:
    _check_positive(g=g, L=L, C=C)
    zeta = (1.0 / (2.0 * g)) * math.sqrt(C / L)
    if abs(zeta - 1.0) <= _CRITICAL_TOL:
        label = "critical"
    elif zeta < 1.0:
        label = "underdamped"
    else:
        label = "overdamped"
    return DampingRegime(label, zeta)


def rlc_state(L: float, k: float, x0: float, v0: float, t) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form position and velocity of ``x'' + L x' + k x = 0``."""
    if L < 0 or not k > 0:
        raise ValueError("need L >= 0 and k > 0")
    t = np.asarray(t, dtype=np.float64)
    disc = L * L - 4.0 * k
    a = 0.5 * L
    if abs(disc) <= 1e-9 * max(L * L, 4.0 * k):
        B = v0 + a * x0
        e = np.exp(-a * t)
        x = (x0 + B * t) * e
        v = (B - a * (x0 + B * t)) * e
    elif disc < 0:
        w = 0.5 * math.sqrt(-disc)
        B = (v0 + a * x0) / w
        e = np.exp(-a * t)
        c, s = np.cos(w * t), np.sin(w * t)
        x = e * (x0 * c + B * s)
        v = e * ((B * w - a * x0) * c - (x0 * w + a * B) * s)
    else:
        r = math.sqrt(disc)
        r1, r2 = 0.5 * (-L + r), 0.5 * (-L - r)
        c1 = (v0 - r2 * x0) / (r1 - r2)
        c2 = x0 - c1
        e1, e2 = np.exp(r1 * t), np.exp(r2 * t)
        x = c1 * e1 + c2 * e2
        v = c1 * r1 * e1 + c2 * r2 * e2
    return x, v


def simulate_rlc(L: float, k: float = 10.0, x0: float = 1.0, v0: float = 0.0,
                 horizon: float = 5.0, samples: int = 1001) -> Tuple[np.ndarray, np.ndarray]:
    """Uniformly sampled closed-form trajectory ``(t, x)`` on ``[0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    t = np.linspace(0.0, horizon, samples)
    x, _ = rlc_state(L, k, x0, v0, t)
    return t, x


def settling_time(t: np.ndarray, x: np.ndarray, threshold: float = 0.01) -> float:
    """Time after which ``|x|`` stays below ``threshold`` (inf if it never does)."""
    above = np.flatnonzero(np.abs(np.asarray(x)) >= threshold)
    if above.size == 0:
        return float(t[0])
    last = above[-1]
    if last == len(t) - 1:
        return math.inf
    return float(t[last + 1])


def assemble_linear_system(g: Sequence, L: Sequence, C: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Linearized aggregation system ``C_mat y' = G_mat y``.

    State is ``[x_c, I_1, ..., I_K]`` with per-coordinate diagonal
    conductances ``g[i]`` and inductances ``L[i]``::

        C x_c'  = -sum_i I_i
        L_i I_i' = x_c - I_i / g_i
    """
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    if g.shape != L.shape:
        raise ValueError("g and L must have matching shapes")
    if np.any(g <= 0) or np.any(L <= 0) or not C > 0:
        raise ValueError("g, L and C must be positive")
    K, d = g.shape
    n = d * (K + 1)
    if n > ORACLE_MAX_DIM:
        raise ValueError(f"oracle system dimension {n} exceeds {ORACLE_MAX_DIM}")
    Id = np.eye(d)
    Cm = np.zeros((n, n))
    Gm = np.zeros((n, n))
    Cm[:d, :d] = C * Id
    for i in range(K):
        s = slice(d * (i + 1), d * (i + 2))
        Cm[s, s] = np.diag(L[i])
        Gm[:d, s] = -Id
        Gm[s, :d] = Id
        Gm[s, s] = -np.diag(1.0 / g[i])
    return Cm, Gm


def system_eig_oracle(C_mat, G_mat) -> np.ndarray:
    """Eigenvalues of ``C_mat^-1 G_mat`` for small systems."""
    C_mat = np.atleast_2d(np.asarray(C_mat, dtype=np.float64))
    G_mat = np.atleast_2d(np.asarray(G_mat, dtype=np.float64))
    n = C_mat.shape[0]
    if C_mat.shape != (n, n) or G_mat.shape != (n, n):
        raise ValueError("C_mat and G_mat must be square and equal in size")
    if n > ORACLE_MAX_DIM:
        raise ValueError(f"oracle system dimension {n} exceeds {ORACLE_MAX_DIM}")
    if not np.allclose(C_mat, np.diag(np.diag(C_mat))) or np.any(np.diag(C_mat) <= 0):
        raise ValueError("C_mat must be diagonal with positive entries")
    return np.linalg.eigvals(G_mat / np.diag(C_mat)[:, None])


@dataclass
class LinearizedSystem:
    """State of a small aggregation system around which one BE step is probed."""

    g: np.ndarray
    L: np.ndarray
    x_c: np.ndarray
    I: np.ndarray
    anchors: np.ndarray
    dt: float = 0.1

    @classmethod
    def symmetric(cls, clients: int = 3, dim: int = 2, g: float = 10.0, dt: float = 0.1,
                  seed: int = 0) -> "LinearizedSystem":
        """Identical branches at critical damping with a random operating point."""
        rng = np.random.default_rng(seed)
        G = np.full((clients, dim), float(g))
        x_c = rng.normal(size=dim)
        anchor = rng.normal(size=dim)
        I = np.tile(rng.normal(size=dim), (clients, 1))
        return cls(G, 0.25 / G ** 2, x_c, I, np.tile(anchor, (clients, 1)), dt)


def perturbation_sensitivity(system: LinearizedSystem, eps: float = 1e-4) -> np.ndarray:
    """Normalized shares of how client 1's next flow reacts to ``x_c``, ``I_2``, ``I_3``.

    Central finite differences of one Backward-Euler step. Each share is
    the Frobenius norm of the corresponding Jacobian block, and the
    three shares sum to one.
    """
    from .kernels import be_solve_diag

    if not eps > 0:
        raise ValueError("eps must be > 0")
    K = system.I.shape[0]
    if K != 3:
        raise ValueError("perturbation_sensitivity expects exactly 3 clients")
    R = 1.0 / system.g
    Ik = system.I.copy()

    def step(x_c, I):
        _, In = be_solve_diag(x_c, I, Ik, R, system.L, system.anchors, system.dt)
        return In[0]

    d = system.x_c.size
    blocks = []
    for target in ("x_c", 1, 2):
        J = np.zeros((d, d))
        for j in range(d):
            xp, xm = system.x_c.copy(), system.x_c.copy()
            Ip, Im = system.I.copy(), system.I.copy()
            if target == "x_c":
                xp[j] += eps
                xm[j] -= eps
            else:
                Ip[target, j] += eps
                Im[target, j] -= eps
            J[:, j] = (step(xp, Ip) - step(xm, Im)) / (2 * eps)
        blocks.append(np.linalg.norm(J))
    s = np.asarray(blocks)
    return s / s.sum()
