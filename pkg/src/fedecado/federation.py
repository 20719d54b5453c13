"""End-to-end rounds: precompute, client windows, server aggregation, baselines.

One round is one Gauss-Seidel sweep. Active clients integrate their local
ODE with frozen flows, their window responses update the series
resistances, then the server integrates the coupled flows over the
longest reported window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .client import client_local_round
from .core import CentralState, ClientRecord, Config, as_param, max_abs
from .sensitivity import build_sensitivity, critical_inductance
from .server import aggregate_round
from . import kernels

__all__ = [
    "RoundReport",
    "BaselineSpec",
    "RunResult",
    "precompute",
    "run_fedecado",
    "run_baseline",
    "global_loss",
    "global_accuracy",
    "consensus_minimizer",
]


@dataclass
class RoundReport:
    round: int
    global_loss: float
    global_accuracy: Optional[float]
    dx_c_norm: float
    max_IL_norm: float
    client_dts: Dict[int, List[float]]
    server_dts: List[float]
    wall_ms: int = 0
    movement: float = 0.0
    grad_evals: int = 0

    def to_record(self) -> dict:
        """JSON-ready dict with the stable per-round schema (no timing)."""
        return {
            "round": self.round,
            "loss": _finite_or_none(self.global_loss),
            "acc": _finite_or_none(self.global_accuracy),
            "dxc": _finite_or_none(self.dx_c_norm),
            "max_il": _finite_or_none(self.max_IL_norm),
            "server_dts": [float(v) for v in self.server_dts],
            "client_dts": {str(k): [float(v) for v in vs] for k, vs in sorted(self.client_dts.items())},
        }


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "fedavg"
    server_lr: float = 1.0
    client_lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-3

    def __post_init__(self) -> None:
        if self.kind not in ("fedavg", "fedadam", "fedadagrad"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if not self.client_lr > 0:
            raise ValueError("client_lr must be > 0")
        # zero server_lr is allowed: it freezes the global model
        if not self.server_lr >= 0:
            raise ValueError("server_lr must be >= 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass
class RunResult:
    x_c: np.ndarray
    reports: List[RoundReport]
    diverged: bool = False
    converged: bool = False
    reason: str = ""
    grad_evals: int = 0

    def __iter__(self):
        yield self.x_c
        yield self.reports


def global_loss(clients: Sequence[ClientRecord], x) -> float:
    return float(sum(c.weight * c.objective.loss(x) for c in sorted(clients, key=lambda c: c.id)))


def global_accuracy(clients: Sequence[ClientRecord], x) -> Optional[float]:
    if not all(getattr(c.objective, "classification", False) for c in clients):
        return None
    return float(sum(c.weight * c.objective.accuracy(x) for c in sorted(clients, key=lambda c: c.id)))


def consensus_minimizer(clients: Sequence[ClientRecord]) -> np.ndarray:
    """``(sum p A)^-1 sum p A c`` for quadratic clients."""
    M = sum(c.weight * c.objective.A for c in clients)
    v = sum(c.weight * c.objective.A @ c.objective.c for c in clients)
    return np.linalg.solve(M, v)


def _check_clients(clients: Sequence[ClientRecord]) -> List[ClientRecord]:
    if not clients:
        raise ValueError("need at least one client")
    order = sorted(clients, key=lambda c: c.id)
    if len({c.id for c in order}) != len(order):
        raise ValueError("client ids must be unique")
    total = sum(c.weight for c in order)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"client weights must sum to 1, got {total!r}")
    d = order[0].dim
    if any(c.dim != d for c in order):
        raise ValueError("all clients must share the parameter dimension")
    return order


def _use_dense(obj, dim: int, cfg: Config) -> bool:
    if cfg.sensitivity == "diag" or not hasattr(obj, "hessian"):
        return False
    if cfg.sensitivity == "dense":
        return True
    return dim <= cfg.dense_max


def precompute(clients: Sequence[ClientRecord], config: Config) -> List[ClientRecord]:
    """Attach nominal sensitivities, inductances and initial responses.

    Flows are reset to zero. The curvature subset of each client is drawn
    once from the experiment seed.
    """
    order = _check_clients(clients)
    x0 = order[0].x
    if any(not np.array_equal(c.x, x0) for c in order):
        raise ValueError("clients must start from a common state")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    for c in order:
        n = c.objective.n_samples
        if n > config.hessian_sample:
            c.sample = np.sort(rng.choice(n, config.hessian_sample, replace=False))
        else:
            c.sample = None
        c.dense = _use_dense(c.objective, c.dim, config)
        c.sensitivity = build_sensitivity(c, config.default_dt, c.sample)
        c.inductance = critical_inductance(c.sensitivity, config.L_override)
        c.I = np.zeros(c.dim)
        c.prev_I = np.zeros(c.dim)
        c.prev_x = c.x.copy()
        c.window = 0.0
        c.memory = None
        c.raw_response = None
        c.response = (np.eye(c.dim) if c.dense else np.ones(c.dim)) * config.default_dt
    return order


def _sampler(K: int, participation: float, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    m = max(1, int(round(participation * K)))

    def draw():
        if m >= K:
            return list(range(K))
        return sorted(int(i) for i in rng.choice(K, m, replace=False))

    return draw


def _update_response(c: ClientRecord, S: np.ndarray) -> None:
    """Loewner max with the previous window response, floored at 1/max(G)."""
    floor = 1.0 / float(np.max(c.sensitivity.diag))
    prev = c.raw_response
    if c.dense:
        R = S
        if prev is not None and prev.shape == S.shape:
            w, V = np.linalg.eigh(prev - S)
            R = S + (V * np.maximum(w, 0.0)) @ V.T
        w, V = np.linalg.eigh(0.5 * (R + R.T))
        R = (V * np.maximum(w, floor)) @ V.T
    else:
        R = S if prev is None or prev.shape != S.shape else np.maximum(S, prev)
        R = np.maximum(R, floor)
    c.raw_response = S
    c.response = R


def _finite_state(x, bound: float) -> bool:
    return bool(np.all(np.isfinite(x))) and max_abs(x) <= bound


def run_fedecado(clients: Sequence[ClientRecord], config: Config,
                 on_round: Optional[Callable[[RoundReport], None]] = None,
                 precomputed: bool = False) -> RunResult:
    """Run rounds until the state is stationary or ``max_rounds`` is reached.

    The run stops once both the central update and every client's movement
    stay below ``stop_tol`` for ``ceil(1 / participation)`` consecutive
    rounds. Clients are modified in place.
    """
    order = list(clients) if precomputed else precompute(clients, config)
    order = _check_clients(order)
    K = len(order)
    cfg = config
    central = CentralState(order[0].x.copy(), 0.0, cfg.default_dt, 0)
    draw = _sampler(K, cfg.participation, cfg.seed)
    patience = int(math.ceil(1.0 / cfg.participation - 1e-12))
    calm = 0
    reports: List[RoundReport] = []
    result = RunResult(central.x_c, reports)
    for r in range(cfg.max_rounds):
        t0 = time.perf_counter()
        active = [order[k] for k in draw()]
        client_dts: Dict[int, List[float]] = {}
        move = 0.0
        bad = False
        for c in active:
            res = client_local_round(c, cfg.gamma, cfg)
            client_dts[c.id] = res.dts
            move = max(move, max_abs(res.x_final - c.x))
            c.prev_x = c.x
            c.prev_t = central.clock
            c.x = res.x_final
            c.window = res.T
            c.memory = res.memory
            c.grad_evals += res.grad_evals
            result.grad_evals += res.grad_evals
            if not _finite_state(c.x, cfg.divergence_bound):
                bad = True
                break
            _update_response(c, res.response)
        if bad:
            result.diverged, result.reason = True, f"client state blew up in round {r}"
            break
        for c in order:
            c.prev_I = c.I.copy()
        agg = aggregate_round(central, order, [c.id for c in active], cfg.gamma, cfg)
        dxc = max_abs(agg.central.x_c - central.x_c)
        central = agg.central
        for c, flow in zip(order, agg.flows):
            c.I = np.array(flow)
        x_c = central.x_c
        report = RoundReport(
            round=r,
            global_loss=global_loss(order, x_c) if _finite_state(x_c, math.inf) else math.inf,
            global_accuracy=global_accuracy(order, x_c) if _finite_state(x_c, math.inf) else None,
            dx_c_norm=dxc,
            max_IL_norm=max(max_abs(c.I) for c in order),
            client_dts=client_dts,
            server_dts=[s.dt for s in agg.steps],
            wall_ms=int(round(1000 * (time.perf_counter() - t0))),
            movement=max(move, dxc),
            grad_evals=result.grad_evals,
        )
        reports.append(report)
        if on_round is not None:
            on_round(report)
        result.x_c = x_c
        if agg.status == kernels.STATUS_DIVERGED or not _finite_state(x_c, cfg.divergence_bound):
            result.diverged, result.reason = True, f"central state blew up in round {r}"
            break
        if agg.status == kernels.STATUS_SUBSTEPS:
            result.diverged, result.reason = True, f"server step limit hit in round {r}"
            break
        if dxc < cfg.stop_tol and move < cfg.stop_tol:
            calm += 1
            if calm >= patience:
                result.converged, result.reason = True, "stationary"
                break
        else:
            calm = 0
    else:
        result.reason = "max_rounds"
    return result


def run_baseline(clients: Sequence[ClientRecord], spec: BaselineSpec, config: Config,
                 on_round: Optional[Callable[[RoundReport], None]] = None) -> RunResult:
    """FedAvg, FedAdam or FedAdaGrad with ``epochs`` local GD steps per client."""
    order = _check_clients(clients)
    cfg = config
    x = order[0].x.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    draw = _sampler(len(order), cfg.participation, cfg.seed)
    patience = int(math.ceil(1.0 / cfg.participation - 1e-12))
    calm = 0
    reports: List[RoundReport] = []
    result = RunResult(x, reports)
    lr = spec.client_lr
    for r in range(cfg.max_rounds):
        t0 = time.perf_counter()
        active = [order[k] for k in draw()]
        wsum = sum(c.weight for c in active)
        delta = np.zeros_like(x)
        bad = False
        with np.errstate(over="ignore", invalid="ignore"):
            for c in active:
                y = x.copy()
                for _ in range(c.epochs):
                    y = y - lr * c.objective.grad(y)
                    if not _finite_state(y, cfg.divergence_bound):
                        bad = True
                        break
                c.grad_evals += c.epochs
                result.grad_evals += c.epochs
                if bad:
                    break
                delta += (c.weight / wsum) * (y - x)
        if bad:
            result.diverged, result.reason = True, f"client state blew up in round {r}"
            break
        if spec.kind == "fedavg":
            step = spec.server_lr * delta
        else:
            m = spec.beta1 * m + (1.0 - spec.beta1) * delta
            if spec.kind == "fedadam":
                v = spec.beta2 * v + (1.0 - spec.beta2) * delta ** 2
            else:
                v = v + delta ** 2
            step = spec.server_lr * m / (np.sqrt(v) + spec.eps)
        x_new = x + step
        dxc = max_abs(x_new - x)
        x = x_new
        ok = _finite_state(x, cfg.divergence_bound)
        report = RoundReport(
            round=r,
            global_loss=global_loss(order, x) if ok else math.inf,
            global_accuracy=global_accuracy(order, x) if ok else None,
            dx_c_norm=dxc,
            max_IL_norm=0.0,
            client_dts={c.id: [lr] * c.epochs for c in active},
            server_dts=[],
            wall_ms=int(round(1000 * (time.perf_counter() - t0))),
            movement=dxc,
            grad_evals=result.grad_evals,
        )
        reports.append(report)
        if on_round is not None:
            on_round(report)
        result.x_c = x
        if not ok:
            result.diverged, result.reason = True, f"central state blew up in round {r}"
            break
        if dxc < cfg.stop_tol:
            calm += 1
            if calm >= patience:
                result.converged, result.reason = True, "stationary"
                break
        else:
            calm = 0
    else:
        result.reason = "max_rounds"
    return result
