"""Adaptive Forward-Euler simulation of one client's local window.

Each client integrates ``x' = I - p grad f(x)`` with its coupling flow
``I`` frozen for the whole round. Every step starts from a curvature
bound estimated by a secant of the weighted gradient, takes half of it
(capped at ``max_dt``) and then shrinks until the local truncation error
estimate is within ``gamma``.

Alongside the state, the window response ``S = d x_end / d I`` is
propagated through the same steps. The server uses it as the client's
series resistance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import ClientRecord, Config, StepMemory, as_param, max_abs

__all__ = [
    "ClientStepTrace",
    "LocalRoundResult",
    "secant_bound",
    "fe_stability_bound",
    "fe_lte",
    "select_client_step",
    "client_local_round",
]

_LTE_SLACK = 1e-12


@dataclass(frozen=True)
class ClientStepTrace:
    dt_used: float
    lte: float
    backtracks: int
    grad_evals: int
    exhausted: bool = False


@dataclass
class LocalRoundResult:
    x_final: np.ndarray
    T: float
    traces: List[ClientStepTrace]
    response: np.ndarray
    memory: StepMemory
    grad_evals: int

    @property
    def dts(self) -> List[float]:
        return [t.dt_used for t in self.traces]


def secant_bound(dx: np.ndarray, dg: np.ndarray) -> Optional[float]:
    """``2 dx.dg / dg.dg``, or None when the pair carries no usable curvature."""
    den = float(dg @ dg)
    if not den > 1e-24 * max(1.0, float(dx @ dx)):
        return None
    b = 2.0 * float(dx @ dg) / den
    if not (b > 0 and np.isfinite(b)):
        return None
    return b


def fe_stability_bound(x, rhs, default_dt: float = 0.1) -> float:
    """``2 x.rhs / rhs.rhs`` when positive and finite, else ``default_dt``."""
    b = secant_bound(as_param(x), as_param(rhs))
    return default_dt if b is None else b


def fe_lte(dt: float, rhs_now, rhs_prev) -> float:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return 0.5 * dt * max_abs(np.asarray(rhs_now) - np.asarray(rhs_prev))


def select_client_step(dt_init: float, rhs_now, rhs_prev, gamma: float,
                       max_backtracks: int = 30):
    """Shrink ``dt_init`` until the LTE estimate is within ``gamma``.

    Returns ``(dt, trace)``. When the backtrack budget runs out the last
    trial is returned with ``trace.exhausted`` set.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if not dt_init > 0:
        raise ValueError("dt_init must be > 0")
    dt = float(dt_init)
    lte = fe_lte(dt, rhs_now, rhs_prev)
    backtracks = 0
    while lte > gamma * (1.0 + _LTE_SLACK) and backtracks < max_backtracks:
        dt *= min(1.0, max(1e-6, gamma / lte))
        lte = fe_lte(dt, rhs_now, rhs_prev)
        backtracks += 1
    exhausted = lte > gamma * (1.0 + _LTE_SLACK)
    return dt, ClientStepTrace(dt, lte, backtracks, 0, exhausted)


def _symmetric_clip(S: np.ndarray, lo: float, hi: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.clip(w, lo, hi)) @ V.T


def client_local_round(client: ClientRecord, gamma: float, config: Optional[Config] = None,
                       batch=None) -> LocalRoundResult:
    """Run ``client.epochs`` adaptive FE steps with the coupling flow frozen.

    The client record is not modified; the caller commits the result.
    """
    cfg = config or Config(gamma=gamma)
    obj, p, I = client.objective, client.weight, client.I
    x = client.x.copy()
    n = x.size
    sample = client.sample

    g = p * obj.grad(x, batch)
    evals = 1
    rhs = g - I
    mem = client.memory
    if mem is None:
        xp = x - cfg.default_dt * rhs
        mem = StepMemory(xp, p * obj.grad(xp, batch), None)
        evals += 1
    last = mem.bound
    rhs_prev = rhs

    if client.dense:
        S = np.zeros((n, n))
        eye = np.eye(n)
    else:
        S = np.zeros(n)

    traces: List[ClientStepTrace] = []
    for k in range(client.epochs):
        b = secant_bound(x - mem.x, g - mem.g)
        if b is None:
            b = last if last is not None else cfg.default_dt
        else:
            last = b
        dt, tr = select_client_step(min(0.5 * b, cfg.max_dt), rhs, rhs_prev, gamma,
                                    cfg.max_backtracks)
        mem = StepMemory(x, g, last)

        if client.dense:
            H = p * obj.hessian(x, sample)
            S = (eye - dt * H) @ S + dt * eye
        else:
            h = p * obj.hessian_diag(x, sample)
            a = np.minimum(dt * h, 1.0)
            S = (1.0 - a) * S + a / h

        x = x - dt * rhs
        step_evals = 0
        if k + 1 < client.epochs:
            rhs_prev = rhs
            g = p * obj.grad(x, batch)
            rhs = g - I
            step_evals = 1
            evals += 1
        traces.append(ClientStepTrace(tr.dt_used, tr.lte, tr.backtracks, step_evals, tr.exhausted))

    dts = [t.dt_used for t in traces]
    T = float(sum(dts))
    lo = min(dts)
    if client.dense:
        S = _symmetric_clip(S, lo, T)
    else:
        S = np.clip(S, lo, T)
    return LocalRoundResult(x, T, traces, S, mem, evals)
