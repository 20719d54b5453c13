"""Central-agent integration over one synchronized window.

The server holds ``x_c`` and every client's coupling flow ``I_i``::

    x_c'      = -sum_i I_i
    L_i I_i'  = x_c - Gamma_i(tau) - R_i (I_i - I_i^k)

where ``Gamma_i`` presents client ``i``'s reported trajectory on the server
clock, ``R_i`` is the client's series resistance (its window response) and
``I_i^k`` is the flow committed in the previous round. Backward Euler is
applied with a coordinatewise (or small dense) Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .core import CentralState, ClientRecord, Config, TrajectorySegment, as_param, max_abs

__all__ = [
    "AggregationStep",
    "RoundAggregate",
    "interpolate_state",
    "client_segments",
    "stack_clients",
    "inductor_drive",
    "be_step_solve",
    "be_lte",
    "select_server_step",
    "aggregate_round",
]


@dataclass(frozen=True)
class AggregationStep:
    dt: float
    lte_cap: float
    lte_ind: float
    backtracks: int
    exhausted: bool = False


@dataclass
class RoundAggregate:
    central: CentralState
    flows: np.ndarray
    steps: List[AggregationStep]
    status: int = kernels.STATUS_OK

    @property
    def diverged(self) -> bool:
        return self.status == kernels.STATUS_DIVERGED


def interpolate_state(seg: TrajectorySegment, tau: float) -> np.ndarray:
    """Linear interpolation (or extrapolation) of ``seg`` at time ``tau``."""
    return seg.x1 + seg.slope * (tau - seg.t1)


def _resistance(c: ClientRecord) -> np.ndarray:
    if c.response is not None:
        return np.asarray(c.response, dtype=np.float64)
    if c.sensitivity is None:
        raise ValueError(f"client {c.id} has neither a response nor a sensitivity")
    return 1.0 / c.sensitivity.diag


def stack_clients(clients: Sequence[ClientRecord]):
    """``(I, Ik, R, L)`` arrays in ascending client-id order.

    ``R`` is ``(K, d, d)`` if any client carries a dense response, else
    ``(K, d)``.
    """
    order = sorted(clients, key=lambda c: c.id)
    I = np.array([c.I for c in order])
    Ik = np.array([c.prev_I for c in order])
    if any(c.inductance is None for c in order):
        raise ValueError("every client needs an inductance before aggregation")
    L = np.array([c.inductance for c in order])
    Rs = [_resistance(c) for c in order]
    if any(r.ndim == 2 for r in Rs):
        R = np.array([r if r.ndim == 2 else np.diag(r) for r in Rs])
    else:
        R = np.array(Rs)
    return I, Ik, R, L


def inductor_drive(x_c, I, Ik, R, L, anchors) -> np.ndarray:
    """``(x_c - Gamma - R (I - I^k)) / L`` for every client."""
    dI = I - Ik
    RdI = np.einsum("kij,kj->ki", R, dI) if R.ndim == 3 else R * dI
    return (x_c[None, :] - anchors - RdI) / L


def _anchor_arrays(segments: Sequence[TrajectorySegment], t0: float):
    """Segments rewritten as ``gbase + gslope * (tau - t0)``."""
    gslope = np.array([s.slope for s in segments])
    gbase = np.array([s.x1 + s.slope * (t0 - s.t1) for s in segments])
    return gbase, gslope


def _solver(R):
    return kernels.be_solve_dense if R.ndim == 3 else kernels.be_solve_diag


def be_step_solve(central: CentralState, clients: Sequence[ClientRecord],
                  segments: Sequence[TrajectorySegment], dt: float):
    """One Backward-Euler step of the central system from ``central.clock``.

    ``segments`` are in the same ascending-id order as the clients.
    Returns ``(x_c_next, I_next)`` with ``I_next`` shaped ``(K, d)``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    I, Ik, R, L = stack_clients(clients)
    G1 = np.array([interpolate_state(s, central.clock + dt) for s in segments])
    return _solver(R)(central.x_c, I, Ik, R, L, G1, float(dt))


def be_lte(dt: float, I_now, I_next, drive_now=None, drive_next=None):
    """``(lte_cap, lte_ind)`` for a step of size ``dt``.

    The capacitor estimate uses the summed flows, the inductor estimate
    uses the branch right-hand sides ``drive`` (already divided by ``L``).
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    I_now = np.atleast_2d(I_now)
    I_next = np.atleast_2d(I_next)
    cap = 0.5 * dt * max_abs(I_now.sum(axis=0) - I_next.sum(axis=0))
    ind = 0.0
    if drive_now is not None and drive_next is not None:
        ind = 0.5 * dt * max_abs(np.asarray(drive_next) - np.asarray(drive_now))
    return cap, ind


def select_server_step(central: CentralState, clients: Sequence[ClientRecord],
                       segments: Sequence[TrajectorySegment], gamma: float, dt_init: float,
                       max_backtracks: int = 30):
    """Shrink-only step search from ``dt_init``.

    Returns ``(dt, step, (x_c_next, I_next))``.
    """
    if not gamma > 0 or not dt_init > 0:
        raise ValueError("gamma and dt_init must be > 0")
    I, Ik, R, L = stack_clients(clients)
    solve = _solver(R)
    t = central.clock
    drive0 = inductor_drive(central.x_c, I, Ik, R, L,
                            np.array([interpolate_state(s, t) for s in segments]))
    dt = float(dt_init)
    bt = 0
    while True:
        G1 = np.array([interpolate_state(s, t + dt) for s in segments])
        xn, In = solve(central.x_c, I, Ik, R, L, G1, dt)
        cap, ind = be_lte(dt, I, In, drive0, inductor_drive(xn, In, Ik, R, L, G1))
        e = max(cap, ind)
        if e <= gamma * (1.0 + 1e-12):
            return dt, AggregationStep(dt, cap, ind, bt), (xn, In)
        if bt >= max_backtracks:
            return dt, AggregationStep(dt, cap, ind, bt, True), (xn, In)
        dt *= min(1.0, max(1e-6, gamma / e))
        bt += 1


def client_segments(clients: Sequence[ClientRecord], active, t0: float, W: float,
                    alignment: str = "hold") -> List[TrajectorySegment]:
    """Server-clock trajectories for each client over the window ``[t0, t0 + W]``.

    Active clients report ``x`` after a window ``client.window`` that
    started from ``client.prev_x``. With ``"hold"`` the reported state is
    presented for the whole window; ``"interpolate"`` draws a line from the
    start state to the reported state and extrapolates past ``t0 + T_i``.
    Inactive clients are constant.
    """
    active = set(active)
    segs = []
    for c in sorted(clients, key=lambda c: c.id):
        if c.id in active and alignment == "interpolate" and c.window > 0:
            segs.append(TrajectorySegment(t0, t0 + c.window, as_param(c.prev_x), as_param(c.x)))
        else:
            segs.append(TrajectorySegment.constant(c.x, t0, t0 + max(W, 1e-300)))
    return segs


def aggregate_round(central: CentralState, clients: Sequence[ClientRecord], active,
                    gamma: float, config: Optional[Config] = None,
                    segments: Optional[Sequence[TrajectorySegment]] = None) -> RoundAggregate:
    """Integrate the central system from ``clock`` to ``clock + max active T``.

    After an accepted step the next trial grows by at most
    ``config.growth``; the final step is truncated to land on the window
    end. The returned state carries the next window's initial step in
    ``last_dt``. Clients are not modified.
    """
    cfg = config or Config(gamma=gamma)
    active = sorted(set(active))
    if not active:
        raise ValueError("aggregate_round needs at least one active client")
    by_id = {c.id: c for c in clients}
    missing = [i for i in active if i not in by_id]
    if missing:
        raise ValueError(f"unknown active client ids {missing}")
    W = max(by_id[i].window for i in active)
    if not W > 0:
        raise ValueError("active clients must report a positive window")
    t0 = central.clock
    if segments is None:
        segments = client_segments(clients, active, t0, W, cfg.alignment)
    I, Ik, R, L = stack_clients(clients)
    gbase, gslope = _anchor_arrays(segments, t0)
    xc, In, raw, next_dt, _, status = kernels.integrate_window(
        central.x_c, I, Ik, R, L, gbase, gslope, float(W), float(central.last_dt), float(gamma),
        float(cfg.growth), int(cfg.max_backtracks), int(cfg.max_substeps),
        float(cfg.divergence_bound))
    steps = [AggregationStep(float(r[0]), float(r[1]), float(r[2]), int(r[3]),
                             max(r[1], r[2]) > gamma * (1.0 + 1e-12)) for r in raw]
    new = CentralState(np.asarray(xc), t0 + W, float(next_dt), central.round + 1)
    return RoundAggregate(new, np.asarray(In), steps, int(status))
