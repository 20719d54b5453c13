import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedecado.client import (client_local_round, fe_lte, fe_stability_bound, secant_bound,
                             select_client_step)
from fedecado.core import ClientRecord, Config
from fedecado.objectives import LogisticObjective, QuadraticObjective


def _quad_client(A, c, p=1.0, epochs=1, I=None, x=None, dense=True):
    A = np.atleast_2d(np.asarray(A, float))
    d = A.shape[0]
    x = np.zeros(d) if x is None else x
    I = np.zeros(d) if I is None else I
    cl = ClientRecord(0, p, QuadraticObjective(A, c), x, I, epochs=epochs)
    cl.dense = dense
    return cl


def test_stability_bound_examples():
    assert fe_stability_bound([1.0], [2.0]) == 1.0
    assert fe_stability_bound([1.0], [0.0], default_dt=0.1) == 0.1
    assert fe_stability_bound([-1.0], [2.0], default_dt=0.1) == 0.1
    assert secant_bound(np.ones(2), np.zeros(2)) is None


def test_fe_lte_examples():
    assert fe_lte(0.3, [1.0, 2.0], [1.0, 2.0]) == 0.0
    assert np.isclose(fe_lte(0.1, [3.0], [1.0]), 0.1)
    with pytest.raises(ValueError):
        fe_lte(0.0, [1.0], [1.0])


def test_select_step_examples():
    dt, tr = select_client_step(0.1, [3.0], [1.0], gamma=0.05)
    assert np.isclose(dt, 0.05) and tr.backtracks == 1 and not tr.exhausted
    dt, tr = select_client_step(0.1, [3.0], [1.0], gamma=0.2)
    assert dt == 0.1 and tr.backtracks == 0


def test_select_step_exhaustion_is_flagged():
    dt, tr = select_client_step(1.0, [1e9], [0.0], gamma=1e-6, max_backtracks=1)
    assert tr.exhausted and tr.backtracks == 1 and np.isclose(dt, 1e-6)


@given(st.floats(1e-3, 10), st.floats(1e-8, 1.0),
       st.lists(st.floats(-100, 100), min_size=1, max_size=4))
def test_select_step_meets_tolerance_on_linear_lte(dt0, gamma, diff):
    now = np.array(diff)
    dt, tr = select_client_step(dt0, now, np.zeros_like(now), gamma)
    assert tr.lte <= gamma * (1 + 1e-9)
    assert dt <= dt0


def test_single_step_arithmetic():
    cl = _quad_client([[1.0]], [1.0])
    res = client_local_round(cl, 1e-2, Config(max_dt=0.1))
    assert np.allclose(res.x_final, [0.1]) and np.isclose(res.T, 0.1)
    assert np.array_equal(cl.x, [0.0])


def test_balancing_flow_freezes_state():
    A, c = np.diag([2.0, 5.0]), np.array([1.0, -1.0])
    x = np.array([0.3, 0.7])
    p = 0.4
    I = p * A @ (x - c)
    res = client_local_round(_quad_client(A, c, p, epochs=20, I=I, x=x), 1e-2)
    assert np.array_equal(res.x_final, x)


def test_long_window_reaches_shifted_stationary_point():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    c = np.array([1.0, -2.0])
    I = np.array([0.2, -0.1])
    p = 0.5
    res = client_local_round(_quad_client(A, c, p, epochs=400, I=I), 1e-3)
    target = c + np.linalg.solve(A, I) / p
    assert np.max(np.abs(res.x_final - target)) < 1e-6


def test_accepted_steps_respect_tolerance_and_determinism():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    obj = LogisticObjective(X, rng.integers(0, 2, 40), l2=1e-2)
    cl = ClientRecord(0, 0.3, obj, np.zeros(4), rng.normal(size=4) * 0.1, epochs=30)
    a = client_local_round(cl, 1e-3)
    b = client_local_round(cl, 1e-3)
    assert np.array_equal(a.x_final, b.x_final) and a.dts == b.dts
    for tr in a.traces:
        assert tr.exhausted or tr.lte <= 1e-3 * (1 + 1e-9)
    assert a.T > 0


@given(st.floats(0.1, 10), st.floats(0.05, 1.0), st.integers(1, 30), st.floats(-3, 3))
def test_steps_stay_within_classical_stability_limit(lam, p, epochs, x0):
    cl = _quad_client([[lam]], [0.0], p=p, epochs=epochs, x=np.array([x0]))
    res = client_local_round(cl, 1e-2)
    assert all(dt <= 2.0 / (p * lam) * (1 + 1e-9) for dt in res.dts)


def test_window_response_matches_product_formula():
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    A = Q @ np.diag([0.5, 2.0, 6.0]) @ Q.T
    p = 0.6
    res = client_local_round(_quad_client(A, rng.normal(size=3), p, epochs=12), 1e-2)
    S = np.zeros((3, 3))
    for dt in res.dts:
        S = (np.eye(3) - dt * p * A) @ S + dt * np.eye(3)
    assert np.allclose(res.response, S, atol=1e-12)


def test_diagonal_response_for_diagonal_quadratic():
    A = np.diag([0.5, 4.0])
    p = 0.5
    res = client_local_round(_quad_client(A, [1.0, 1.0], p, epochs=8, dense=False), 1e-2)
    h = p * np.diag(A)
    s = np.zeros(2)
    for dt in res.dts:
        # per-coordinate step is clamped so the factor never goes negative
        a = np.minimum(dt * h, 1.0)
        s = (1 - a) * s + a / h
    assert np.allclose(res.response, np.clip(s, min(res.dts), res.T))
