import math

import numpy as np
import pytest

from fedecado.core import ClientRecord, Config
from fedecado.federation import (BaselineSpec, consensus_minimizer, global_loss, precompute,
                                 run_baseline, run_fedecado)
from fedecado.objectives import QuadraticObjective
from oracles import consensus

SCHEMA = {"round", "loss", "acc", "dxc", "max_il", "server_dts", "client_dts"}


def _quads(K=3, d=4, seed=0, epochs=None, scale=1.0):
    rng = np.random.default_rng(seed)
    As, cs = [], []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        As.append(scale * (Q * rng.uniform(0.5, 3.0, d)) @ Q.T)
        cs.append(rng.normal(size=d))
    p = rng.dirichlet(np.ones(K))
    p[-1] = 1.0 - p[:-1].sum()
    epochs = epochs or [int(e) for e in rng.integers(1, 20, K)]
    clients = [ClientRecord(i, float(p[i]), QuadraticObjective(As[i], cs[i]), np.zeros(d),
                            np.zeros(d), epochs=epochs[i]) for i in range(K)]
    return clients, As, cs, p


def test_precompute_examples():
    c = [ClientRecord(0, 1.0, QuadraticObjective([[2.0]], [0.0]), [0.0], [0.0])]
    precompute(c, Config())
    assert np.allclose(c[0].sensitivity.diag, [12.0])
    assert np.allclose(c[0].inductance, [1 / 576])
    precompute(c, Config(L_override=0.3))
    assert np.allclose(c[0].inductance, [0.3])


def test_identical_clients_get_identical_parameters():
    obj = QuadraticObjective(np.diag([1.0, 2.0]), [1.0, 0.0])
    cl = [ClientRecord(i, 0.25, obj, np.zeros(2), np.zeros(2)) for i in range(4)]
    precompute(cl, Config())
    for c in cl[1:]:
        assert np.array_equal(c.sensitivity.diag, cl[0].sensitivity.diag)
        assert np.array_equal(c.inductance, cl[0].inductance)


def test_weights_must_sum_to_one():
    obj = QuadraticObjective([[1.0]], [0.0])
    with pytest.raises(ValueError):
        run_fedecado([ClientRecord(0, 0.5, obj, [0.0], [0.0])], Config())


@pytest.mark.parametrize("seed", range(3))
def test_converges_to_weighted_consensus(seed):
    clients, As, cs, p = _quads(seed=seed)
    res = run_fedecado(clients, Config(gamma=1e-3))
    assert not res.diverged
    assert np.max(np.abs(res.x_c - consensus(As, cs, p))) < 1e-4
    assert np.allclose(consensus_minimizer(clients), consensus(As, cs, p))


def test_heterogeneous_epochs_still_converge():
    clients, As, cs, p = _quads(K=4, seed=5, epochs=[1, 50, 3, 25])
    res = run_fedecado(clients, Config(gamma=1e-3))
    assert np.max(np.abs(res.x_c - consensus(As, cs, p))) < 1e-4


def test_partial_participation_converges():
    clients, As, cs, p = _quads(K=4, seed=2)
    res = run_fedecado(clients, Config(gamma=1e-3, participation=0.5, max_rounds=800))
    assert not res.diverged
    assert np.max(np.abs(res.x_c - consensus(As, cs, p))) < 1e-3


def test_runs_are_deterministic_and_records_follow_schema():
    a = run_fedecado(_quads(seed=1)[0], Config(max_rounds=30))
    b = run_fedecado(_quads(seed=1)[0], Config(max_rounds=30))
    ra = [r.to_record() for r in a.reports]
    assert ra == [r.to_record() for r in b.reports]
    assert set(ra[0]) == SCHEMA and ra[0]["round"] == 0
    assert all(dt > 0 for r in ra for dt in r["server_dts"])


def test_global_loss_is_weighted_sum():
    clients, As, cs, p = _quads(seed=3)
    x = np.arange(4.0)
    ref = sum(pi * 0.5 * (x - c) @ A @ (x - c) for pi, A, c in zip(p, As, cs))
    assert math.isclose(global_loss(clients, x), ref, rel_tol=1e-12)


def test_fedavg_single_epoch_is_centralized_gradient_step():
    clients, As, cs, p = _quads(seed=4, epochs=[1, 1, 1])
    res = run_baseline(clients, BaselineSpec("fedavg", client_lr=0.05), Config(max_rounds=1))
    g = sum(pi * A @ (np.zeros(4) - c) for pi, A, c in zip(p, As, cs))
    assert np.allclose(res.x_c, -0.05 * g, atol=1e-14)


def test_fedavg_diverges_beyond_stability_limit():
    clients = [ClientRecord(0, 1.0, QuadraticObjective([[4.0]], [1.0]), [0.0], [0.0], epochs=5)]
    res = run_baseline(clients, BaselineSpec("fedavg", client_lr=0.6), Config(max_rounds=200))
    assert res.diverged
    ok = run_baseline(clients, BaselineSpec("fedavg", client_lr=0.4), Config(max_rounds=200))
    assert not ok.diverged and abs(ok.x_c[0] - 1.0) < 1e-6


@pytest.mark.parametrize("kind", ["fedadam", "fedadagrad"])
def test_adaptive_baselines(kind):
    frozen = run_baseline(_quads(seed=6)[0], BaselineSpec(kind, server_lr=0.0), Config(max_rounds=5))
    assert np.array_equal(frozen.x_c, np.zeros(4))
    clients, As, cs, p = _quads(seed=6)
    res = run_baseline(clients, BaselineSpec(kind, server_lr=0.1, client_lr=0.05),
                       Config(max_rounds=400))
    start = global_loss(clients, np.zeros(4))
    assert global_loss(clients, res.x_c) < start


def test_baseline_spec_validation():
    with pytest.raises(ValueError):
        BaselineSpec("sgd")
    with pytest.raises(ValueError):
        BaselineSpec(client_lr=0.0)
    with pytest.raises(ValueError):
        BaselineSpec(beta1=1.0)


def test_coupling_flows_balance_local_gradients_at_consensus():
    clients, As, cs, p = _quads(K=3, seed=8)
    res = run_fedecado(clients, Config(gamma=1e-3))
    x_star = consensus(As, cs, p)
    flows = np.array([c.I for c in sorted(clients, key=lambda c: c.id)])
    # each branch carries its own weighted gradient; the flows only cancel in sum
    for c, I, A, cc, pi in zip(clients, flows, As, cs, p):
        assert np.max(np.abs(I - pi * A @ (x_star - cc))) < 1e-4
    assert np.max(np.abs(flows.sum(axis=0))) < 1e-6
    assert np.max(np.abs(flows)) > 1e-2
