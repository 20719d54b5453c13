import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from fedecado.core import ClientRecord, Config
from fedecado.data import (Dataset, dirichlet_partition, load_csv, make_synthetic,
                           partition_stats, partition_weights, sample_epochs, write_csv)
from fedecado.federation import precompute
from fedecado.objectives import LogisticObjective, QuadraticObjective


def _labels(n=2000, C=4, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 2)), rng.integers(0, C, n), C)


def _max_share(ds, plan):
    shares = []
    for row in partition_stats(ds, plan):
        h = np.asarray(row["hist"], float)
        shares.append(h.max() / h.sum())
    return float(np.mean(shares))


def test_iid_limit():
    ds = _labels(8000)
    plan = dirichlet_partition(ds, 4, 1e6, seed=1)
    glob = np.bincount(ds.labels, minlength=4) / ds.n
    for row in partition_stats(ds, plan):
        h = np.asarray(row["hist"], float)
        assert np.max(np.abs(h / h.sum() - glob)) < 0.05


def test_small_alpha_gives_strong_skew():
    ds = _labels(1600, C=10)
    shares = [_max_share(ds, dirichlet_partition(ds, 16, 0.1, seed=s)) for s in range(100)]
    assert np.mean(shares) > 0.5


def test_skew_is_monotone_in_alpha():
    ds = _labels(1000, C=5)
    means = [np.mean([_max_share(ds, dirichlet_partition(ds, 8, a, s)) for s in range(100)])
             for a in (0.1, 1.0, 10.0)]
    assert means[0] > means[1] > means[2]


@settings(max_examples=40)
@given(st.integers(1, 20), st.floats(0.01, 100), st.integers(0, 10 ** 6))
def test_partition_is_exact_and_nonempty(K, alpha, seed):
    ds = _labels(60, C=3, seed=seed % 7)
    plan = dirichlet_partition(ds, K, alpha, seed)
    allidx = np.concatenate(plan.assignments)
    assert np.array_equal(np.sort(allidx), np.arange(ds.n))
    assert min(plan.sizes) >= 1
    w = partition_weights(plan)
    assert abs(w.sum() - 1.0) <= 4 * np.finfo(float).eps and np.all(w > 0)
    again = dirichlet_partition(ds, K, alpha, seed)
    assert all(np.array_equal(a, b) for a, b in zip(plan.assignments, again.assignments))


def test_partition_errors():
    ds = _labels(5)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 6, 1.0, 0)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 2, 0.0, 0)


def test_sample_epochs():
    assert np.all(sample_epochs(7, 5, 5, seed=3) == 5)
    e = sample_epochs(1000, seed=1)
    assert e.min() >= 1 and e.max() <= 50 and e.min() == 1 and e.max() == 50
    assert np.array_equal(sample_epochs(10, seed=9), sample_epochs(10, seed=9))
    with pytest.raises(ValueError):
        sample_epochs(3, 0, 5)


def test_identical_quadratic_clients():
    ens = make_synthetic("quadratic-ensemble", {"clients": 3, "dim": 3, "spread": 1.0,
                                                "center_scale": 0.0}, seed=2)
    for A, c in zip(ens.A[1:], ens.c[1:]):
        assert np.array_equal(A, ens.A[0]) and np.array_equal(c, ens.c[0])
    assert abs(ens.weights.sum() - 1) < 1e-15


def test_curvature_spread_reaches_sensitivities():
    ens = make_synthetic("quadratic-ensemble", {"clients": 4, "dim": 3, "spread": 10.0}, seed=0)
    cl = [ClientRecord(i, float(ens.weights[i]), QuadraticObjective(ens.A[i], ens.c[i]),
                       np.zeros(3), np.zeros(3)) for i in range(4)]
    cfg = Config()
    precompute(cl, cfg)
    # curvature part of the nominal conductance, per unit weight
    curv = [(c.sensitivity.diag - 1 / cfg.default_dt) / c.weight for c in cl]
    assert np.allclose(curv[-1] / curv[0], 10.0, rtol=1e-9)


def test_blobs_are_learnable_centrally():
    ds = make_synthetic("gaussian-blobs", {"separation": 2.0}, seed=0)
    obj = LogisticObjective(ds.features, ds.labels, l2=1e-3)
    x = minimize(obj.loss, np.zeros(5), jac=obj.grad, method="L-BFGS-B").x
    assert obj.accuracy(x) > 0.95


def test_synthetic_errors():
    with pytest.raises(ValueError):
        make_synthetic("mnist")
    with pytest.raises(ValueError):
        make_synthetic("gaussian-blobs", {"n_features": 0})
    with pytest.raises(ValueError):
        make_synthetic("quadratic-ensemble", {"dim": 0})


def test_csv_header_and_roundtrip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,0\n3,4,1\n5,6,1\n")
    ds = load_csv(p)
    assert ds.n == 3 and ds.class_count == 2
    rng = np.random.default_rng(0)
    orig = Dataset(rng.normal(size=(20, 3)), rng.normal(size=20), 0)
    write_csv(tmp_path / "r.csv", orig)
    back = load_csv(tmp_path / "r.csv")
    assert np.max(np.abs(back.features - orig.features)) < 1e-12
    assert np.max(np.abs(back.labels - orig.labels)) < 1e-12


def test_csv_errors_name_rows(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_csv(tmp_path / "e.csv")
    (tmp_path / "r.csv").write_text("1,2,0\n3,0\n")
    with pytest.raises(ValueError, match="row 2"):
        load_csv(tmp_path / "r.csv")
    (tmp_path / "n.csv").write_text("x,y\n1,0\nfoo,1\n")
    with pytest.raises(ValueError, match="row 3"):
        load_csv(tmp_path / "n.csv")
