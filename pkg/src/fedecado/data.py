"""Datasets, non-IID partitioning, epoch budgets and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

__all__ = [
    "Dataset",
    "PartitionPlan",
    "QuadraticEnsemble",
    "dirichlet_partition",
    "partition_weights",
    "partition_stats",
    "sample_epochs",
    "make_synthetic",
    "load_csv",
    "write_csv",
]


@dataclass
class Dataset:
    """Feature matrix plus labels.

    Classification labels are integers in ``[0, class_count)``. Regression
    data uses real labels and ``class_count == 0``.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels).reshape(-1)
        n = self.features.shape[0]
        if n < 1 or self.labels.size != n:
            raise ValueError("dataset needs n >= 1 rows and one label per row")
        if self.class_count > 0:
            if not np.all(np.mod(self.labels, 1) == 0):
                raise ValueError("classification labels must be integers")
            self.labels = self.labels.astype(np.int64)
            if self.labels.min() < 0 or self.labels.max() >= self.class_count:
                raise ValueError(f"labels must lie in [0, {self.class_count})")
        else:
            self.labels = self.labels.astype(np.float64)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


@dataclass
class PartitionPlan:
    assignments: List[np.ndarray]
    alpha: float
    seed: int

    @property
    def sizes(self) -> List[int]:
        return [len(a) for a in self.assignments]


@dataclass
class QuadraticEnsemble:
    """Per-client quadratic bowls ``(A_i, c_i)`` with data-size weights."""

    A: List[np.ndarray]
    c: List[np.ndarray]
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))


def dirichlet_partition(ds: Dataset, clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Class-wise Dirichlet label-skew split.

    For every class, proportions over clients are drawn from
    ``Dir(alpha)`` and that class's shuffled indices are cut accordingly.
    A client left empty takes one sample from the current largest client.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if clients < 1:
        raise ValueError("clients must be >= 1")
    if clients > ds.n:
        raise ValueError(f"cannot split {ds.n} samples across {clients} clients")
    rng = np.random.default_rng(seed)
    groups = np.unique(ds.labels) if ds.class_count > 0 else [None]
    parts: List[List[int]] = [[] for _ in range(clients)]
    for g in groups:
        idx = np.flatnonzero(ds.labels == g) if g is not None else np.arange(ds.n)
        rng.shuffle(idx)
        prop = rng.dirichlet(np.full(clients, float(alpha)))
        cuts = (np.cumsum(prop) * idx.size).astype(np.int64)[:-1]
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(int(i) for i in chunk)
    for k in range(clients):
        if not parts[k]:
            donor = max(range(clients), key=lambda j: (len(parts[j]), -j))
            parts[k].append(parts[donor].pop())
    return PartitionPlan([np.array(sorted(p), dtype=np.int64) for p in parts], float(alpha), int(seed))


def partition_weights(plan: PartitionPlan) -> np.ndarray:
    """``p_i = |D_i| / n``; the last entry absorbs rounding so the sum is 1."""
    sizes = np.asarray(plan.sizes, dtype=np.float64)
    w = sizes / sizes.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return w


def partition_stats(ds: Dataset, plan: PartitionPlan) -> List[Dict]:
    out = []
    for k, idx in enumerate(plan.assignments):
        row = {"client": k, "size": int(len(idx))}
        if ds.class_count > 0:
            row["hist"] = np.bincount(ds.labels[idx], minlength=ds.class_count).astype(int).tolist()
        out.append(row)
    return out


def sample_epochs(clients: int, lo: int = 1, hi: int = 50, seed: int = 0) -> np.ndarray:
    if lo < 1:
        raise ValueError("lo must be >= 1")
    if hi < lo:
        raise ValueError("hi must be >= lo")
    if clients < 1:
        raise ValueError("clients must be >= 1")
    return np.random.default_rng(seed).integers(lo, hi + 1, size=clients)


def _blobs(p: dict, rng) -> Dataset:
    n = int(p.get("n_samples", 800))
    f = int(p.get("n_features", 4))
    C = int(p.get("classes", 2))
    sep = float(p.get("separation", 1.0))
    noise = float(p.get("noise", 1.2))
    if n < 1 or f < 1 or C < 2 or noise < 0:
        raise ValueError("gaussian-blobs needs n_samples >= 1, n_features >= 1, classes >= 2, noise >= 0")
    if C == 2:
        means = np.stack([np.full(f, -sep), np.full(f, sep)])
    else:
        means = rng.normal(size=(C, f)) * sep
    y = rng.integers(0, C, n)
    X = means[y] + noise * rng.normal(size=(n, f))
    return Dataset(X, y, C)


def _quadratics(p: dict, rng) -> QuadraticEnsemble:
    K = int(p.get("clients", 4))
    d = int(p.get("dim", 4))
    spread = float(p.get("spread", 1.0))
    cond = float(p.get("cond", 1.0))
    center = float(p.get("center_scale", 1.0))
    shared = bool(p.get("shared_basis", True))
    n = int(p.get("n_samples", 1000))
    alpha = float(p.get("alpha", 1.0))
    if K < 1 or d < 1 or spread < 1 or cond < 1 or center < 0 or n < K or alpha <= 0:
        raise ValueError("quadratic-ensemble parameters out of range")

    def base():
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        ev = np.exp(np.linspace(0.0, math.log(cond), d))
        B = (Q * ev) @ Q.T
        return 0.5 * (B + B.T)

    B0 = base()
    scales = spread ** (np.arange(K) / max(K - 1, 1))
    As = [s * (B0 if shared else base()) for s in scales]
    cs = [center * rng.normal(size=d) for _ in range(K)]
    sizes = 1 + rng.multinomial(n - K, rng.dirichlet(np.full(K, alpha)))
    w = sizes / sizes.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return QuadraticEnsemble(As, cs, w)


def make_synthetic(kind: str, params: Optional[dict] = None, seed: int = 0):
    """``"gaussian-blobs"`` returns a Dataset, ``"quadratic-ensemble"`` a QuadraticEnsemble.

    Quadratic curvature is ``s_i * B`` with ``s_i`` geometric from 1 to
    ``spread`` over the clients, so ``spread`` is the curvature ratio
    between the flattest and the stiffest client. ``cond`` is the
    condition number of ``B``.
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "gaussian-blobs":
        return _blobs(params, rng)
    if kind == "quadratic-ensemble":
        return _quadratics(params, rng)
    raise ValueError(f"unknown synthetic kind {kind!r}")


def _number(tok: str) -> Optional[float]:
    try:
        return float(tok)
    except ValueError:
        return None


def load_csv(path) -> Dataset:
    """Read a numeric CSV with the label in the last column.

    A first row containing any non-numeric cell is treated as a header.
    Integral labels give a classification dataset, anything else regression.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(t.strip() for t in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    if any(_number(t) is None for t in rows[0]):
        rows = rows[1:]
        start = 2
    else:
        start = 1
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise ValueError(f"{path}: need at least one feature column and a label")
    data = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {i + start} has {len(r)} fields, expected {width}")
        for j, tok in enumerate(r):
            v = _number(tok)
            if v is None:
                raise ValueError(f"{path}: row {i + start}, column {j + 1}: non-numeric value {tok!r}")
            data[i, j] = v
    X, y = data[:, :-1], data[:, -1]
    if np.all(np.mod(y, 1) == 0) and y.min() >= 0:
        return Dataset(X, y.astype(np.int64), int(y.max()) + 1)
    return Dataset(X, y, 0)


def write_csv(path, ds: Dataset, header: bool = True) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(ds.features.shape[1])] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [str(lab) if ds.class_count else repr(float(lab))])
