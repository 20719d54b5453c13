"""Experiment configuration, execution, sweeps and the usable-rate metric.

A config is one flat JSON object. Keys are validated against the chosen
method: FedECADO has a single accuracy knob (``gamma``) and no learning
rates, while the baselines take learning rates and no ``gamma``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .core import ClientRecord, Config
from .data import (Dataset, PartitionPlan, dirichlet_partition, load_csv, make_synthetic,
                   partition_stats, partition_weights, sample_epochs)
from .federation import BaselineSpec, RunResult, global_loss, run_baseline, run_fedecado
from .objectives import LogisticObjective, MLPObjective, QuadraticObjective

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Problem",
    "ExperimentOutcome",
    "parse_config",
    "build_problem",
    "run_experiment",
    "sweep",
    "sweep_values",
    "usable_rate",
    "USABLE_THRESHOLD",
    "METHODS",
]

USABLE_THRESHOLD = 0.8
METHODS = ("fedecado", "fedavg", "fedadam", "fedadagrad")
DATASETS = ("gaussian-blobs", "quadratic-ensemble", "csv")
OBJECTIVES = ("quadratic", "logistic", "mlp")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _num(lo=None, hi=None, lo_open=False, integer=False):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        if integer and not float(v).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ConfigError(f"{key}: must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and v > hi:
            raise ConfigError(f"{key}: must be <= {hi}, got {v!r}")
        return int(v) if integer else float(v)
    return check


def _choice(*options):
    def check(key, v):
        if v not in options:
            raise ConfigError(f"{key}: must be one of {list(options)}, got {v!r}")
        return v
    return check


def _str(key, v):
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{key}: expected a nonempty string")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{key}: expected true or false")
    return v


def _int_list(key, v):
    if not isinstance(v, list) or not v or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 1 for t in v):
        raise ConfigError(f"{key}: expected a nonempty list of positive integers")
    return list(v)


def _optional(check):
    def wrapped(key, v):
        return None if v is None else check(key, v)
    return wrapped


def _values(key, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key}: expected a nonempty list")
    return list(v)


def _logrange(key, v):
    if (not isinstance(v, list) or len(v) != 3 or not all(isinstance(t, (int, float)) for t in v)
            or not (v[0] > 0 and v[1] > 0) or int(v[2]) != v[2] or v[2] < 1):
        raise ConfigError(f"{key}: expected [lo, hi, count] with lo, hi > 0 and count >= 1")
    return [float(v[0]), float(v[1]), int(v[2])]


_DEFAULT = Config()

COMMON: Dict[str, tuple] = {
    "method": (None, _choice(*METHODS)),
    "dataset": (None, _choice(*DATASETS)),
    "csv_path": (None, _optional(_str)),
    "objective": (None, _optional(_choice(*OBJECTIVES))),
    "n_samples": (None, _optional(_num(1, integer=True))),
    "n_features": (4, _num(1, integer=True)),
    "classes": (2, _num(2, integer=True)),
    "separation": (1.0, _num(0)),
    "noise": (1.2, _num(0)),
    "dim": (4, _num(1, integer=True)),
    "spread": (1.0, _num(1)),
    "cond": (1.0, _num(1)),
    "center_scale": (1.0, _num(0)),
    "shared_basis": (True, _bool),
    "clients": (8, _num(1, integer=True)),
    "alpha": (0.1, _num(0, lo_open=True)),
    "epochs": (None, _optional(_int_list)),
    "epochs_lo": (1, _num(1, integer=True)),
    "epochs_hi": (50, _num(1, integer=True)),
    "l2": (1e-2, _num(0)),
    "hidden": ([8], _int_list),
    "fit_intercept": (True, _bool),
    "seed": (_DEFAULT.seed, _num(integer=True)),
    "data_seed": (None, _optional(_num(integer=True))),
    "max_rounds": (_DEFAULT.max_rounds, _num(1, integer=True)),
    "stop_tol": (_DEFAULT.stop_tol, _num(0, lo_open=True)),
    "participation": (_DEFAULT.participation, _num(0, 1, lo_open=True)),
    "divergence_bound": (_DEFAULT.divergence_bound, _num(0, lo_open=True)),
    "output": (None, _optional(_str)),
    "sweep_param": (None, _optional(_str)),
    "sweep_values": (None, _optional(_values)),
    "sweep_logrange": (None, _optional(_logrange)),
    "usable_threshold": (USABLE_THRESHOLD, _num(0, 1, lo_open=True)),
}

FEDECADO_KEYS: Dict[str, tuple] = {
    "gamma": (_DEFAULT.gamma, _num(0, lo_open=True)),
    "default_dt": (_DEFAULT.default_dt, _num(0, lo_open=True)),
    "max_backtracks": (_DEFAULT.max_backtracks, _num(0, integer=True)),
    "L_override": (None, _optional(_num(0, lo_open=True))),
    "max_dt": (_DEFAULT.max_dt, _num(0, lo_open=True)),
    "growth": (_DEFAULT.growth, _num(1)),
    "alignment": (_DEFAULT.alignment, _choice("hold", "interpolate")),
    "sensitivity": (_DEFAULT.sensitivity, _choice("auto", "dense", "diag")),
    "dense_max": (_DEFAULT.dense_max, _num(1, integer=True)),
    "hessian_sample": (_DEFAULT.hessian_sample, _num(1, integer=True)),
    "max_substeps": (_DEFAULT.max_substeps, _num(1, integer=True)),
}

BASELINE_KEYS: Dict[str, tuple] = {
    "server_lr": (1.0, _num(0)),
    "client_lr": (0.01, _num(0, lo_open=True)),
    "beta1": (0.9, _num(0, 1)),
    "beta2": (0.99, _num(0, 1)),
    "eps": (1e-3, _num(0, lo_open=True)),
}


def _schema(method: str) -> Dict[str, tuple]:
    extra = FEDECADO_KEYS if method == "fedecado" else BASELINE_KEYS
    return {**COMMON, **extra}


@dataclass
class ExperimentConfig:
    """Validated flat settings with every default filled in."""

    values: Dict[str, Any]
    source: Optional[Path] = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def method(self) -> str:
        return self.values["method"]

    def run_config(self) -> Config:
        v = self.values
        kw = {k: v[k] for k in ("seed", "max_rounds", "stop_tol", "participation", "divergence_bound")}
        if self.method == "fedecado":
            kw.update({k: v[k] for k in FEDECADO_KEYS})
        return Config(**kw)

    def baseline_spec(self) -> Optional[BaselineSpec]:
        if self.method == "fedecado":
            return None
        v = self.values
        return BaselineSpec(self.method, v["server_lr"], v["client_lr"], v["beta1"], v["beta2"], v["eps"])

    def with_value(self, key: str, value: Any) -> "ExperimentConfig":
        raw = {k: v for k, v in self.values.items()}
        raw[key] = value
        return validate_config(raw, self.source)

    def output_dir(self) -> Optional[Path]:
        out = self.values.get("output")
        if out is None:
            if self.source is None:
                return None
            return self.source.parent / f"{self.source.stem}_out"
        p = Path(out)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def validate_config(raw: Dict[str, Any], source: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for req in ("method", "dataset"):
        if req not in raw:
            raise ConfigError(f"{req}: required key missing")
    method = _choice(*METHODS)("method", raw["method"])
    schema = _schema(method)
    unknown = sorted(k for k in raw if k not in schema)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key for method {method!r}")
    values: Dict[str, Any] = {}
    for key, (default, check) in schema.items():
        values[key] = check(key, raw[key]) if key in raw else default
    if values["dataset"] == "csv" and not values["csv_path"]:
        raise ConfigError("csv_path: required when dataset is 'csv'")
    if values["epochs_hi"] < values["epochs_lo"]:
        raise ConfigError("epochs_hi: must be >= epochs_lo")
    if values["epochs"] is not None and len(values["epochs"]) != values["clients"]:
        raise ConfigError("epochs: need one entry per client")
    if values["objective"] is None:
        values["objective"] = "quadratic" if values["dataset"] == "quadratic-ensemble" else "logistic"
    if (values["dataset"] == "quadratic-ensemble") != (values["objective"] == "quadratic"):
        raise ConfigError("objective: quadratic objectives go with the quadratic-ensemble dataset only")
    if values["sweep_values"] is not None and values["sweep_logrange"] is not None:
        raise ConfigError("sweep_values: give either sweep_values or sweep_logrange, not both")
    if values["sweep_param"] is not None:
        if values["sweep_param"] not in schema or values["sweep_param"].startswith("sweep_"):
            raise ConfigError(f"sweep_param: {values['sweep_param']!r} is not a sweepable key")
        if values["sweep_values"] is None and values["sweep_logrange"] is None:
            raise ConfigError("sweep_values: a sweep needs sweep_values or sweep_logrange")
    try:
        ExperimentConfig(values).run_config()
        ExperimentConfig(values).baseline_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(values, source)


def parse_config(path: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    """Load and validate a JSON config file (or an already-parsed dict)."""
    if isinstance(path, dict):
        return validate_config(dict(path))
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return validate_config(raw, p)


def _seed(cfg: ExperimentConfig, tag: int) -> int:
    """Independent integer seed per pipeline stage (data, partition, epochs, init)."""
    base = cfg["data_seed"] if cfg["data_seed"] is not None and tag < 3 else cfg["seed"]
    return int(np.random.SeedSequence([int(base) & 0xFFFFFFFF, tag]).generate_state(1)[0])


@dataclass
class Problem:
    clients: List[ClientRecord]
    dataset: Optional[Dataset] = None
    plan: Optional[PartitionPlan] = None

    @property
    def x0(self) -> np.ndarray:
        return self.clients[0].x.copy()


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    v = cfg.values
    if v["dataset"] == "csv":
        path = Path(v["csv_path"])
        if not path.is_absolute() and cfg.source is not None:
            path = cfg.source.parent / path
        return load_csv(path)
    params = {k: v[k] for k in ("n_features", "classes", "separation", "noise")}
    params["n_samples"] = v["n_samples"] or 800
    return make_synthetic("gaussian-blobs", params, _seed(cfg, 1))


def build_problem(cfg: ExperimentConfig) -> Problem:
    v = cfg.values
    K = v["clients"]
    if v["epochs"] is not None:
        epochs = list(v["epochs"])
    else:
        epochs = sample_epochs(K, v["epochs_lo"], v["epochs_hi"], _seed(cfg, 3)).tolist()
    if v["dataset"] == "quadratic-ensemble":
        params = {k: v[k] for k in ("clients", "dim", "spread", "cond", "center_scale", "shared_basis", "alpha")}
        params["n_samples"] = v["n_samples"] or 1000
        ens = make_synthetic("quadratic-ensemble", params, _seed(cfg, 1))
        x0 = np.zeros(v["dim"])
        clients = [ClientRecord(i, float(ens.weights[i]), QuadraticObjective(ens.A[i], ens.c[i]),
                                x0, np.zeros_like(x0), epochs=int(epochs[i])) for i in range(K)]
        return Problem(clients)
    ds = load_dataset(cfg)
    plan = dirichlet_partition(ds, K, v["alpha"], _seed(cfg, 2))
    weights = partition_weights(plan)
    objs = []
    for idx in plan.assignments:
        sub = ds.subset(idx)
        if v["objective"] == "logistic":
            if ds.class_count != 2:
                raise ConfigError("objective: logistic needs exactly two classes")
            objs.append(LogisticObjective(sub.features, sub.labels, v["l2"], v["fit_intercept"]))
        else:
            if ds.class_count < 2:
                raise ConfigError("objective: mlp needs classification labels")
            objs.append(MLPObjective(sub.features, sub.labels, v["hidden"], ds.class_count, v["l2"]))
    x0 = objs[0].init_params(np.random.default_rng(_seed(cfg, 4)))
    clients = [ClientRecord(i, float(weights[i]), objs[i], x0, np.zeros_like(x0), epochs=int(epochs[i]))
               for i in range(K)]
    return Problem(clients, ds, plan)


@dataclass
class ExperimentOutcome:
    status: int
    summary: Dict[str, Any]
    result: RunResult
    lines: List[str] = field(repr=False, default_factory=list)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> ExperimentOutcome:
    """Run one experiment; write ``rounds.jsonl`` and ``summary.json`` when ``out_dir`` is set.

    Status is 0 on success and 2 when the run diverged.
    """
    problem = build_problem(cfg)
    run_cfg = cfg.run_config()
    initial = global_loss(problem.clients, problem.x0)
    spec = cfg.baseline_spec()
    if spec is None:
        result = run_fedecado(problem.clients, run_cfg)
    else:
        result = run_baseline(problem.clients, spec, run_cfg)
    lines = [_dumps(r.to_record()) for r in result.reports]
    last = result.reports[-1].to_record() if result.reports else None
    summary = {
        "final_loss": last["loss"] if last else None,
        "final_acc": last["acc"] if last else None,
        "rounds": len(result.reports),
        "diverged": bool(result.diverged),
        "usable_threshold": cfg["usable_threshold"],
        "method": cfg.method,
        "converged": bool(result.converged),
        "initial_loss": initial,
        "grad_evals": int(result.grad_evals),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rounds.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return ExperimentOutcome(2 if result.diverged else 0, summary, result, lines)


def usable_rate(final_metrics, threshold: float = USABLE_THRESHOLD) -> float:
    """Fraction of entries at or above ``threshold * max(entries)``."""
    vals = [float(v) for v in final_metrics]
    if not vals:
        raise ValueError("usable_rate needs at least one value")
    best = max(vals)
    cut = threshold * best
    return sum(1 for v in vals if v >= cut) / len(vals)


def sweep_values(cfg: ExperimentConfig) -> List[Any]:
    if cfg["sweep_values"] is not None:
        return list(cfg["sweep_values"])
    if cfg["sweep_logrange"] is not None:
        lo, hi, n = cfg["sweep_logrange"]
        return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n)]
    raise ConfigError("sweep_values: config has no sweep")


def _scores(rows: List[Dict[str, Any]]) -> None:
    """Attach a higher-is-better score to each row.

    Classification runs score by final accuracy. Loss-only runs score by
    progress ``(f0 - f) / (f0 - f_best)`` relative to the best finished
    run. Diverged or failed runs score 0.
    """
    ok = [r for r in rows if not r["diverged"] and r.get("error") is None and r["final_loss"] is not None]
    classify = any(r["final_acc"] is not None for r in ok)
    if classify:
        for r in rows:
            r["score"] = r["final_acc"] if r in ok and r["final_acc"] is not None else 0.0
        return
    best = min((r["final_loss"] for r in ok), default=None)
    for r in rows:
        if r not in ok or best is None:
            r["score"] = 0.0
            continue
        gain = r["initial_loss"] - best
        if gain <= 0:
            r["score"] = 1.0
        else:
            r["score"] = max(0.0, (r["initial_loss"] - r["final_loss"]) / gain)


def _sweep_usable(scores: List[float], threshold: float) -> float:
    # a sweep where nothing finished has no usable run even though 0 >= 0.8 * 0
    if max(scores) <= 0:
        return 0.0
    return usable_rate(scores, threshold)


def sweep(cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Run one experiment per sweep value and collate the outcomes.

    Failures are recorded per row and do not stop the sweep.
    """
    param = cfg["sweep_param"]
    if param is None:
        raise ConfigError("sweep_param: config has no sweep")
    rows: List[Dict[str, Any]] = []
    for k, value in enumerate(sweep_values(cfg)):
        row: Dict[str, Any] = {"value": value, "final_loss": None, "final_acc": None,
                               "diverged": False, "rounds": 0, "initial_loss": None, "error": None}
        try:
            sub = cfg.with_value(param, value)
            sub_out = None if out_dir is None else Path(out_dir) / f"run_{k:03d}"
            outcome = run_experiment(sub, sub_out)
            s = outcome.summary
            row.update(final_loss=s["final_loss"], final_acc=s["final_acc"], diverged=s["diverged"],
                       rounds=s["rounds"], initial_loss=s["initial_loss"])
        except Exception as exc:  # recorded, sweep continues
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    _scores(rows)
    table = {
        "param": param,
        "rows": rows,
        "usable_rate": _sweep_usable([r["score"] for r in rows], cfg["usable_threshold"]),
        "usable_threshold": cfg["usable_threshold"],
    }
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return table


def partition_report(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    """Per-client sizes and class histograms for the configured partition."""
    problem = build_problem(cfg)
    if problem.dataset is None:
        return [{"client": c.id, "size": None, "weight": c.weight} for c in problem.clients]
    rows = partition_stats(problem.dataset, problem.plan)
    for row, c in zip(rows, problem.clients):
        row["weight"] = c.weight
        row["epochs"] = c.epochs
    return rows
