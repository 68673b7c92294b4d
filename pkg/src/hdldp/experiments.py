"""Seeded experiment runners: MSE comparisons, framework validation, sweeps.

Trial ``t`` of an experiment draws all of its randomness from the substream
``(seed, key, t)``, so reports are reproducible and independent of how many
worker processes ran the trials.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats as sps

from . import collector, frequency, hdr4me
from .datasets import GeneratorConfig, generate, load_csv, normalize
from .errors import ConfigError, HDLDPError, TrialError
from .framework import (
    ValueDistribution,
    berry_esseen_bound,
    deviation_model,
    deviation_pdf,
    supremum_probability,
)
from .mechanisms import KINDS, MechanismSpec
from .numeric import exact_sum
from .seeding import check_seed, substream

# Second-level stream keys; dataset columns use the one-key streams (seed, j).
MEAN_TRIALS = 1
FREQ_TRIALS = 2


def mse(estimate, truth):
    """``(1/d) sum (est_j - true_j)^2``."""
    est = np.asarray(estimate, dtype=float).ravel()
    tru = np.asarray(truth, dtype=float).ravel()
    if est.shape != tru.shape or est.size == 0:
        raise ConfigError(f"length mismatch: {est.size} vs {tru.size}")
    return exact_sum((est - tru) ** 2) / est.size


def deviation_norm(estimate, truth):
    """Euclidean norm of the deviation, ``sqrt(d * mse)``."""
    return math.sqrt(np.size(estimate) * mse(estimate, truth))


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``dataset`` is a generator config dict; ``data_path`` a CSV of records
    (normalized per column on load). Exactly one must be set. ``m=None``
    means every user reports all dimensions.
    """

    dataset: dict | None = None
    data_path: str | None = None
    mechanism: str = "laplace"
    eps: float = 0.8
    m: int | None = None
    trials: int = 100
    seed: int = 0
    methods: list = field(default_factory=lambda: ["none", "l1", "l2"])
    kappa: float = 3.0
    clamp: float = 0.05
    apply_threshold: bool = True
    calibrate: bool = False
    bins: int = 50
    workers: int = 1
    dimension: int = 0
    hist_bins: int = 40
    out: str | None = None

    def __post_init__(self):
        if (self.dataset is None) == (self.data_path is None):
            raise ConfigError("set exactly one of 'dataset' and 'data_path'")
        if self.dataset is not None and not isinstance(self.dataset, dict):
            raise ConfigError("'dataset' must be a generator config object")
        if self.mechanism not in KINDS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}; expected one of {KINDS}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if int(self.trials) < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        self.trials = int(self.trials)
        self.seed = check_seed(self.seed)
        self.methods = list(self.methods)
        for meth in self.methods:
            if meth not in hdr4me.REGULARIZERS:
                raise ConfigError(f"unknown method {meth!r}; expected one of {hdr4me.REGULARIZERS}")
        if "none" not in self.methods:
            self.methods.insert(0, "none")
        if int(self.workers) < 1 or int(self.bins) < 1 or int(self.hist_bins) < 1:
            raise ConfigError("workers, bins and hist_bins must be at least 1")
        if self.m is not None and int(self.m) < 1:
            raise ConfigError(f"m must be at least 1, got {self.m}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def load_data(self):
        if self.dataset is not None:
            return generate(GeneratorConfig.from_dict(self.dataset))
        return normalize(load_csv(self.data_path))

    def resolve_m(self, d):
        m = d if self.m is None else int(self.m)
        if not 1 <= m <= d:
            raise ConfigError(f"m must satisfy 1 <= m <= d (d={d}), got {m}")
        return m


# Worker-side state, installed once per process to avoid pickling the data
# with every task.
_SHARED = {}


def _install(payload):
    _SHARED.clear()
    _SHARED.update(payload)


def _trial_mse(trial):
    cfg = _SHARED["config"]
    data, theta_bar, prior = _SHARED["data"], _SHARED["theta_bar"], _SHARED["prior"]
    n, d = data.shape
    m = cfg.resolve_m(d)
    spec = MechanismSpec.from_budget(cfg.mechanism, cfg.eps, m)
    try:
        agg = collector.collect(data, spec, m, substream(cfg.seed, MEAN_TRIALS, trial)).estimate()
        theta_hat = agg.theta_hat
        if cfg.calibrate:
            theta_hat = collector.calibrate(theta_hat, spec, prior, signed=True)
        r = np.maximum(agg.counts, 1)
        model = deviation_model(spec, prior if spec.bounded else None, r, d=d, signed=True)
        if cfg.calibrate:
            model.delta = np.zeros(d)
        out = {"mse": {}, "theta_hat": theta_hat, "theta_star": {}, "weights": {}, "gated": {}}
        for meth in cfg.methods:
            rc = hdr4me.RecalibrationConfig(meth, cfg.kappa, cfg.clamp, cfg.apply_threshold)
            res = hdr4me.recalibrate(theta_hat, model, rc)
            out["mse"][meth] = mse(res.theta_star, theta_bar)
            out["theta_star"][meth] = res.theta_star
            out["weights"][meth] = res.weights
            out["gated"][meth] = res.gated
        return out
    except HDLDPError as exc:
        raise TrialError(trial, exc) from exc


def _map_trials(fn, trials, workers, payload):
    if workers <= 1:
        _install(payload)
        return [fn(t) for t in range(trials)]
    with ProcessPoolExecutor(workers, initializer=_install, initargs=(payload,)) as pool:
        return list(pool.map(fn, range(trials)))


def _metadata(config, started):
    return {
        "seed": config.seed,
        "elapsed_s": time.perf_counter() - started,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def run_experiment(config):
    """Baseline vs. re-calibrated MSE over ``config.trials`` seeded trials.

    Bounded mechanisms need each dimension's value distribution for the
    deviation model; the dataset's own per-column histogram (``bins``
    equal-width bins) is used.
    """
    started = time.perf_counter()
    dataset = config.load_data()
    data = dataset.values
    theta_bar = dataset.column_means()
    spec = MechanismSpec.from_budget(config.mechanism, config.eps, config.resolve_m(dataset.d))
    prior = ValueDistribution.from_columns(data, config.bins) if spec.bounded else None
    payload = {"config": config, "data": data, "theta_bar": theta_bar, "prior": prior}
    results = _map_trials(_trial_mse, config.trials, int(config.workers), payload)

    methods = {}
    base = np.array([r["mse"]["none"] for r in results])
    for meth in config.methods:
        vals = np.array([r["mse"][meth] for r in results])
        methods[meth] = {
            "mse_mean": float(np.mean(vals)),
            "mse_std": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
            "mse": vals.tolist(),
            "improved_trials": int(np.sum(vals < base)),
        }
    last = results[-1]
    return {
        "config": config.to_dict(),
        "mechanism": spec.to_dict(),
        "n": dataset.n,
        "d": dataset.d,
        "methods": methods,
        "last_trial": {
            "theta_bar": theta_bar.tolist(),
            "theta_hat": last["theta_hat"].tolist(),
            "theta_star": {k: v.tolist() for k, v in last["theta_star"].items()},
            "weights": {k: v.tolist() for k, v in last["weights"].items()},
            "gated": {k: v.tolist() for k, v in last["gated"].items()},
        },
        "metadata": _metadata(config, started),
    }


def _trial_deviation(trial):
    cfg, column = _SHARED["config"], _SHARED["column"]
    spec, m, d = _SHARED["spec"], _SHARED["m"], _SHARED["d"]
    try:
        mean, r = collector.collect_dimension(column, spec, m, d, substream(cfg.seed, MEAN_TRIALS, trial))
    except HDLDPError as exc:
        raise TrialError(trial, exc) from exc
    return mean, r


def validate_framework(config, min_trials=200):
    """Compare simulated deviations of one dimension with the normal model.

    Each trial simulates the reports that dimension ``config.dimension``
    receives (users include it with probability ``m/d``) and records
    ``theta_hat - theta_bar``. The model uses the column's exact empirical
    distribution and the expected report count ``n m / d``.
    """
    if config.trials < min_trials:
        raise ConfigError(f"validation needs at least {min_trials} trials, got {config.trials}")
    started = time.perf_counter()
    dataset = config.load_data()
    n, d = dataset.n, dataset.d
    if not 0 <= config.dimension < d:
        raise ConfigError(f"dimension must lie in [0, {d}), got {config.dimension}")
    m = config.resolve_m(d)
    spec = MechanismSpec.from_budget(config.mechanism, config.eps, m)
    column = dataset.values[:, config.dimension].copy()
    theta_bar = exact_sum(column) / n
    payload = {"config": config, "column": column, "spec": spec, "m": m, "d": d}
    results = _map_trials(_trial_deviation, config.trials, int(config.workers), payload)
    means = np.array([r[0] for r in results])
    if np.any(np.isnan(means)):
        raise ConfigError("some trials received no reports; increase n or m")
    dev = means - theta_bar

    r = n * m / d
    prior = ValueDistribution.from_columns(column[:, None])
    model = deviation_model(spec, prior, r, d=1, signed=True)
    mu, sd = float(model.delta[0]), float(model.sigma[0])
    ks = sps.kstest(dev, "norm", args=(mu, sd))
    counts, edges = np.histogram(dev, bins=int(config.hist_bins))
    masses = counts / dev.size
    width = np.diff(edges)
    grid = np.linspace(mu - 4 * sd, mu + 4 * sd, 201)
    return {
        "config": config.to_dict(),
        "mechanism": spec.to_dict(),
        "theta_bar": theta_bar,
        "expected_reports": r,
        "mean_reports": float(np.mean([x[1] for x in results])),
        "model": {"delta": mu, "sigma2": float(model.sigma2[0])},
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "berry_esseen": float(berry_esseen_bound(spec, prior, r, d=1, signed=True)[0]),
        "histogram": {
            "edges": edges.tolist(),
            "masses": masses.tolist(),
            "density": (masses / width).tolist(),
        },
        "pdf": {"x": grid.tolist(), "pdf": deviation_pdf(model, grid[:, None]).tolist()},
        "deviations": dev.tolist(),
        "metadata": _metadata(config, started),
    }


@dataclass
class BenchConfig:
    """Supremum-probability sweep.

    Defaults are the case study: total budget 0.1 split over m=100
    dimensions, r=10^4 reports per dimension, values 0.1..1.0 equally
    likely (in each mechanism's native input domain).
    """

    mechanisms: list = field(default_factory=lambda: list(KINDS))
    eps: float = 0.1
    m: int = 100
    r: float = 1e4
    values: list = field(default_factory=lambda: [k / 10 for k in range(1, 11)])
    probs: list | None = None
    xi: list = field(default_factory=lambda: [0.001, 0.01, 0.05, 0.1])
    dims: int = 1
    signed: bool = False
    out: str | None = None

    def __post_init__(self):
        if not self.xi:
            raise ConfigError("the xi grid must not be empty")
        if any(not x > 0 for x in self.xi):
            raise ConfigError("xi values must be positive")
        for kind in self.mechanisms:
            if kind not in KINDS:
                raise ConfigError(f"unknown mechanism {kind!r}")
        if int(self.dims) < 1:
            raise ConfigError("dims must be at least 1")
        if self.probs is None:
            self.probs = [1.0 / len(self.values)] * len(self.values)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown bench fields: {sorted(unknown)}")
        return cls(**data)


def benchmark_mechanisms(config):
    """Rows of ``(mechanism, xi, probability, delta, sigma2)``.

    ``probability`` is the chance that all ``dims`` dimensions stay within
    ``xi`` of the truth.
    """
    rows = []
    vd = ValueDistribution.repeated(config.values, config.probs, config.dims)
    for kind in config.mechanisms:
        spec = MechanismSpec.from_budget(kind, config.eps, config.m)
        model = deviation_model(spec, vd, config.r, d=config.dims, signed=config.signed)
        for xi in config.xi:
            rows.append(
                {
                    "mechanism": kind,
                    "xi": float(xi),
                    "probability": supremum_probability(model, xi),
                    "delta": float(model.delta[0]),
                    "sigma2": float(model.sigma2[0]),
                }
            )
    return rows


def write_rows(path, rows):
    if not rows:
        raise ConfigError("nothing to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


@dataclass
class FrequencyConfig:
    """Categorical benchmark: baseline vs. re-calibrated frequency MSE."""

    categories: list = field(default_factory=lambda: [8] * 20)
    n: int = 2000
    mechanism: str = "laplace"
    eps: float = 1.0
    m: int | None = None
    trials: int = 100
    seed: int = 0
    regularizer: str = "l1"
    kappa: float = 3.0
    concentration: float = 0.5
    out: str | None = None

    def __post_init__(self):
        self.schema = frequency.CategoricalSchema(self.categories)
        if self.mechanism not in KINDS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if int(self.trials) < 1 or int(self.n) < 1:
            raise ConfigError("trials and n must be at least 1")
        self.seed = check_seed(self.seed)
        hdr4me.RecalibrationConfig(self.regularizer, self.kappa)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown frequency fields: {sorted(unknown)}")
        return cls(**data)


def run_frequency_experiment(config, data=None):
    """Frequency MSE (over all entries) with and without re-calibration.

    The truth is the empirical category frequency of ``data`` (synthetic
    Dirichlet-skewed data when omitted).
    """
    started = time.perf_counter()
    schema = config.schema
    if data is None:
        data, _ = frequency.generate_categorical(config.n, schema, config.seed, config.concentration)
    truth = np.concatenate(frequency.empirical_frequencies(data, schema))
    m = schema.d if config.m is None else int(config.m)
    rc = hdr4me.RecalibrationConfig(config.regularizer, config.kappa)
    base, enh = [], []
    for trial in range(config.trials):
        try:
            b = frequency.estimate_frequencies(data, schema, config.mechanism, config.eps, m, substream(config.seed, FREQ_TRIALS, trial))
            e = frequency.estimate_frequencies(
                data, schema, config.mechanism, config.eps, m, substream(config.seed, FREQ_TRIALS, trial), recalibration=rc
            )
        except HDLDPError as exc:
            raise TrialError(trial, exc) from exc
        base.append(mse(np.concatenate(b.frequencies), truth))
        enh.append(mse(np.concatenate(e.frequencies), truth))
    base, enh = np.array(base), np.array(enh)
    return {
        "config": config.to_dict(),
        "baseline_mse": base.tolist(),
        "enhanced_mse": enh.tolist(),
        "baseline_mse_mean": float(base.mean()),
        "enhanced_mse_mean": float(enh.mean()),
        "not_worse_trials": int(np.sum(enh <= base)),
        "last_trial": {"frequencies": [f.tolist() for f in e.frequencies]},
        "metadata": {"seed": config.seed, "elapsed_s": time.perf_counter() - started},
    }
