"""Synthetic datasets, per-column normalization and CSV persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .numeric import exact_sum
from .seeding import check_seed, substream

GENERATOR_KINDS = ("gaussian", "poisson", "uniform")


@dataclass
class Dataset:
    """An ``n x d`` matrix of user records.

    ``col_min`` / ``col_max`` are the per-column ranges that
    :func:`normalize` mapped onto [-1, 1]; they are ``None`` for raw data.
    """

    values: np.ndarray
    col_min: np.ndarray | None = None
    col_max: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ConfigError(f"dataset must be a non-empty n x d matrix, got shape {self.values.shape}")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def normalized(self):
        return self.col_min is not None

    def column_means(self):
        """Exactly rounded per-column means."""
        return np.array([exact_sum(self.values[:, j]) / self.n for j in range(self.d)])

    def denormalize(self):
        """Undo :func:`normalize`; constant columns come back as their value."""
        if not self.normalized:
            return self
        span = self.col_max - self.col_min
        raw = self.col_min + (self.values + 1.0) / 2.0 * span
        return Dataset(raw)


@dataclass
class GeneratorConfig:
    """Parameters of a synthetic dataset.

    Gaussian columns have standard deviation ``sigma``; the first
    ``ceil(high_fraction * d)`` columns have mean ``mu_high`` and the rest
    ``mu_low``. Poisson columns each draw their expectation uniformly from
    ``[poisson_low, poisson_high]``. Uniform columns are drawn on
    ``[uniform_low, uniform_high]``.
    """

    kind: str
    n: int
    d: int
    seed: int = 0
    sigma: float = 1.0 / 16.0
    high_fraction: float = 0.1
    mu_high: float = 0.9
    mu_low: float = 0.0
    poisson_low: float = 1.0
    poisson_high: float = 99.0
    uniform_low: float = -1.0
    uniform_high: float = 1.0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {GENERATOR_KINDS}")
        if int(self.n) < 1 or int(self.d) < 1:
            raise ConfigError(f"n and d must be at least 1, got n={self.n}, d={self.d}")
        self.n, self.d = int(self.n), int(self.d)
        self.seed = check_seed(self.seed)
        if not 0.0 <= self.high_fraction <= 1.0:
            raise ConfigError(f"high_fraction must lie in [0, 1], got {self.high_fraction}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.poisson_low <= self.poisson_high:
            raise ConfigError("poisson expectation range must satisfy 0 < low <= high")
        if not self.uniform_low < self.uniform_high:
            raise ConfigError("uniform range must satisfy low < high")

    @property
    def n_high(self):
        return math.ceil(round(self.high_fraction * self.d, 12))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _column(config, j):
    rng = substream(config.seed, j)
    if config.kind == "gaussian":
        mu = config.mu_high if j < config.n_high else config.mu_low
        return rng.normal(mu, config.sigma, config.n)
    if config.kind == "poisson":
        lam = rng.uniform(config.poisson_low, config.poisson_high)
        return rng.poisson(lam, config.n).astype(np.float64)
    return rng.uniform(config.uniform_low, config.uniform_high, config.n)


def poisson_expectations(config):
    """The expectation each Poisson column was drawn with."""
    if config.kind != "poisson":
        raise ConfigError("only Poisson datasets have per-column expectations")
    return np.array(
        [substream(config.seed, j).uniform(config.poisson_low, config.poisson_high) for j in range(config.d)]
    )


def generate(config, normalize_columns=True):
    """Draw a dataset; column ``j`` uses the RNG substream ``(seed, j)``."""
    values = np.column_stack([_column(config, j) for j in range(config.d)])
    data = Dataset(values)
    return normalize(data) if normalize_columns else data


def normalize(dataset):
    """Map each column's ``[min, max]`` affinely onto [-1, 1].

    Constant columns map to 0. The original ranges are kept on the result.
    Already-normalized data is returned unchanged.
    """
    if not isinstance(dataset, Dataset):
        dataset = Dataset(dataset)
    if dataset.normalized:
        return dataset
    x = dataset.values
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, 2.0 * (x - lo) / safe - 1.0, 0.0)
    return Dataset(np.clip(out, -1.0, 1.0), col_min=lo, col_max=hi)


def save_csv(dataset, path):
    """Write ``dim_0,...,dim_{d-1}`` header plus one row per user.

    Floats are written with ``repr`` so a load reproduces them bitwise.
    """
    values = dataset.values if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"dim_{j}" for j in range(values.shape[1])])
        for row in values.tolist():
            writer.writerow([repr(v) for v in row])
    return Path(path)


def read_numeric_csv(path, cast=float):
    """Parse a headed numeric CSV into a list of rows.

    Raises ParseError naming the offending row/column for ragged rows or
    non-numeric cells, and for files without data rows.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}: expected {width} cells, found {len(row)}", row=lineno)
            parsed = []
            for col, cell in enumerate(row, start=1):
                try:
                    parsed.append(cast(cell))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric cell {cell!r}", row=lineno, column=col) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return header, rows


def load_csv(path):
    _, rows = read_numeric_csv(path)
    return Dataset(np.array(rows, dtype=np.float64))
