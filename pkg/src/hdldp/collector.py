"""Client-side report generation and collector-side aggregation.

A user holding a record in [-1, 1]^d picks ``m`` of the ``d`` dimensions
uniformly at random and reports each one perturbed with budget ``eps/m``.
The collector averages the reports it receives per dimension.

Per-dimension sums are exactly rounded (``math.fsum``) within a batch and
carried as a double-double ``(hi, lo)`` pair across batches, so the
estimate from a single batch does not depend on report order and merged
partial states agree to ~1e-16 relative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import mechanisms as mech
from .datasets import read_numeric_csv
from .errors import ConfigError, DomainError, ParseError
from .numeric import exact_sum


class Report(NamedTuple):
    dim_index: int
    value: float


def _check_m(d, m):
    if not 1 <= int(m) <= int(d):
        raise ConfigError(f"m must satisfy 1 <= m <= d (d={d}), got {m}")
    return int(m)


def sample_dimensions(d, m, rng):
    """Uniformly random ``m``-subset of ``range(d)``, sorted."""
    m = _check_m(d, m)
    return np.sort(rng.choice(int(d), size=m, replace=False))


def sample_dimension_matrix(n, d, m, rng):
    """``(n, m)`` array whose row ``i`` is user ``i``'s sorted m-subset."""
    m = _check_m(d, m)
    if m == d:
        return np.broadcast_to(np.arange(d), (n, d)).copy()
    # The m smallest of d i.i.d. keys form a uniform m-subset.
    keys = rng.random((n, d))
    return np.sort(np.argpartition(keys, m - 1, axis=1)[:, :m], axis=1)


def _default_perturber(spec):
    return lambda x, rng: mech.perturb_signed(spec, x, rng)


def perturb_record(record, spec, m, rng):
    """Reports for one user: ``m`` distinct dimensions, each perturbed.

    ``spec.eps_per_dim`` must already be the per-dimension share ``eps/m``.
    """
    record = np.asarray(record, dtype=float)
    if record.ndim != 1:
        raise ConfigError("a record is a single d-vector")
    dims = sample_dimensions(record.size, m, rng)
    values = mech.perturb_signed(spec, record[dims], rng)
    return [Report(int(j), float(v)) for j, v in zip(dims, np.atleast_1d(values))]


def _check_records(data):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.size == 0:
        raise ConfigError("expected a non-empty n x d matrix of records")
    if np.any(np.abs(data) > 1.0) or not np.all(np.isfinite(data)):
        raise DomainError("records must lie in [-1, 1]")
    return data


def perturb_dataset(data, spec, m, rng, perturber=None):
    """Reports of all users as ``(dims, values)``, both of shape ``(n, m)``.

    Row ``i`` holds user ``i``'s sampled dimensions (sorted) and perturbed
    values. ``perturber(x, rng)`` replaces the mechanism, e.g. with a
    noiseless stub in tests.
    """
    data = _check_records(data)
    n, d = data.shape
    dims = sample_dimension_matrix(n, d, m, rng)
    picked = np.take_along_axis(data, dims, axis=1)
    values = (perturber or _default_perturber(spec))(picked, rng)
    return dims, np.asarray(values, dtype=float)


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@dataclass
class Aggregate:
    """Estimated means and report counts.

    ``theta_hat[j]`` is 0.0 where ``missing[j]`` is set (no reports).
    """

    theta_hat: np.ndarray
    counts: np.ndarray
    missing: np.ndarray

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "counts": self.counts.tolist(),
            "missing": np.flatnonzero(self.missing).tolist(),
        }


class AggregateState:
    """Running per-dimension sums and counts; mergeable."""

    def __init__(self, d):
        if int(d) < 1:
            raise ConfigError(f"d must be at least 1, got {d}")
        self.d = int(d)
        self.hi = np.zeros(self.d)
        self.lo = np.zeros(self.d)
        self.counts = np.zeros(self.d, dtype=np.int64)

    def _accumulate(self, j, s, k):
        hi, err = _two_sum(self.hi[j], s)
        self.hi[j] = hi
        self.lo[j] += err
        self.counts[j] += k

    def add(self, dims, values):
        """Add reports given as parallel arrays of dimension indices and values."""
        dims = np.asarray(dims).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if dims.shape != values.shape:
            raise ConfigError("dims and values must have the same length")
        if dims.size == 0:
            return self
        if not np.issubdtype(dims.dtype, np.integer):
            if np.any(dims != np.floor(dims)):
                raise DomainError("dimension indices must be integers")
            dims = dims.astype(np.int64)
        if dims.min() < 0 or dims.max() >= self.d:
            raise DomainError(f"dimension index out of range [0, {self.d})")
        order = np.argsort(dims, kind="stable")
        sd, sv = dims[order], values[order]
        uniq, starts = np.unique(sd, return_index=True)
        stops = np.append(starts[1:], sd.size)
        for j, a, b in zip(uniq.tolist(), starts.tolist(), stops.tolist()):
            self._accumulate(j, exact_sum(sv[a:b]), b - a)
        return self

    def add_columns(self, values):
        """Add an ``n x d`` block in which every user reported every dimension."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.d:
            raise ConfigError(f"expected an n x {self.d} block")
        for j in range(self.d):
            self._accumulate(j, exact_sum(values[:, j]), values.shape[0])
        return self

    def add_reports(self, reports: Iterable):
        pairs = list(reports)
        if pairs:
            dims, values = zip(*pairs)
            self.add(np.asarray(dims), np.asarray(values, dtype=float))
        return self

    def merge(self, other):
        """A new state holding the reports of both."""
        if other.d != self.d:
            raise ConfigError("cannot merge states of different dimension")
        out = AggregateState(self.d)
        out.hi, err = _two_sum(self.hi, other.hi)
        out.lo = self.lo + other.lo + err
        out.counts = self.counts + other.counts
        return out

    def estimate(self):
        missing = self.counts == 0
        safe = np.where(missing, 1, self.counts)
        theta = np.where(missing, 0.0, (self.hi + self.lo) / safe)
        return Aggregate(theta, self.counts.copy(), missing)


def aggregate(reports, d):
    """Per-dimension means of a stream of ``(dim_index, value)`` reports."""
    return AggregateState(d).add_reports(reports).estimate()


def collect(data, spec, m, rng, perturber=None):
    """Run the client side for every record and aggregate the reports."""
    data = _check_records(data)
    n, d = data.shape
    m = _check_m(d, m)
    state = AggregateState(d)
    if m == d:
        values = (perturber or _default_perturber(spec))(data, rng)
        return state.add_columns(values)
    dims, values = perturb_dataset(data, spec, m, rng, perturber)
    return state.add(dims, values)


def collect_dimension(column, spec, m, d, rng, perturber=None):
    """Simulate the reports one dimension receives; returns ``(mean, r)``.

    Under uniform ``m``-of-``d`` sampling each user includes a given
    dimension independently with probability ``m/d``, so drawing that
    inclusion directly reproduces the distribution of this dimension's
    estimate exactly. ``mean`` is NaN when no user reported.
    """
    column = _check_records(np.asarray(column, dtype=float)[:, None])[:, 0]
    m = _check_m(d, m)
    chosen = column[rng.random(column.size) < m / d] if m < d else column
    if chosen.size == 0:
        return math.nan, 0
    values = (perturber or _default_perturber(spec))(chosen, rng)
    return exact_sum(np.atleast_1d(values)) / chosen.size, int(chosen.size)


def calibrate(theta_hat, spec, prior=None, *, signed=True, required=False):
    """Remove the expected perturbation bias from estimated means.

    Laplace noise is zero-mean and Piecewise is unbiased, so both pass
    through. Square Wave's bias depends on the unknown original values; it
    is averaged over ``prior`` (a :class:`~hdldp.framework.ValueDistribution`
    in the same space as ``theta_hat``). Without a prior the estimate is
    returned unchanged unless ``required`` is set, which raises instead.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not spec.bounded:
        return theta_hat.copy()
    if prior is None:
        if required:
            raise ConfigError(f"calibrating {spec.kind} needs a value distribution prior")
        return theta_hat.copy()
    stats = mech.stats_signed if signed else mech.stats
    bias = prior.expect(lambda v: np.asarray(stats(spec, v).bias))
    if bias.size not in (1, theta_hat.size):
        raise ConfigError(f"prior has {bias.size} dimensions, estimate has {theta_hat.size}")
    return theta_hat - bias


def write_reports(path, dims, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dim_index", "value"])
        for j, v in zip(np.ravel(dims).tolist(), np.ravel(values).tolist()):
            writer.writerow([int(j), repr(float(v))])


def read_reports(path):
    header, rows = read_numeric_csv(path)
    if [h.strip() for h in header] != ["dim_index", "value"]:
        raise ParseError(f"{path}: expected header 'dim_index,value'", row=1)
    arr = np.array(rows, dtype=float)
    if np.any(arr[:, 0] != np.floor(arr[:, 0])):
        bad = int(np.flatnonzero(arr[:, 0] != np.floor(arr[:, 0]))[0])
        raise ParseError(f"{path}: dim_index must be an integer", row=bad + 2, column=1)
    return arr[:, 0].astype(np.int64), arr[:, 1]
