"""Categorical frequency estimation through one-hot encoding.

Each categorical dimension with ``v_j`` categories becomes ``v_j`` numeric
entries in [0, 1] (a one-hot vector). A user reporting ``m`` dimensions
perturbs every entry of each reported vector with budget ``eps / (2m)``;
the per-entry means over the reporters are the category frequencies.
Entries travel through the [-1, 1] mean pipeline (``x -> 2x - 1``), so the
Square Wave mechanism ends up working on the original [0, 1] entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hdr4me
from .collector import AggregateState, sample_dimension_matrix
from .datasets import read_numeric_csv
from .errors import ConfigError, DomainError, ParseError
from .framework import DeviationModel, ValueDistribution, deviation_model
from .mechanisms import MechanismSpec, perturb_signed


@dataclass
class CategoricalSchema:
    """Category count ``v_j`` of each dimension."""

    categories: list

    def __post_init__(self):
        self.categories = [int(v) for v in self.categories]
        if not self.categories:
            raise ConfigError("schema needs at least one dimension")
        if min(self.categories) < 2:
            raise ConfigError("every dimension needs at least 2 categories")

    @property
    def d(self):
        return len(self.categories)

    def to_dict(self):
        return {"categories": list(self.categories)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["categories"])
        except KeyError:
            raise ConfigError("schema is missing field 'categories'") from None


def encode(index, v):
    """One-hot vector of length ``v`` with a 1.0 at ``index`` (0-based)."""
    if not 0 <= int(index) < int(v) or int(index) != index:
        raise DomainError(f"category index must lie in [0, {v}), got {index}")
    out = np.zeros(int(v))
    out[int(index)] = 1.0
    return out


def entry_budget(eps, m):
    """Budget each one-hot entry receives so a user spends at most ``eps``."""
    if not eps > 0 or int(m) < 1:
        raise ConfigError("eps must be positive and m at least 1")
    return float(eps) / (2 * int(m))


def postprocess(frequencies):
    """Clip negatives to 0 and renormalize; all-zero falls back to uniform."""
    f = np.clip(np.asarray(frequencies, dtype=float), 0.0, None)
    total = math.fsum(f)
    if total <= 0:
        return np.full(f.size, 1.0 / f.size)
    return f / total


@dataclass
class FrequencyEstimate:
    """Per-dimension frequency vectors.

    ``raw`` are the unprocessed entry means (possibly outside [0, 1]);
    ``frequencies`` are on the probability simplex.
    """

    raw: list
    frequencies: list
    counts: np.ndarray
    entry_eps: float

    def to_dict(self):
        return {
            "frequencies": [f.tolist() for f in self.frequencies],
            "raw": [f.tolist() for f in self.raw],
            "counts": self.counts.tolist(),
            "entry_eps": self.entry_eps,
        }


def check_categorical(data, schema):
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != schema.d or data.shape[0] == 0:
        raise ConfigError(f"expected an n x {schema.d} matrix of category indices")
    if not np.all(data == np.floor(data)):
        raise DomainError("category indices must be integers")
    data = data.astype(np.int64)
    limits = np.asarray(schema.categories)
    if np.any(data < 0) or np.any(data >= limits):
        raise DomainError("category index out of range for its dimension")
    return data


def entry_model(spec, v, r):
    """Deviation model of the ``v`` entry means of one dimension.

    Bounded mechanisms need a prior over entry values; a uniform-category
    guess (an entry is 1 with probability ``1/v``) is used. The model is
    expressed in frequency units, i.e. halved/quartered from [-1, 1] space.
    """
    prior = ValueDistribution([[-1.0, 1.0]], [[1.0 - 1.0 / v, 1.0 / v]])
    signed = deviation_model(spec, prior, r, d=1, signed=True)
    return DeviationModel(
        np.full(v, signed.delta[0] / 2.0),
        np.full(v, signed.sigma2[0] / 4.0),
        np.full(v, float(r)),
    )


def estimate_frequencies(data, schema, kind, eps, m, rng, *, recalibration=None, perturber=None):
    """Estimate every dimension's category frequencies.

    Args:
        data: ``n x d`` matrix of category indices.
        schema: Category counts.
        kind: Mechanism name; each entry gets budget ``eps / (2m)``.
        eps: Total per-user budget.
        m: Dimensions reported per user.
        rng: numpy Generator.
        recalibration: Optional :class:`~hdldp.hdr4me.RecalibrationConfig`
            applied to each dimension's entry means before postprocessing.
        perturber: Replacement for the mechanism, ``f(x, rng) -> x*`` on
            [-1, 1] values (used for noiseless tests).
    """
    data = check_categorical(data, schema)
    n, d = data.shape
    entry_eps = entry_budget(eps, m)
    if entry_eps * 2 * int(m) > eps * (1 + 1e-12):
        raise ConfigError("per-entry budget exceeds the total budget")
    spec = MechanismSpec(kind, entry_eps)
    perturb = perturber or (lambda x, g: perturb_signed(spec, x, g))
    dims = sample_dimension_matrix(n, d, m, rng)
    raw, freqs, counts = [], [], np.zeros(d, dtype=np.int64)
    for j, v in enumerate(schema.categories):
        users = np.flatnonzero(np.any(dims == j, axis=1))
        counts[j] = users.size
        if users.size == 0:
            raw.append(np.full(v, np.nan))
            freqs.append(np.full(v, 1.0 / v))
            continue
        onehot = np.zeros((users.size, v))
        onehot[np.arange(users.size), data[users, j]] = 1.0
        reports = perturb(2.0 * onehot - 1.0, rng)
        means = AggregateState(v).add_columns(reports).estimate().theta_hat
        est = (means + 1.0) / 2.0
        if recalibration is not None and recalibration.regularizer != "none":
            est = hdr4me.recalibrate(est, entry_model(spec, v, users.size), recalibration).theta_star
        raw.append(est)
        freqs.append(postprocess(est))
    return FrequencyEstimate(raw, freqs, counts, entry_eps)


def generate_categorical(n, schema, seed, concentration=0.5):
    """Synthetic categorical data with Dirichlet-drawn category frequencies.

    Returns ``(data, true_probs)``; dimension ``j`` uses substream ``(seed, j)``.
    """
    from .seeding import substream

    cols, probs = [], []
    for j, v in enumerate(schema.categories):
        rng = substream(seed, j)
        p = rng.dirichlet(np.full(v, concentration))
        cols.append(rng.choice(v, size=int(n), p=p))
        probs.append(p)
    return np.column_stack(cols), probs


def empirical_frequencies(data, schema):
    data = check_categorical(data, schema)
    return [np.bincount(data[:, j], minlength=v) / data.shape[0] for j, v in enumerate(schema.categories)]


def load_categorical_csv(path, schema=None):
    _, rows = read_numeric_csv(path, cast=int)
    data = np.array(rows, dtype=np.int64)
    if schema is not None:
        try:
            data = check_categorical(data, schema)
        except (ConfigError, DomainError) as exc:
            raise ParseError(f"{path}: {exc}") from None
    return data
