"""Perturbation mechanisms for one-dimensional LDP mean estimation.

Three mechanisms are supported:

* ``laplace``: ``t + Lap(2/eps)`` on inputs in [-1, 1]; unbounded output.
* ``piecewise``: piecewise-constant density on [-Q, Q] with a high-density
  band ``[l(t), r(t)]`` around the input; inputs in [-1, 1]; unbiased.
* ``squarewave``: two-level density on [-b, 1 + b] with the high level on
  ``|t - t*| < b``; inputs in [0, 1]; biased.

All densities are piecewise constant (or Laplace), so sampling is done by
exact inverse-transform from the closed-form CDF and every moment used by
the deviation model has a closed form.

Square Wave works natively on [0, 1]. Pipelines that hold data in [-1, 1]
go through :func:`domain_map` / :func:`domain_unmap`, and the ``*_signed``
helpers apply that round trip (bias scales by 2 and variance by 4 in the
signed space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

KINDS = ("laplace", "piecewise", "squarewave")

# exp() overflows past ~709.78; the Square Wave constants need e^eps.
MAX_EPS_PER_DIM = 700.0

_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 20


def _expm1_minus_x(x):
    """``e^x - 1 - x`` without cancellation for small ``x``."""
    if abs(x) < _SERIES_CUTOFF:
        term, total = x, 0.0
        for k in range(2, _SERIES_TERMS):
            term *= x / k
            total += term
        return total
    return math.expm1(x) - x


def _x_minus_one_plus_exp_neg(x):
    """``x - 1 + e^{-x}`` without cancellation for small ``x``."""
    return _expm1_minus_x(-x)


def piecewise_q(eps):
    """Output half-width ``Q`` of the Piecewise mechanism.

    ``(e^eps + e^{eps/2}) / (e^eps - e^{eps/2})``, rewritten as
    ``(e^{eps/2} + 1) / (e^{eps/2} - 1)``.
    """
    return (math.exp(eps / 2) + 1.0) / math.expm1(eps / 2)


def squarewave_b(eps):
    """Half-width ``b`` of the Square Wave high-density window.

    ``(eps e^eps - e^eps + 1) / (2 e^eps (e^eps - 1 - eps))``, with numerator
    and denominator divided by ``e^eps``. Tends to 1/2 as eps -> 0 and to 0
    as eps -> infinity.
    """
    return _x_minus_one_plus_exp_neg(eps) / (2.0 * _expm1_minus_x(eps))


@dataclass(frozen=True)
class MechanismSpec:
    """A mechanism together with the budget each reported dimension gets.

    Attributes:
        kind: One of ``laplace``, ``piecewise`` or ``squarewave``.
        eps_per_dim: Per-dimension budget, i.e. total eps divided by m.
    """

    kind: str
    eps_per_dim: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown mechanism {self.kind!r}; expected one of {KINDS}")
        eps = float(self.eps_per_dim)
        if not math.isfinite(eps) or eps <= 0:
            raise ConfigError(f"eps_per_dim must be positive and finite, got {self.eps_per_dim}")
        if eps > MAX_EPS_PER_DIM:
            raise ConfigError(f"eps_per_dim above {MAX_EPS_PER_DIM} is not supported")
        object.__setattr__(self, "eps_per_dim", eps)

    @classmethod
    def from_budget(cls, kind, eps, m):
        """Spec for a user who splits total budget ``eps`` over ``m`` dims."""
        if int(m) < 1:
            raise ConfigError(f"m must be at least 1, got {m}")
        if not eps > 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        return cls(kind, float(eps) / int(m))

    @property
    def bounded(self):
        return self.kind != "laplace"

    @property
    def bound(self):
        """Largest absolute report value in the [-1, 1] pipeline space."""
        if self.kind == "laplace":
            return math.inf
        if self.kind == "piecewise":
            return piecewise_q(self.eps_per_dim)
        return 1.0 + 2.0 * squarewave_b(self.eps_per_dim)

    @property
    def input_domain(self):
        return (0.0, 1.0) if self.kind == "squarewave" else (-1.0, 1.0)

    @property
    def output_domain(self):
        """Support of the native output distribution."""
        eps = self.eps_per_dim
        if self.kind == "laplace":
            return (-math.inf, math.inf)
        if self.kind == "piecewise":
            q = piecewise_q(eps)
            return (-q, q)
        b = squarewave_b(eps)
        return (-b, 1.0 + b)

    @property
    def laplace_scale(self):
        return 2.0 / self.eps_per_dim

    def to_dict(self):
        return {"kind": self.kind, "eps_per_dim": self.eps_per_dim}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(str(data["kind"]), float(data["eps_per_dim"]))
        except KeyError as exc:
            raise ConfigError(f"mechanism spec is missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class PerturbationStats:
    """Bias ``E[t*] - t`` and variance ``Var(t*)`` at a given input."""

    bias: float | np.ndarray
    variance: float | np.ndarray


def _check_input(spec, t):
    t = np.asarray(t, dtype=float)
    lo, hi = spec.input_domain
    if not np.all(np.isfinite(t)) or np.any(t < lo) or np.any(t > hi):
        bad = t[~((t >= lo) & (t <= hi))]
        raise DomainError(f"{spec.kind} input must lie in [{lo}, {hi}], got {bad.ravel()[:3].tolist()}")
    return t


def _levels(spec):
    """(low, high) density levels of a bounded mechanism."""
    eps = spec.eps_per_dim
    if spec.kind == "piecewise":
        half = math.exp(eps / 2)
        denom = 2.0 * half + 2.0
        return -math.expm1(-eps / 2) / denom, half * math.expm1(eps / 2) / denom
    b = squarewave_b(eps)
    tail = math.exp(-eps)
    denom = 2.0 * b + tail
    return tail / denom, 1.0 / denom


def _edges(spec, t):
    """Breakpoints ``(e0, e1, e2, e3)`` of the three constant pieces at ``t``.

    The density is ``low`` on [e0, e1), ``high`` on [e1, e2] and ``low`` on
    (e2, e3].
    """
    eps = spec.eps_per_dim
    if spec.kind == "piecewise":
        q = piecewise_q(eps)
        left = (q + 1.0) / 2.0 * t - (q - 1.0) / 2.0
        right = left + q - 1.0
        return np.full_like(t, -q), left, right, np.full_like(t, q)
    b = squarewave_b(eps)
    return np.full_like(t, -b), t - b, t + b, np.full_like(t, 1.0 + b)


def _widths(spec, t):
    """Analytic lengths of the three pieces.

    Subtracting edges loses the central band once its width drops below the
    float spacing near ``t`` (large budgets), although the band still
    carries almost all of the mass.
    """
    eps = spec.eps_per_dim
    if spec.kind == "piecewise":
        q = piecewise_q(eps)
        return (q + 1.0) * (t + 1.0) / 2.0, np.full_like(t, 2.0 / math.expm1(eps / 2)), (q + 1.0) * (1.0 - t) / 2.0
    return t.copy(), np.full_like(t, 2.0 * squarewave_b(eps)), 1.0 - t


def _mean_abs_cube(y1, w):
    """Mean of ``|y|^3`` for ``y`` uniform on ``[y1, y1 + w]``, stable for tiny ``w``."""
    y2 = y1 + w
    lo = np.minimum(np.abs(y1), np.abs(y2))
    hi = np.maximum(np.abs(y1), np.abs(y2))
    same_side = (y1 >= 0) | (y2 <= 0)
    one_side = (lo + hi) * (lo * lo + hi * hi) / 4.0
    with np.errstate(divide="ignore", invalid="ignore"):
        straddle = (y1**4 + y2**4) / (4.0 * w)
    return np.where(same_side, one_side, straddle)


def _open_uniform(rng, size):
    """Uniform draws strictly inside (0, 1)."""
    return (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / 2.0**53


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def perturb(spec, t, rng):
    """Draw ``t*`` for each input in ``t`` (scalar or array).

    Inputs must lie in ``spec.input_domain``. Sampling inverts the exact CDF
    of the mechanism's output density, one uniform per output.
    """
    t_arr = _check_input(spec, t)
    u = _open_uniform(rng, t_arr.shape)
    if spec.kind == "laplace":
        lam = spec.laplace_scale
        noise = np.where(u < 0.5, lam * np.log(2.0 * u), -lam * np.log1p(1.0 - 2.0 * u))
        return _scalar_or_array(t_arr + noise, t)
    low, high = _levels(spec)
    e0, e1, e2, e3 = _edges(spec, t_arr)
    w0, w1, _ = _widths(spec, t_arr)
    c1 = w0 * low
    c2 = c1 + w1 * high
    out = np.where(
        u < c1,
        e0 + u / low,
        np.where(u < c2, e1 + (u - c1) / high, e2 + (u - c2) / low),
    )
    return _scalar_or_array(np.clip(out, e0, e3), t)


def density(spec, t, t_star):
    """Output density of ``t_star`` given input ``t``; broadcasts.

    Bounded mechanisms return 0 outside their output domain.
    """
    t_arr = _check_input(spec, t)
    x = np.asarray(t_star, dtype=float)
    scalar = t_arr.ndim == 0 and x.ndim == 0
    if spec.kind == "laplace":
        lam = spec.laplace_scale
        out = np.exp(-np.abs(x - t_arr) / lam) / (2.0 * lam)
        return float(out) if scalar else out
    low, high = _levels(spec)
    if spec.kind == "piecewise":
        e0, e1, e2, e3 = _edges(spec, t_arr)
        central = (x >= e1) & (x <= e2)
    else:
        b = squarewave_b(spec.eps_per_dim)
        e0, e3 = -b, 1.0 + b
        central = np.abs(t_arr - x) < b
    inside = (x >= e0) & (x <= e3)
    out = np.where(inside, np.where(central, high, low), 0.0)
    return float(out) if scalar else out


def stats(spec, t):
    """Closed-form bias and variance of ``t*`` at input ``t`` (broadcasts).

    Laplace: bias 0, variance ``2 (2/eps)^2``.
    Piecewise: bias 0, variance ``t^2/(e^{eps/2}-1) + (e^{eps/2}+3)/(3 (e^{eps/2}-1)^2)``.
    Square Wave: bias and variance from integrating the two-level density.
    """
    t_arr = _check_input(spec, t)
    eps = spec.eps_per_dim
    if spec.kind == "laplace":
        var = np.full_like(t_arr, 2.0 * spec.laplace_scale**2)
        bias = np.zeros_like(t_arr)
    elif spec.kind == "piecewise":
        g = math.expm1(eps / 2)
        var = t_arr**2 / g + (math.exp(eps / 2) + 3.0) / (3.0 * g * g)
        bias = np.zeros_like(t_arr)
    else:
        b = squarewave_b(eps)
        tail = math.exp(-eps)
        denom = 2.0 * b + tail  # (2 b e^eps + 1) / e^eps
        bias = (
            2.0 * b * (-math.expm1(-eps)) * t_arr / denom
            + (1.0 + 2.0 * b) * tail / (2.0 * denom)
            - t_arr
        )
        var = (
            b * b / 3.0
            + (2.0 * b + 1.0) * (b + 1.0 - 3.0 * t_arr**2) * tail / (3.0 * denom)
            - bias**2
            - 2.0 * bias * t_arr
        )
    return PerturbationStats(_scalar_or_array(bias, t), _scalar_or_array(var, t))


def third_abs_moment(spec, t):
    """``E|t* - E[t*]|^3`` at input ``t`` (broadcasts).

    Laplace gives ``6 lam^3``. For bounded mechanisms each constant piece
    contributes its probability mass times the exact mean of ``|x - c|^3``
    over the piece.
    """
    t_arr = _check_input(spec, t)
    if spec.kind == "laplace":
        out = np.full_like(t_arr, 6.0 * spec.laplace_scale**3)
        return _scalar_or_array(out, t)
    center = t_arr + np.asarray(stats(spec, t_arr).bias)
    low, high = _levels(spec)
    starts = _edges(spec, t_arr)[:3]
    total = np.zeros_like(t_arr)
    for start, width, level in zip(starts, _widths(spec, t_arr), (low, high, low)):
        piece = level * width * _mean_abs_cube(start - center, width)
        total += np.where(width > 0, piece, 0.0)
    return _scalar_or_array(total, t)


def domain_map(t):
    """Affine map [-1, 1] -> [0, 1]."""
    return (np.asarray(t, dtype=float) + 1.0) / 2.0 if np.ndim(t) else (float(t) + 1.0) / 2.0


def domain_unmap(x):
    """Inverse of :func:`domain_map`."""
    return 2.0 * np.asarray(x, dtype=float) - 1.0 if np.ndim(x) else 2.0 * float(x) - 1.0


def perturb_signed(spec, t, rng):
    """Perturb values held in [-1, 1]; reports come back in [-1, 1] space."""
    if spec.kind == "squarewave":
        return domain_unmap(perturb(spec, domain_map(t), rng))
    return perturb(spec, t, rng)


def stats_signed(spec, t):
    """:func:`stats` for inputs and outputs expressed in [-1, 1] space."""
    if spec.kind == "squarewave":
        s = stats(spec, domain_map(t))
        return PerturbationStats(2.0 * s.bias, 4.0 * s.variance)
    return stats(spec, t)


def third_abs_moment_signed(spec, t):
    if spec.kind == "squarewave":
        return 8.0 * third_abs_moment(spec, domain_map(t))
    return third_abs_moment(spec, t)


def ldp_ratio(spec, n_inputs=1000, n_outputs=1000):
    """Largest density ratio ``p(t*|t_a) / p(t*|t_b)`` over a grid.

    Inputs span the input domain; outputs span the output domain (for
    Laplace, the inputs' range padded by 10 noise scales). An eps-LDP
    mechanism returns at most ``e^eps``.
    """
    t = np.linspace(*spec.input_domain, n_inputs)
    if spec.bounded:
        x = np.linspace(*spec.output_domain, n_outputs)
        with np.errstate(divide="ignore"):
            logd = np.log(density(spec, t[:, None], x[None, :]))
    else:
        lam = spec.laplace_scale
        x = np.linspace(-1.0 - 10.0 * lam, 1.0 + 10.0 * lam, n_outputs)
        logd = -np.abs(x[None, :] - t[:, None]) / lam - math.log(2.0 * lam)
    spread = logd.max(axis=0) - logd.min(axis=0)
    return float(np.exp(spread.max()))
