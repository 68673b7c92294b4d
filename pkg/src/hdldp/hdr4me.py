"""Regularized re-calibration of estimated means (HDR4ME).

The enhanced mean minimizes ``1/2 ||theta - theta_hat||^2 + R(lam * theta)``
with ``R`` the L1 norm or the squared L2 norm. Both problems separate per
coordinate and have closed-form minimizers (soft thresholding and uniform
shrinkage), so no iteration is needed.

Weights come from the deviation model. The "supremum" of a Gaussian
deviation is infinite, so it is replaced by ``|delta_j| + kappa * sigma_j``.
The enhancement is only guaranteed when the deviation exceeds 1 (L1) or 2
(L2); with ``apply_threshold`` the weight of a dimension whose operational
supremum is below that threshold is set to 0 and the coordinate passes
through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .framework import log_box_mass

REGULARIZERS = ("none", "l1", "l2")
THRESHOLDS = {"l1": 1.0, "l2": 2.0}


@dataclass
class RecalibrationConfig:
    regularizer: str = "l1"
    kappa: float = 3.0
    clamp: float = 0.05
    apply_threshold: bool = True
    weights: np.ndarray | None = None
    theta_bar_proxy: np.ndarray | None = None

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.regularizer!r}; expected one of {REGULARIZERS}")
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if not self.clamp > 0:
            raise ConfigError(f"clamp must be positive, got {self.clamp}")
        if self.weights is not None:
            self.weights = _check_weights(self.weights)

    def to_dict(self):
        out = {
            "regularizer": self.regularizer,
            "kappa": self.kappa,
            "clamp": self.clamp,
            "apply_threshold": self.apply_threshold,
        }
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("weights", "theta_bar_proxy"):
            if data.get(key) is not None:
                data[key] = np.asarray(data[key], dtype=float)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class Recalibration:
    """Result of :func:`recalibrate`: enhanced means and the weights used."""

    theta_star: np.ndarray
    weights: np.ndarray
    gated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def to_dict(self):
        return {
            "theta_star": self.theta_star.tolist(),
            "weights": self.weights.tolist(),
            "gated": self.gated.tolist(),
        }


def _check_weights(weights):
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if np.any(~(w >= 0)):
        raise ConfigError("regularization weights must be nonnegative")
    return w


def _pair(theta_hat, weights):
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    weights = _check_weights(weights)
    if theta_hat.shape != weights.shape:
        raise ConfigError(f"length mismatch: {theta_hat.size} estimates, {weights.size} weights")
    return theta_hat, weights


def operational_sup(model, kappa=3.0):
    """``|delta_j| + kappa * sigma_j``, the deviation tolerated per dimension."""
    if not kappa > 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    return np.abs(model.delta) + kappa * model.sigma


def l1_weights(model, kappa=3.0, apply_threshold=True):
    lam = operational_sup(model, kappa)
    if apply_threshold:
        lam = np.where(lam > THRESHOLDS["l1"], lam, 0.0)
    return lam


def l2_weights(model, theta_bar_proxy, kappa=3.0, clamp=0.05, apply_threshold=True):
    """``sup / (2 max(|proxy_j|, clamp))``; the proxy stands in for the true mean."""
    if not clamp > 0:
        raise ConfigError(f"clamp must be positive, got {clamp}")
    sup = operational_sup(model, kappa)
    proxy = np.broadcast_to(np.abs(np.asarray(theta_bar_proxy, dtype=float)), sup.shape)
    lam = sup / (2.0 * np.maximum(proxy, clamp))
    if apply_threshold:
        lam = np.where(sup > THRESHOLDS["l2"], lam, 0.0)
    return lam


def recalibrate_l1(theta_hat, weights):
    """Soft thresholding: shrink each coordinate toward 0 by its weight."""
    theta_hat, weights = _pair(theta_hat, weights)
    shrunk = np.abs(theta_hat) - weights
    return np.where(shrunk > 0, np.sign(theta_hat) * shrunk, 0.0)


def recalibrate_l2(theta_hat, weights):
    """``theta_hat / (2 lam + 1)`` per coordinate.

    This is the exact minimizer of :func:`l2_solver_objective` (penalty
    ``lam * theta^2``). With the squared-Hadamard penalty ``(lam * theta)^2``
    of :func:`objective` the minimizer would be ``theta_hat / (1 + 2 lam^2)``;
    the two coincide only at ``lam`` in {0, 1}. The weights from
    :func:`l2_weights` are calibrated for the ``2 lam + 1`` form.
    """
    theta_hat, weights = _pair(theta_hat, weights)
    return theta_hat / (2.0 * weights + 1.0)


def objective(theta, theta_hat, weights, regularizer):
    """``1/2 ||theta - theta_hat||^2 + ||lam * theta||_1`` (or ``_2^2``)."""
    theta = np.asarray(theta, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    weights = np.asarray(weights, dtype=float)
    fit = 0.5 * np.sum((theta - theta_hat) ** 2, axis=-1)
    if regularizer == "l1":
        return fit + np.sum(np.abs(weights * theta), axis=-1)
    if regularizer == "l2":
        return fit + np.sum((weights * theta) ** 2, axis=-1)
    if regularizer == "none":
        return fit
    raise ConfigError(f"unknown regularizer {regularizer!r}")


def l2_solver_objective(theta, theta_hat, weights):
    """``1/2 ||theta - theta_hat||^2 + sum lam_j theta_j^2``, minimized by :func:`recalibrate_l2`."""
    theta = np.asarray(theta, dtype=float)
    fit = 0.5 * np.sum((theta - np.asarray(theta_hat, dtype=float)) ** 2, axis=-1)
    return fit + np.sum(np.asarray(weights, dtype=float) * theta**2, axis=-1)


def improvement_probability(model, regularizer):
    """Lower bound on ``P(||theta* - theta_bar|| < ||theta_hat - theta_bar||)``.

    One minus the probability that every coordinate's deviation stays
    within the threshold (1 for L1, 2 for L2).
    """
    if regularizer not in THRESHOLDS:
        raise ConfigError(f"improvement bound is defined for l1 and l2, got {regularizer!r}")
    log_inside = np.sum(log_box_mass(model, THRESHOLDS[regularizer]))
    return float(-np.expm1(log_inside))


def recalibrate(theta_hat, model, config):
    """Apply ``config`` to ``theta_hat`` using weights derived from ``model``.

    Explicit ``config.weights`` override the model. For L2 the proxy for the
    true mean defaults to the bias-corrected estimate ``theta_hat - delta``.
    """
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if config.regularizer == "none":
        zeros = np.zeros_like(theta_hat)
        return Recalibration(theta_hat.copy(), zeros, np.zeros(theta_hat.shape, dtype=bool))
    if model is not None and model.d != theta_hat.size:
        raise ConfigError(f"model has {model.d} dimensions, estimate has {theta_hat.size}")
    if config.weights is not None:
        weights = config.weights
        gated = weights == 0
    elif model is None:
        raise ConfigError("either a deviation model or explicit weights is required")
    else:
        sup = operational_sup(model, config.kappa)
        if config.apply_threshold:
            gated = sup <= THRESHOLDS[config.regularizer]
        else:
            gated = np.zeros(sup.shape, dtype=bool)
        if config.regularizer == "l1":
            weights = l1_weights(model, config.kappa, config.apply_threshold)
        else:
            proxy = config.theta_bar_proxy if config.theta_bar_proxy is not None else theta_hat - model.delta
            weights = l2_weights(model, proxy, config.kappa, config.clamp, config.apply_threshold)
    solve = recalibrate_l1 if config.regularizer == "l1" else recalibrate_l2
    return Recalibration(solve(theta_hat, weights), weights, gated)
