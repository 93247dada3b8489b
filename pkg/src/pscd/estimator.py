"""PS-CD and CD gradient estimators on minibatches.

The PS-CD loss on a batch, with negative-phase weights held fixed, is::

    loss = -(1/gamma) * logmeanexp(-gamma * E(x+))
           - sum_i w-_i * E(x-_i)
           + l2 * (mean(E(x+)^2) + mean(E(x-)^2))

where ``w- = softmax(-gamma * E(x-))`` is treated as a constant. Its gradient
is ``sum w+ grad E(x+) - sum w- grad E(x-) + l2 * grad(...)`` with
``w+ = softmax(-gamma * E(x+))``. Each phase is one reverse pass with the
per-example weights as the output cotangent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, ForwardPass
from .errors import EmptyBatch, InvalidGamma, InvalidParameter, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float = 1.0
    l2_coeff: float = 1.0

    def __post_init__(self):
        if not self.gamma > -1:
            raise InvalidGamma(f"gamma must be > -1, got {self.gamma}")
        if not self.l2_coeff >= 0:
            raise InvalidParameter("l2_coeff must be nonnegative")


@dataclass(frozen=True)
class GradientEstimate:
    grad: np.ndarray
    loss_value: float
    weights_neg: np.ndarray
    ess: float
    weights_pos: np.ndarray | None = None


def logmeanexp(values) -> float:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyBatch("logmeanexp of an empty batch")
    m = v.max()
    return float(m + np.log(np.mean(np.exp(v - m))))


def stable_softmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyBatch("softmax of an empty batch")
    e = np.exp(v - v.max())
    return e / e.sum()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def _passes(model: EnergyModel, pos, neg):
    fp_pos = ForwardPass(model, pos)
    fp_neg = ForwardPass(model, neg)
    if len(fp_pos) == 0 or len(fp_neg) == 0:
        raise EmptyBatch("positive and negative batches must be nonempty")
    for name, fp in (("positive", fp_pos), ("negative", fp_neg)):
        if not np.all(np.isfinite(fp.values)):
            raise NumericalError(f"non-finite energy in {name} batch")
    return fp_pos, fp_neg


def _l2(fp_pos: ForwardPass, fp_neg: ForwardPass, l2_coeff: float):
    """Penalty value and the per-example cotangents of its gradient."""
    e_pos, e_neg = fp_pos.values, fp_neg.values
    with np.errstate(over="ignore", invalid="ignore"):
        value = l2_coeff * (np.mean(e_pos**2) + np.mean(e_neg**2))
    return value, 2.0 * l2_coeff * e_pos / e_pos.size, 2.0 * l2_coeff * e_neg / e_neg.size


def _check_ess(ess: float, n: int, gamma: float):
    if ess < 0.1 * n:
        log.warning("importance weights degenerate: ess=%.2f of %d (gamma=%g)", ess, n, gamma)


def pscd_gradient(model: EnergyModel, pos, neg, cfg: EstimatorConfig) -> GradientEstimate:
    """Self-normalized importance-sampling estimate of the PS-CD gradient.

    Args:
        model: energy model at the current parameters.
        pos: data minibatch ``x+``.
        neg: model samples ``x-`` (drawn from ``q ~ exp(-E)``).
        cfg: ``gamma`` (nonzero) and the L2 coefficient on energy outputs.
    """
    gamma = cfg.gamma
    if gamma == 0:
        raise InvalidGamma("gamma = 0 selects contrastive divergence; call cd_gradient")
    fp_pos, fp_neg = _passes(model, pos, neg)
    e_pos, e_neg = fp_pos.values, fp_neg.values

    w_pos = stable_softmax(-gamma * e_pos)
    w_neg = stable_softmax(-gamma * e_neg)
    l2_value, c_pos, c_neg = _l2(fp_pos, fp_neg, cfg.l2_coeff)

    grad = fp_pos.param_vjp(w_pos + c_pos) + fp_neg.param_vjp(c_neg - w_neg)
    loss = -logmeanexp(-gamma * e_pos) / gamma - float(np.dot(w_neg, e_neg)) + l2_value
    if not (np.all(np.isfinite(grad)) and math.isfinite(loss)):
        raise NumericalError("non-finite PS-CD gradient")
    ess = effective_sample_size(w_neg)
    _check_ess(ess, len(fp_neg), gamma)
    return GradientEstimate(grad=grad, loss_value=loss, weights_neg=w_neg, ess=ess, weights_pos=w_pos)


def cd_gradient(model: EnergyModel, pos, neg, l2_coeff: float = 1.0) -> GradientEstimate:
    """Contrastive-divergence gradient ``mean grad E(x+) - mean grad E(x-)`` plus L2."""
    if not l2_coeff >= 0:
        raise InvalidParameter("l2_coeff must be nonnegative")
    fp_pos, fp_neg = _passes(model, pos, neg)
    n_pos, n_neg = len(fp_pos), len(fp_neg)
    l2_value, c_pos, c_neg = _l2(fp_pos, fp_neg, l2_coeff)
    grad = fp_pos.param_vjp(np.full(n_pos, 1.0 / n_pos) + c_pos) + fp_neg.param_vjp(
        c_neg - np.full(n_neg, 1.0 / n_neg)
    )
    loss = float(np.mean(fp_pos.values) - np.mean(fp_neg.values)) + l2_value
    if not (np.all(np.isfinite(grad)) and math.isfinite(loss)):
        raise NumericalError("non-finite CD gradient")
    w = np.full(n_neg, 1.0 / n_neg)
    return GradientEstimate(grad=grad, loss_value=loss, weights_neg=w, ess=float(n_neg),
                            weights_pos=np.full(n_pos, 1.0 / n_pos))


def estimate_gradient(model: EnergyModel, pos, neg, cfg: EstimatorConfig) -> GradientEstimate:
    """Dispatch to CD when ``gamma == 0``, PS-CD otherwise."""
    if cfg.gamma == 0:
        return cd_gradient(model, pos, neg, cfg.l2_coeff)
    return pscd_gradient(model, pos, neg, cfg)


def frozen_loss(model: EnergyModel, pos, neg, cfg: EstimatorConfig, w_neg) -> float:
    """PS-CD batch loss with the negative-phase weights fixed to ``w_neg``."""
    fp_pos, fp_neg = _passes(model, pos, neg)
    l2_value, _, _ = _l2(fp_pos, fp_neg, cfg.l2_coeff)
    return -logmeanexp(-cfg.gamma * fp_pos.values) / cfg.gamma - float(np.dot(w_neg, fp_neg.values)) + l2_value


def frozen_weight_fd_check(model: EnergyModel, pos, neg, cfg: EstimatorConfig, step: float = 1e-5) -> float:
    """Largest per-coordinate relative error of ``pscd_gradient`` against central differences.

    The loss is re-evaluated at ``theta +/- step * e_k`` with the negative-phase
    weights frozen at the base point. The per-coordinate error is
    ``|fd_k - g_k| / max(|g_k|, |fd_k|, 1e-3 * max_j |g_j|)``; the floor keeps
    coordinates whose gradient is numerically zero from reporting pure
    round-off as relative error.
    """
    if not step > 0:
        raise InvalidParameter(f"finite-difference step must be positive, got {step}")
    est = pscd_gradient(model, pos, neg, cfg)
    g = est.grad
    base = model.params
    fd = np.empty_like(g)
    for k in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[k] += step
        minus[k] -= step
        fd[k] = (
            frozen_loss(model.with_params(plus), pos, neg, cfg, est.weights_neg)
            - frozen_loss(model.with_params(minus), pos, neg, cfg, est.weights_neg)
        ) / (2.0 * step)
    floor = max(1e-3 * float(np.max(np.abs(g))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(fd - g) / denom))


def sample_complexity_bound(L: float, K: float, gamma: float, eps: float, delta: float) -> float:
    """Samples sufficient for ``||estimate - true gradient|| <= eps`` w.p. ``1 - delta``.

    ``N >= 32 L^2 exp(8 gamma K) (1 + 4 log(2/delta)) / eps^2`` for energies
    bounded by ``K`` with parameter gradients bounded by ``L``.
    """
    if not (eps > 0 and 0 < delta < 1 and L >= 0 and K >= 0):
        raise InvalidParameter("need eps > 0, 0 < delta < 1, L >= 0, K >= 0")
    return 32.0 * L**2 * math.exp(8.0 * gamma * K) * (1.0 + 4.0 * math.log(2.0 / delta)) / eps**2
