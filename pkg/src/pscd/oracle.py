"""Ground-truth PS-CD gradients and 1-D objective landscapes.

The exact gradient of the negative gamma-score is::

    E_p[exp(-gamma E) grad E] / E_p[exp(-gamma E)]  -  E_r[grad E],
    r(x) proportional to exp(-(gamma + 1) E(x)).

On a finite space both expectations are sums; for the 1-D Gaussian model they
are quadratures.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .energy import GAUSSIAN, EnergyModel, ForwardPass, gaussian_quadratic
from .errors import InvalidGamma, InvalidModelKind, InvalidParameter, NumericalError
from .scoring import LOG_SQRT_2PI, DensitySpec, QuadratureDomain, gamma_score


@dataclass(frozen=True)
class DiscreteSpace:
    points: np.ndarray
    p_probs: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        probs = np.asarray(self.p_probs, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "p_probs", probs)
        if pts.shape[0] != probs.size or probs.size < 2:
            raise InvalidParameter("need at least 2 points and one probability per point")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidParameter("p_probs must be nonnegative and sum to 1")

    def __len__(self):
        return self.p_probs.size

    def sample_p(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.points[rng.choice(len(self), size=n, p=self.p_probs)]

    def model_probs(self, model: EnergyModel) -> np.ndarray:
        e = ForwardPass(model, self.points).values
        w = np.exp(-(e - e.min()))
        return w / w.sum()

    def sample_q(self, model: EnergyModel, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.points[rng.choice(len(self), size=n, p=self.model_probs(model))]


def reference_space() -> tuple[EnergyModel, DiscreteSpace]:
    """The fixed 8-state test problem.

    States ``x_k = sqrt(0.6 k)``, ``k = 0..7``, under the unit Gaussian energy
    give ``E = (0, 0.3, ..., 2.1)``. The data distribution is the tent
    ``(1, 2, 3, 4, 4, 3, 2, 1) / 20``.
    """
    model = gaussian_quadratic(0.0, 1.0)
    points = np.sqrt(0.6 * np.arange(8))
    probs = np.array([1, 2, 3, 4, 4, 3, 2, 1], dtype=np.float64) / 20.0
    return model, DiscreteSpace(points, probs)


def _check_gamma(gamma):
    if gamma == 0:
        raise InvalidGamma("gamma must be nonzero for the PS-CD gradient")
    if not gamma > -1:
        raise InvalidGamma(f"gamma must be > -1, got {gamma}")


def exact_pscd_gradient_discrete(model: EnergyModel, space: DiscreteSpace, gamma: float) -> np.ndarray:
    _check_gamma(gamma)
    fp = ForwardPass(model, space.points)
    e = fp.values
    if not np.all(np.isfinite(e)):
        raise NumericalError("non-finite energy on the discrete space")
    jac = fp.param_jacobian()
    with np.errstate(divide="ignore"):
        log_p = np.log(space.p_probs)
    a = log_p - gamma * e
    w_data = np.exp(a - logsumexp(a))
    b = -(gamma + 1.0) * e
    r = np.exp(b - logsumexp(b))
    return w_data @ jac - r @ jac


def exact_pscd_gradient_enumerated(model: EnergyModel, space: DiscreteSpace, gamma: float) -> np.ndarray:
    """Term-by-term evaluation of the exact gradient, written independently of
    :func:`exact_pscd_gradient_discrete` as a cross-check."""
    _check_gamma(gamma)
    n = len(space)
    energies = []
    grads = []
    for k in range(n):
        fp = ForwardPass(model, space.points[k : k + 1])
        energies.append(float(fp.values[0]))
        grads.append(fp.param_jacobian()[0])
    shift = min(energies)
    num = np.zeros(model.n_params)
    den = 0.0
    r_num = np.zeros(model.n_params)
    z_r = 0.0
    for k in range(n):
        f = math.exp(-gamma * (energies[k] - shift))
        num += space.p_probs[k] * f * grads[k]
        den += space.p_probs[k] * f
        t = math.exp(-(gamma + 1.0) * (energies[k] - shift))
        r_num += t * grads[k]
        z_r += t
    return num / den - r_num / z_r


def pscd_estimate_from_counts(model: EnergyModel, points, pos_counts, neg_counts, cfg) -> np.ndarray:
    """The minibatch PS-CD gradient when both batches are given as per-state counts.

    A batch holding state ``k`` ``c_k`` times contributes exactly what
    :func:`pscd.estimator.pscd_gradient` computes on the expanded batch; this
    form costs ``O(#states)`` however large the batch.
    """
    _check_gamma(cfg.gamma)
    c_pos = np.asarray(pos_counts, dtype=np.float64)
    c_neg = np.asarray(neg_counts, dtype=np.float64)
    if c_pos.sum() <= 0 or c_neg.sum() <= 0:
        raise InvalidParameter("both batches need at least one point")
    fp = ForwardPass(model, points)
    e = fp.values
    jac = fp.param_jacobian()

    def weights(c):
        with np.errstate(divide="ignore"):
            a = np.log(c) - cfg.gamma * e
        return np.exp(a - logsumexp(a))

    n_pos, n_neg = c_pos.sum(), c_neg.sum()
    l2 = 2.0 * cfg.l2_coeff * e
    coeff = weights(c_pos) + l2 * c_pos / n_pos - weights(c_neg) + l2 * c_neg / n_neg
    return coeff @ jac


def measure_bounds(model: EnergyModel, space: DiscreteSpace) -> tuple[float, float]:
    """``(K, L)``: max ``|E|`` and max ``||grad_params E||`` over the space."""
    fp = ForwardPass(model, space.points)
    return float(np.max(np.abs(fp.values))), float(np.max(np.linalg.norm(fp.param_jacobian(), axis=1)))


def exact_pscd_gradient_quadrature(model: EnergyModel, p: DensitySpec, gamma: float,
                                   domain: QuadratureDomain) -> np.ndarray:
    if model.kind != GAUSSIAN:
        raise InvalidModelKind("quadrature oracle supports the 1-D gaussian model only")
    _check_gamma(gamma)
    x = domain.grid()
    fp = ForwardPass(model, x)
    e = fp.values
    jac = fp.param_jacobian()
    log_w = domain.log_weights()
    a = p.logpdf(x) - gamma * e + log_w
    b = -(gamma + 1.0) * e + log_w
    w_data = np.exp(a - logsumexp(a))
    r = np.exp(b - logsumexp(b))
    g = w_data @ jac - r @ jac
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite quadrature gradient")
    return g


def exact_cd_gradient_gaussian(model: EnergyModel, p: DensitySpec) -> np.ndarray:
    """Closed-form ``E_p[grad E] - E_q[grad E]`` for the gaussian model.

    With ``grad E = (-(x - mu)/s^2, -(x - mu)^2/s^2)`` and ``q = N(mu, s^2)``
    the model expectation is ``(0, -1)``.
    """
    if model.kind != GAUSSIAN:
        raise InvalidModelKind("closed-form CD gradient needs the gaussian model")
    mu, s2 = model.mu, model.sigma**2
    m1 = p.mean() - mu
    m2 = p.second_moment() - 2.0 * mu * p.mean() + mu**2
    return np.array([-m1 / s2, -m2 / s2 + 1.0])


def exact_gradient(model: EnergyModel, p: DensitySpec, gamma: float, domain: QuadratureDomain) -> np.ndarray:
    """Population gradient of the gamma objective (likelihood when gamma = 0)."""
    if gamma == 0:
        return exact_cd_gradient_gaussian(model, p)
    return exact_pscd_gradient_quadrature(model, p, gamma, domain)


def negative_log_likelihood(p: DensitySpec, mu: float, sigma: float) -> float:
    """``E_p[E] + log Z`` for the gaussian energy, all in closed form."""
    second = p.second_moment() - 2.0 * mu * p.mean() + mu**2
    return second / (2.0 * sigma**2) + math.log(sigma) + LOG_SQRT_2PI


def landscape_grid(p: DensitySpec, mu_grid, sigma_grid, gamma: float, domain: QuadratureDomain) -> np.ndarray:
    """Loss surface over ``(mu, sigma)``; rows follow ``mu_grid``, columns ``sigma_grid``."""
    mu_grid = np.asarray(mu_grid, dtype=np.float64).reshape(-1)
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64).reshape(-1)
    if mu_grid.size == 0 or sigma_grid.size == 0:
        raise InvalidParameter("grids must be nonempty")
    if np.any(sigma_grid <= 0):
        raise InvalidParameter("sigma grid must be strictly positive")
    if not gamma > -1:
        raise InvalidParameter(f"gamma must be > -1, got {gamma}")
    out = np.empty((mu_grid.size, sigma_grid.size))
    for i, mu in enumerate(mu_grid):
        for j, sigma in enumerate(sigma_grid):
            if gamma == 0:
                out[i, j] = negative_log_likelihood(p, mu, sigma)
            else:
                out[i, j] = -gamma_score(p, gaussian_quadratic(mu, sigma), gamma, domain).score
    return out


def default_mu_grid() -> np.ndarray:
    return np.linspace(-4.0, 4.0, 81)


def default_sigma_grid() -> np.ndarray:
    return np.linspace(0.1, 3.0, 59)


def write_landscape_csv(path, mu_grid, sigma_grid, gamma: float, values) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "sigma", "gamma", "loss"])
        for i, mu in enumerate(mu_grid):
            for j, sigma in enumerate(sigma_grid):
                w.writerow([f"{mu:.17g}", f"{sigma:.17g}", f"{gamma:.17g}", f"{values[i, j]:.17g}"])
    return path
