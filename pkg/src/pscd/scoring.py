"""Gamma-scores, gamma-divergences and Renyi entropies by 1-D quadrature.

All integrals are composite-trapezoid sums on a uniform grid. Log-integrals
are evaluated as ``logsumexp(log f + log w)`` over the grid so that large
``|gamma * E|`` never overflows.

An "energy" argument may be an :class:`~pscd.energy.EnergyModel`, a
:class:`DensitySpec` (read as ``E = -log p``), or any callable mapping a grid
array to energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .energy import EnergyModel, energy_values
from .errors import InvalidGamma, InvalidOrder, InvalidParameter, NumericalError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class QuadratureDomain:
    lo: float
    hi: float
    points: int = 4096

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidParameter(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.points) != self.points or self.points < 16:
            raise InvalidParameter(f"points must be an integer >= 16, got {self.points}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise InvalidParameter("grid spacing must be finite and positive")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.points - 1)

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, int(self.points))

    def weights(self) -> np.ndarray:
        w = np.full(int(self.points), self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def log_weights(self) -> np.ndarray:
        return np.log(self.weights())

    def refined(self, points: int) -> "QuadratureDomain":
        return QuadratureDomain(self.lo, self.hi, points)


@dataclass(frozen=True)
class DensitySpec:
    """Finite mixture of 1-D Gaussians, components given as (weight, mean, std)."""

    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise InvalidParameter("density needs at least one component")
        weights = np.array([c[0] for c in comps])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidParameter(f"mixture weights must be positive and sum to 1, got {weights}")
        if any(not (c[2] > 0 and math.isfinite(c[2])) for c in comps):
            raise InvalidParameter("component stds must be strictly positive")
        if any(not math.isfinite(c[1]) for c in comps):
            raise InvalidParameter("component means must be finite")

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "DensitySpec":
        return cls(((1.0, mean, std),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    @property
    def stds(self) -> np.ndarray:
        return np.array([c[2] for c in self.components])

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[..., None]
        z = (x - self.means) / self.stds
        terms = np.log(self.weights) - 0.5 * z**2 - np.log(self.stds) - LOG_SQRT_2PI
        return logsumexp(terms, axis=-1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def second_moment(self) -> float:
        return float(np.dot(self.weights, self.stds**2 + self.means**2))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        return rng.normal(self.means[idx], self.stds[idx])

    def default_domain(self, points: int = 4096) -> QuadratureDomain:
        return default_domain(self, points=points)


def default_domain(*densities: DensitySpec, points: int = 4096, width: float = 10.0) -> QuadratureDomain:
    """``[min mean - width*max std, max mean + width*max std]`` over all components."""
    means = np.concatenate([d.means for d in densities])
    s = max(float(d.stds.max()) for d in densities)
    return QuadratureDomain(float(means.min()) - width * s, float(means.max()) + width * s, points)


@dataclass(frozen=True)
class ScoreReport:
    gamma: float
    score: float
    log_norm_term: float
    data_term: float


def _energy_on(energy, x: np.ndarray) -> np.ndarray:
    if isinstance(energy, EnergyModel):
        e = energy_values(energy, x)
    elif isinstance(energy, DensitySpec):
        e = -energy.logpdf(x)
    elif callable(energy):
        e = np.asarray(energy(x), dtype=np.float64)
    else:
        raise TypeError(f"cannot evaluate energy of type {type(energy).__name__}")
    if not np.all(np.isfinite(e)):
        bad = int(np.flatnonzero(~np.isfinite(e))[0])
        raise NumericalError(f"non-finite energy at grid point x={x[bad]!r}")
    return e


def log_integral(log_values: np.ndarray, domain: QuadratureDomain) -> float:
    """``log of the trapezoid integral of exp(log_values)`` over ``domain``."""
    return float(logsumexp(log_values + domain.log_weights()))


def quadrature_expectation(f, density: DensitySpec, domain: QuadratureDomain) -> float:
    x = domain.grid()
    fx = np.broadcast_to(np.asarray(f(x), dtype=np.float64), x.shape)
    bad = ~np.isfinite(fx)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"integrand is non-finite at grid point {i} (x={x[i]!r})")
    return float(np.sum(domain.weights() * fx * density.pdf(x)))


def _check_gamma(gamma: float):
    if gamma == 0:
        raise InvalidGamma("gamma = 0 is the log score; use the CD / likelihood route")
    if not gamma > -1:
        raise InvalidGamma(f"gamma must be > -1, got {gamma}")


def gamma_score(p: DensitySpec, energy, gamma: float, domain: QuadratureDomain) -> ScoreReport:
    """Expected gamma-score of the unnormalized model ``exp(-E)`` under ``p``."""
    _check_gamma(gamma)
    x = domain.grid()
    e = _energy_on(energy, x)
    data_term = log_integral(p.logpdf(x) - gamma * e, domain) / gamma
    log_norm_term = log_integral(-(gamma + 1.0) * e, domain) / (gamma + 1.0)
    score = data_term - log_norm_term
    if not math.isfinite(score):
        raise NumericalError(f"gamma-score is not finite (gamma={gamma})")
    return ScoreReport(gamma=gamma, score=score, log_norm_term=log_norm_term, data_term=data_term)


def gamma_divergence(p: DensitySpec, energy, gamma: float, domain: QuadratureDomain) -> float:
    """``S_gamma(p, p) - S_gamma(p, q)``; zero iff the model matches ``p``."""
    own = gamma_score(p, p, gamma, domain).score
    return own - gamma_score(p, energy, gamma, domain).score


def log_normalizer(energy, domain: QuadratureDomain) -> float:
    return log_integral(-_energy_on(energy, domain.grid()), domain)


def log_score(p: DensitySpec, energy, domain: QuadratureDomain) -> float:
    """Expected log-likelihood ``E_p[log q]`` of the normalized model."""
    x = domain.grid()
    log_q = -_energy_on(energy, x)
    log_q = log_q - log_integral(log_q, domain)
    return float(np.sum(domain.weights() * p.pdf(x) * log_q))


def renyi_entropy(energy, order: float, domain: QuadratureDomain) -> float:
    """Renyi entropy ``(a / (1 - a)) * log ||q||_a`` of the normalized model."""
    if not order > 0 or order == 1:
        raise InvalidOrder(f"order must be positive and != 1, got {order}")
    e = _energy_on(energy, domain.grid())
    log_z = log_integral(-e, domain)
    log_norm = (log_integral(-order * e, domain) - order * log_z) / order
    return order / (1.0 - order) * log_norm


def gaussian_kl(mu1: float, std1: float, mu2: float, std2: float) -> float:
    """``KL(N(mu1, std1^2) || N(mu2, std2^2))``."""
    if not (std1 > 0 and std2 > 0):
        raise InvalidParameter("standard deviations must be positive")
    return math.log(std2 / std1) + (std1**2 + (mu1 - mu2) ** 2) / (2.0 * std2**2) - 0.5
