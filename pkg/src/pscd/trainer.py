"""Training loops: minibatch PS-CD / CD and randomized-stopping SGD.

Randomness inside :func:`train` comes from three streams derived from
``cfg.seed``: ``"data"`` (minibatch indices), ``"sampler"`` (chain starts and
Langevin noise) and ``"probe"`` (gradient-norm probes, which never touch the
replay buffer). :func:`randomized_sgd` draws its stopping index from a fourth
stream, ``"stop"``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .energy import GAUSSIAN, EnergyModel
from .errors import DivergedChain, InvalidParameter, InvalidSchedule, NumericalError
from .estimator import EstimatorConfig, estimate_gradient
from .oracle import exact_gradient
from .rng import derive_rng
from .sampler import LangevinConfig, NegativeSampler
from .scoring import DensitySpec

CONSTANT = "constant"
CAPPED_SQRT = "capped_sqrt"
ONE_OVER_T = "one_over_t"
INCREASING_SQRT = "increasing_sqrt"
DECREASING_QUARTER = "decreasing_quarter"
SCHEDULES = (CONSTANT, CAPPED_SQRT, ONE_OVER_T, INCREASING_SQRT, DECREASING_QUARTER)
EXACT = "exact"


@dataclass(frozen=True)
class ScheduleSpec:
    """Step sizes ``eta_t`` for ``t = 1..T``.

    ========================  ==========================================
    kind                      eta_t
    ========================  ==========================================
    ``constant``              ``base``
    ``capped_sqrt``           ``min((1 - alpha)/M, base / sqrt(T))``
    ``one_over_t``            ``base / t``
    ``increasing_sqrt``       ``base * sqrt(t) / T``, capped at ``(1 - alpha)/M`` if given
    ``decreasing_quarter``    ``min((1 - alpha)/M, base / (t T)^(1/4))``
    ========================  ==========================================

    ``base = 1`` gives the textbook forms of the last four.
    """

    kind: str = CONSTANT
    base: float = 0.01
    alpha: float | None = None
    M: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise InvalidParameter(f"unknown schedule {self.kind!r}")
        if not (self.base >= 0 and math.isfinite(self.base)):
            raise InvalidParameter(f"schedule base must be finite and >= 0, got {self.base}")
        needs_cap = self.kind in (CAPPED_SQRT, DECREASING_QUARTER)
        if needs_cap and (self.alpha is None or self.M is None):
            raise InvalidParameter(f"{self.kind} schedule needs alpha and M")
        if (self.alpha is None) != (self.M is None):
            raise InvalidParameter("alpha and M must be given together")
        if self.alpha is not None and not (0 < self.alpha < 1 and self.M > 0):
            raise InvalidParameter("need 0 < alpha < 1 and M > 0")

    @property
    def cap(self) -> float:
        return math.inf if self.alpha is None else (1.0 - self.alpha) / self.M


def step_sizes(spec: ScheduleSpec, T: int) -> np.ndarray:
    """``eta_1 .. eta_T`` as an array of length ``T``."""
    if int(T) != T or T < 1:
        raise InvalidParameter(f"T must be a positive integer, got {T}")
    t = np.arange(1, T + 1, dtype=np.float64)
    if spec.kind == CONSTANT:
        eta = np.full(T, spec.base)
    elif spec.kind == CAPPED_SQRT:
        eta = np.full(T, spec.base / math.sqrt(T))
    elif spec.kind == ONE_OVER_T:
        eta = spec.base / t
    elif spec.kind == INCREASING_SQRT:
        eta = spec.base * np.sqrt(t) / T
    else:
        eta = spec.base / (t * T) ** 0.25
    return np.minimum(eta, spec.cap)


def pz_distribution(etas, alpha: float, M: float) -> np.ndarray:
    """Stopping-index law ``p_Z(t)`` proportional to ``2(1 - alpha) eta_t - M eta_t^2``.

    Every ``eta_t`` must lie strictly inside ``(0, 2(1 - alpha)/M)``; the first
    violation raises :class:`InvalidSchedule` with its 1-based index.
    """
    if not (0 < alpha < 1 and M > 0):
        raise InvalidParameter("need 0 < alpha < 1 and M > 0")
    etas = np.asarray(etas, dtype=np.float64).reshape(-1)
    if etas.size == 0:
        raise InvalidParameter("empty schedule")
    limit = 2.0 * (1.0 - alpha) / M
    bad = np.flatnonzero(~((etas > 0) & (etas < limit)))
    if bad.size:
        t = int(bad[0])
        raise InvalidSchedule(t + 1, float(etas[t]), limit)
    w = 2.0 * (1.0 - alpha) * etas - M * etas**2
    return w / w.sum()


@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    ``gamma = 0`` selects CD. ``sampler`` is a :class:`LangevinConfig` or
    ``"exact"``. ``reference`` (1-D only) switches the traced gradient norm to
    the exact population gradient; otherwise it is the estimator norm on a
    probe batch of ``probe_size``. ``optimizer = "adam"`` is an adaptive-moment
    alternative to plain SGD, outside the convergence theory.
    """

    gamma: float = 1.0
    batch_size: int = 100
    iterations: int = 1000
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    l2_coeff: float = 0.0
    sampler: LangevinConfig | str = EXACT
    seed: int = 0
    eval_every: int = 100
    reference: DensitySpec | None = None
    probe_size: int = 4096
    optimizer: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        EstimatorConfig(self.gamma, self.l2_coeff)
        for name in ("batch_size", "iterations", "eval_every", "probe_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameter(f"{name} must be a positive integer, got {v}")
        if self.sampler != EXACT and not isinstance(self.sampler, LangevinConfig):
            raise InvalidParameter(f"sampler must be a LangevinConfig or 'exact', got {self.sampler!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParameter(f"unknown optimizer {self.optimizer!r}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1 and self.adam_eps > 0):
            raise InvalidParameter("invalid adam settings")

    @property
    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(self.gamma, self.l2_coeff)


@dataclass
class TrainTrace:
    iterations: list[int] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    metrics: list[float | None] = field(default_factory=list)
    params: list[np.ndarray] = field(default_factory=list)

    def record(self, t, grad_norm, loss, metric, params):
        if self.iterations and t <= self.iterations[-1]:
            raise InvalidParameter("trace iterations must increase")
        self.iterations.append(int(t))
        self.grad_norms.append(float(grad_norm))
        self.losses.append(float(loss))
        self.metrics.append(None if metric is None else float(metric))
        self.params.append(np.array(params, copy=True))

    def __len__(self):
        return len(self.iterations)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "grad_norm", "loss", "metric"])
            for t, g, l, m in zip(self.iterations, self.grad_norms, self.losses, self.metrics):
                w.writerow([t, f"{g:.17g}", f"{l:.17g}", "" if m is None else f"{m:.17g}"])
        return path


class _Adam:
    def __init__(self, n, betas, eps):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.b1, self.b2 = betas
        self.eps = eps
        self.k = 0

    def direction(self, g):
        self.k += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * g
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g
        m_hat = self.m / (1.0 - self.b1**self.k)
        v_hat = self.v / (1.0 - self.b2**self.k)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def _data_source(data):
    """Normalize ``data`` into ``draw(n, rng) -> batch``."""
    if callable(data):
        return data
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape[0] < 1:
        raise InvalidParameter("training data is empty")
    return lambda n, rng: arr[rng.integers(0, arr.shape[0], size=n)]


def _population_grad_norm(model, cfg, domain):
    return float(np.linalg.norm(exact_gradient(model, cfg.reference, cfg.gamma, domain)))


def _probe_grad_norm(model, draw, sampler, cfg, rng):
    pos = draw(cfg.probe_size, rng)
    neg = sampler.draw(model, cfg.probe_size, rng, pos=pos, push=False)
    return float(np.linalg.norm(estimate_gradient(model, pos, neg, cfg.estimator).grad))


def train(model: EnergyModel, data, cfg: TrainConfig, etas=None,
          metric_fn: Callable[[EnergyModel], float] | None = None,
          sampler: NegativeSampler | None = None):
    """Fit ``model`` by minibatch PS-CD (``gamma != 0``) or CD (``gamma == 0``).

    ``data`` is an array of points (minibatches are drawn with replacement) or
    a callable ``draw(n, rng)``. ``etas`` overrides the configured schedule
    with explicit step sizes, one per iteration. Passing ``sampler`` lets the
    caller keep (and later read) the replay buffer; by default a fresh one is
    built from ``cfg.sampler``.

    Returns ``(model, trace)``. On :class:`DivergedChain` or
    :class:`NumericalError` the exception is re-raised with ``.trace`` and
    ``.model`` attached, holding the state reached before the failure.
    """
    T = cfg.iterations
    etas = step_sizes(cfg.schedule, T) if etas is None else np.asarray(etas, dtype=np.float64)
    if etas.shape != (T,):
        raise InvalidParameter(f"need {T} step sizes, got shape {etas.shape}")
    draw = _data_source(data)
    rng_data = derive_rng(cfg.seed, "data")
    rng_sampler = derive_rng(cfg.seed, "sampler")
    rng_probe = derive_rng(cfg.seed, "probe")
    if sampler is None:
        sampler = NegativeSampler(cfg.sampler, model.input_dim)
    est_cfg = cfg.estimator
    domain = None
    if cfg.reference is not None and model.kind == GAUSSIAN:
        domain = cfg.reference.default_domain()
    adam = _Adam(model.n_params, cfg.adam_betas, cfg.adam_eps) if cfg.optimizer == "adam" else None
    trace = TrainTrace()

    theta = model.params.copy()
    try:
        for t in range(1, T + 1):
            pos = draw(cfg.batch_size, rng_data)
            neg = sampler.draw(model, cfg.batch_size, rng_sampler, pos=pos)
            est = estimate_gradient(model, pos, neg, est_cfg)
            step = est.grad if adam is None else adam.direction(est.grad)
            theta = theta - etas[t - 1] * step
            if not np.all(np.isfinite(theta)):
                raise NumericalError(f"parameters became non-finite at iteration {t}")
            model = model.with_params(theta)
            if t % cfg.eval_every == 0 or t == T:
                if domain is not None:
                    gnorm = _population_grad_norm(model, cfg, domain)
                else:
                    gnorm = _probe_grad_norm(model, draw, sampler, cfg, rng_probe)
                metric = None if metric_fn is None else metric_fn(model)
                trace.record(t, gnorm, est.loss_value, metric, theta)
    except (DivergedChain, NumericalError) as exc:
        exc.trace = trace
        exc.model = model
        raise
    return model, trace


def randomized_sgd(model: EnergyModel, data, cfg: TrainConfig, alpha: float = 0.5, M: float = 10.0,
                   metric_fn=None):
    """Train for a random number of iterations ``Z ~ p_Z`` and return ``theta_Z``.

    ``p_Z`` is built from the full ``T = cfg.iterations`` schedule; the run
    follows that schedule up to ``Z``. Returns ``(model, trace, Z)``.
    """
    etas = step_sizes(cfg.schedule, cfg.iterations)
    pz = pz_distribution(etas, alpha, M)
    z = int(derive_rng(cfg.seed, "stop").choice(cfg.iterations, p=pz)) + 1
    sub = replace(cfg, iterations=z, eval_every=min(cfg.eval_every, z))
    out, trace = train(model, data, sub, etas=etas[:z], metric_fn=metric_fn)
    return out, trace, z


@dataclass(frozen=True)
class SmoothTestObjective:
    """Non-convex 1-D objective ``L(t) = t^2/2 + a cos t`` with a ratio-type gradient oracle.

    ``L'(t) = t - a sin t`` and ``|L''| <= 1 + a``. The noisy gradient replaces
    ``sin t`` by ``sum(u_i sin t + v_i) / sum(u_i)`` with ``u_i ~ U(0.5, 1.5)``
    and ``v_i ~ N(0, noise^2)``: biased for finite ``batch`` but consistent as
    ``batch`` grows, mirroring a self-normalized estimator.
    """

    a: float = 1.5
    noise: float = 1.0
    batch: int = 8

    @property
    def smoothness(self) -> float:
        return 1.0 + abs(self.a)

    def value(self, t):
        return 0.5 * t * t + self.a * np.cos(t)

    def grad(self, t):
        return t - self.a * np.sin(t)

    def noisy_grad(self, t, rng):
        u = rng.uniform(0.5, 1.5, self.batch)
        v = self.noise * rng.standard_normal(self.batch)
        return t - self.a * float(np.sum(u * math.sin(t) + v) / np.sum(u))


def randomized_sgd_objective(objective: SmoothTestObjective, theta0: float, schedule: ScheduleSpec, T: int,
                             alpha: float, M: float, rng: np.random.Generator) -> tuple[float, int]:
    """Randomized-stopping SGD on a scalar objective; returns ``(theta_Z, Z)``."""
    etas = step_sizes(schedule, T)
    pz = pz_distribution(etas, alpha, M)
    z = int(rng.choice(T, p=pz)) + 1
    theta = float(theta0)
    for t in range(z):
        theta -= etas[t] * objective.noisy_grad(theta, rng)
    return theta, z
