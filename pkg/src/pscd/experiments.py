"""Experiment runners shared by the CLI and the acceptance suite.

Each runner is a deterministic function of its arguments and a root seed;
sub-streams are derived by name with :func:`pscd.rng.derive_rng`.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import CONTAM_TARGET, TWO_D, DatasetSpec, contaminated_gaussian, sample_dataset
from .energy import EnergyModel, gaussian_quadratic, init_mlp
from .errors import InvalidParameter
from .estimator import EstimatorConfig, pscd_gradient, sample_complexity_bound
from .evaluation import MmdConfig, mmd
from .oracle import (
    default_mu_grid,
    default_sigma_grid,
    exact_pscd_gradient_discrete,
    landscape_grid,
    measure_bounds,
    pscd_estimate_from_counts,
    reference_space,
)
from .rng import derive_rng
from .sampler import LangevinConfig, NegativeSampler, langevin_chain
from .scoring import DensitySpec, gaussian_kl
from .trainer import (
    SmoothTestObjective,
    ScheduleSpec,
    TrainConfig,
    randomized_sgd_objective,
    train,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- estimator


def estimator_check(seed: int = 0, sizes=(1000, 10_000, 100_000, 1_000_000), trials: int = 16,
                    gamma: float = 1.0) -> list[tuple[int, float]]:
    """RMS relative error of the minibatch estimator against the exact gradient.

    Uses the 8-state reference space; both batches have ``N`` points, drawn
    from ``p`` and from the model. Returns ``(N, rms_relative_error)`` rows.
    """
    model, space = reference_space()
    exact = exact_pscd_gradient_discrete(model, space, gamma)
    cfg = EstimatorConfig(gamma, 0.0)
    rows = []
    for n in sizes:
        errs = []
        for k in range(trials):
            rng = derive_rng(seed, "estimator-check", int(n), k)
            est = pscd_gradient(model, space.sample_p(n, rng), space.sample_q(model, n, rng), cfg).grad
            errs.append(np.linalg.norm(est - exact) / np.linalg.norm(exact))
        rows.append((int(n), float(np.sqrt(np.mean(np.square(errs))))))
    return rows


@dataclass(frozen=True)
class ComplexityResult:
    gamma: float
    K: float
    L: float
    n: int
    trials: int
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials


def sample_complexity(seed: int = 0, gamma: float = 1.0, eps: float = 0.5, delta: float = 0.1,
                      trials: int = 200, via_counts: bool = True) -> ComplexityResult:
    """Failure rate ``P(||estimate - exact|| > eps)`` at ``N`` equal to the bound.

    ``K`` and ``L`` are measured on the reference space at the reference
    parameters. With ``via_counts`` the two batches are drawn as multinomial
    counts over the 8 states, which is exact in distribution and makes
    astronomically large ``N`` affordable.
    """
    model, space = reference_space()
    K, L = measure_bounds(model, space)
    n = int(math.ceil(sample_complexity_bound(L, K, gamma, eps, delta)))
    exact = exact_pscd_gradient_discrete(model, space, gamma)
    cfg = EstimatorConfig(gamma, 0.0)
    q = space.model_probs(model)
    failures = 0
    for k in range(trials):
        rng = derive_rng(seed, "sample-complexity", k)
        if via_counts:
            est = pscd_estimate_from_counts(model, space.points, rng.multinomial(n, space.p_probs),
                                            rng.multinomial(n, q), cfg)
        else:
            est = pscd_gradient(model, space.sample_p(n, rng), space.sample_q(model, n, rng), cfg).grad
        failures += int(np.linalg.norm(est - exact) > eps)
    return ComplexityResult(gamma, K, L, n, trials, failures)


# ---------------------------------------------------------------- landscape

WELL_SPECIFIED = DensitySpec.gaussian(0.5, 1.0)


def landscapes(gammas, target: DensitySpec = WELL_SPECIFIED, mu_grid=None, sigma_grid=None) -> dict:
    """``{gamma: loss grid}`` over the default (or given) ``(mu, sigma)`` grids."""
    mu_grid = default_mu_grid() if mu_grid is None else np.asarray(mu_grid, dtype=np.float64)
    sigma_grid = default_sigma_grid() if sigma_grid is None else np.asarray(sigma_grid, dtype=np.float64)
    domain = target.default_domain()
    return {float(g): landscape_grid(target, mu_grid, sigma_grid, g, domain) for g in gammas}


def grid_argmin(values, mu_grid=None, sigma_grid=None) -> tuple[float, float]:
    mu_grid = default_mu_grid() if mu_grid is None else mu_grid
    sigma_grid = default_sigma_grid() if sigma_grid is None else sigma_grid
    i, j = np.unravel_index(int(np.argmin(values)), np.shape(values))
    return float(mu_grid[i]), float(sigma_grid[j])


# ------------------------------------------------------------ contamination


@dataclass(frozen=True)
class ContaminationSettings:
    n: int = 100_000
    batch_size: int = 1000
    iterations: int = 1500
    step: float = 0.05


def contamination_cell(ratio: float, gamma: float, seed: int = 0,
                       settings: ContaminationSettings = ContaminationSettings()) -> tuple[float, EnergyModel]:
    """Train on contaminated data from a warm start at the clean target.

    Returns ``(KL(target || model), model)``.
    """
    data = contaminated_gaussian(settings.n, ratio, derive_rng(seed, "contamination-data").integers(2**62))
    cfg = TrainConfig(gamma=gamma, batch_size=settings.batch_size, iterations=settings.iterations,
                      schedule=ScheduleSpec("constant", settings.step), seed=seed,
                      eval_every=settings.iterations)
    model, _ = train(gaussian_quadratic(*CONTAM_TARGET), data, cfg)
    return gaussian_kl(*CONTAM_TARGET, model.mu, model.sigma), model


def contamination_table(ratios=(0.01, 0.05, 0.1, 0.2, 0.3), gammas=(0.0, 0.5, 1.0, 2.0), seed: int = 0,
                        settings: ContaminationSettings = ContaminationSettings()) -> list[tuple]:
    """Rows ``(ratio, gamma, kl, mu, sigma)``; the same data per ratio for all methods."""
    rows = []
    for r in ratios:
        for g in gammas:
            kl, m = contamination_cell(r, g, derive_rng(seed, "ratio", repr(float(r))).integers(2**62), settings)
            rows.append((float(r), float(g), kl, m.mu, m.sigma))
    return rows


# ---------------------------------------------------------------- 2-D MMD


@dataclass(frozen=True)
class MmdBenchSettings:
    """Desk-scale protocol for the 2-D benchmark.

    Each run trains an MLP energy with Adam on ``n_train`` points, with
    negatives from persistent Langevin chains. Evaluation draws ``n_eval``
    states from the final replay buffer, advances them one more chain of
    ``langevin.steps``, and compares them with ``n_eval`` held-out points.
    """

    widths: tuple[int, ...] = (2, 64, 64, 1)
    iterations: int = 1000
    batch_size: int = 128
    step: float = 1e-3
    l2_coeff: float = 0.01
    n_train: int = 20_000
    n_eval: int = 1000
    langevin: LangevinConfig = field(default_factory=LangevinConfig)


def mmd_run(dataset: str, gamma: float, seed: int, settings: MmdBenchSettings = MmdBenchSettings()) -> float:
    data = sample_dataset(DatasetSpec(dataset, settings.n_train, derive_rng(seed, "train-data", dataset).integers(2**62)))
    held = sample_dataset(DatasetSpec(dataset, settings.n_eval, derive_rng(seed, "held-out", dataset).integers(2**62)))
    cfg = TrainConfig(gamma=gamma, batch_size=settings.batch_size, iterations=settings.iterations,
                      schedule=ScheduleSpec("constant", settings.step), l2_coeff=settings.l2_coeff,
                      sampler=settings.langevin, seed=seed, eval_every=settings.iterations,
                      probe_size=settings.batch_size, optimizer="adam")
    sampler = NegativeSampler(cfg.sampler, 2)
    model, _ = train(init_mlp(settings.widths, seed), data, cfg, sampler=sampler)
    rng = derive_rng(seed, "generate", dataset)
    buf = sampler.buffer.entries
    x0 = buf[rng.choice(len(buf), settings.n_eval, replace=len(buf) < settings.n_eval)]
    samples = langevin_chain(model, x0, cfg.sampler, rng)
    return mmd(samples, held, MmdConfig())


def _mmd_job(args):
    logging.getLogger("pscd.estimator").setLevel(logging.ERROR)
    return mmd_run(*args)


def mmd_bench(datasets=TWO_D, gammas=(0.0, 1.0), seeds=range(5), settings: MmdBenchSettings = MmdBenchSettings(),
              threads: int = 1) -> list[tuple]:
    """Rows ``(dataset, method, gamma, seed, mmd_x1e4)``, in a fixed order."""
    jobs = [(d, float(g), int(s), settings) for d in datasets for g in gammas for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(_mmd_job, jobs))
    else:
        values = [_mmd_job(j) for j in jobs]
    return [(d, "CD" if g == 0 else "PS-CD", g, s, v) for (d, g, s, _), v in zip(jobs, values)]


def mmd_summary(rows) -> dict:
    """``{(dataset, gamma): (mean, std)}`` over seeds."""
    cells: dict = {}
    for d, _, g, _, v in rows:
        cells.setdefault((d, g), []).append(v)
    return {k: (float(np.mean(v)), float(np.std(v))) for k, v in cells.items()}


# ----------------------------------------------------------- randomized SGD


def sgd_convergence(horizons=(64, 256, 1024), seeds: int = 50, alpha: float = 0.5, M: float = 10.0,
                    theta0: float = 3.0, seed: int = 0,
                    objective: SmoothTestObjective = SmoothTestObjective()) -> list[tuple[int, float]]:
    """Mean ``|L'(theta_Z)|^2`` over ``seeds`` runs for each horizon ``T``.

    The schedule is the constant ``min((1 - alpha)/M, 1/sqrt(T))``.
    """
    if objective.smoothness > M:
        raise InvalidParameter(f"M = {M} is below the objective's smoothness {objective.smoothness}")
    sched = ScheduleSpec("capped_sqrt", 1.0, alpha, M)
    rows = []
    for T in horizons:
        sq = []
        for s in range(seeds):
            theta, _ = randomized_sgd_objective(objective, theta0, sched, T, alpha, M,
                                                derive_rng(seed, "sgd", int(T), s))
            sq.append(objective.grad(theta) ** 2)
        rows.append((int(T), float(np.mean(sq))))
    return rows
