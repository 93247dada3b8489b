"""Negative-sample generation: Langevin chains, a replay buffer, exact Gaussian draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import GAUSSIAN, EnergyModel, ForwardPass, as_batch
from .errors import DivergedChain, InvalidModelKind, InvalidParameter, InvalidState, NumericalError

INIT_BUFFER = "buffer"
INIT_UNIFORM = "uniform"
INIT_DATA = "data"


@dataclass(frozen=True)
class LangevinConfig:
    """Settings for ``x <- x - (eps/2) grad E(x) + s * xi``.

    ``noise_scale`` overrides ``s = sqrt(eps)`` when set (0 gives pure gradient
    descent). ``init`` picks where chains start: a persistent replay buffer,
    a fixed uniform box ``[lo, hi]^d`` (short-run chains), or the data batch.
    """

    steps: int = 60
    step_size: float = 0.01
    noise_scale: float | None = None
    init: str = INIT_BUFFER
    lo: float = -4.0
    hi: float = 4.0
    buffer_size: int = 10000
    reinit_prob: float = 0.05

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParameter("steps must be a positive integer")
        if not self.step_size > 0:
            raise InvalidParameter("step_size must be positive")
        if self.noise_scale is not None and not self.noise_scale >= 0:
            raise InvalidParameter("noise_scale must be nonnegative")
        if self.init not in (INIT_BUFFER, INIT_UNIFORM, INIT_DATA):
            raise InvalidParameter(f"unknown init mode {self.init!r}")
        if not self.lo < self.hi:
            raise InvalidParameter("uniform bounds must satisfy lo < hi")

    @property
    def noise(self) -> float:
        return float(np.sqrt(self.step_size)) if self.noise_scale is None else float(self.noise_scale)


def langevin_chain(model: EnergyModel, x0, cfg: LangevinConfig, rng: np.random.Generator,
                   keep_last: int = 0):
    """Run ``cfg.steps`` Langevin updates from ``x0``.

    ``x0`` may be a single point or an ``(N, d)`` batch of independent chains.
    The result has the shape of ``x0``. With ``keep_last > 0`` the states after
    each of the final ``keep_last`` steps are also returned, stacked along a
    new leading axis.
    """
    shape = np.shape(x0)
    x = as_batch(model, x0).copy()
    if not np.all(np.isfinite(x)):
        raise DivergedChain(0, "initial state is not finite")
    half = 0.5 * cfg.step_size
    s = cfg.noise
    trace = []
    for t in range(1, cfg.steps + 1):
        try:
            grad = ForwardPass(model, x).input_grad()
        except NumericalError as exc:
            raise DivergedChain(t, f"chain state became non-finite at step {t}: {exc}") from exc
        x = x - half * grad
        if s > 0:
            x = x + s * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise DivergedChain(t)
        if keep_last and t > cfg.steps - keep_last:
            trace.append(x.copy())
    out = x.reshape(shape)
    if keep_last:
        return out, np.stack(trace).reshape((len(trace),) + shape)
    return out


@dataclass
class ReplayBuffer:
    """Bounded store of persistent chain states.

    Draws restart from ``U[lo, hi]^dim`` with probability ``reinit_prob`` (and
    always while empty). Overflow evicts uniformly random existing entries;
    freshly pushed states are always kept (the newest ``capacity`` of them if
    a single push exceeds the capacity).
    """

    capacity: int
    dim: int
    reinit_prob: float = 0.05
    lo: float = -4.0
    hi: float = 4.0
    entries: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.capacity < 1 or self.dim < 1:
            raise InvalidParameter("capacity and dim must be positive")
        if not 0 <= self.reinit_prob <= 1:
            raise InvalidParameter("reinit_prob must lie in [0, 1]")
        if self.entries is None:
            self.entries = np.empty((0, self.dim))

    def __len__(self):
        return self.entries.shape[0]


def buffer_draw(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise InvalidParameter("must draw at least one state")
    fresh = rng.uniform(buffer.lo, buffer.hi, size=(n, buffer.dim))
    if len(buffer) == 0:
        return fresh
    reinit = rng.random(n) < buffer.reinit_prob
    picks = buffer.entries[rng.integers(0, len(buffer), size=n)]
    return np.where(reinit[:, None], fresh, picks)


def buffer_push(buffer: ReplayBuffer, states, rng: np.random.Generator) -> None:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states.reshape(-1, buffer.dim) if buffer.dim == 1 else states.reshape(1, -1)
    if states.ndim != 2 or states.shape[1] != buffer.dim:
        raise InvalidState(f"states must have dimension {buffer.dim}, got shape {states.shape}")
    if not np.all(np.isfinite(states)):
        raise InvalidState("cannot store non-finite states")
    if states.shape[0] >= buffer.capacity:
        buffer.entries = states[-buffer.capacity :].copy()
        return
    keep_old = buffer.capacity - states.shape[0]
    old = buffer.entries
    if old.shape[0] > keep_old:
        old = old[np.sort(rng.choice(old.shape[0], size=keep_old, replace=False))]
    buffer.entries = np.concatenate([old, states])


def gaussian_exact_sample(model: EnergyModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from ``N(mu, sigma^2)``, exactly the model density."""
    if model.kind != GAUSSIAN:
        raise InvalidModelKind(f"exact sampling needs a gaussian model, got {model.kind!r}")
    if n < 0:
        raise InvalidParameter("n must be nonnegative")
    return model.mu + model.sigma * rng.standard_normal(n)


class NegativeSampler:
    """Stateful source of negatives for a training run.

    ``cfg`` is either a :class:`LangevinConfig` or the string ``"exact"``
    (gaussian models only).
    """

    def __init__(self, cfg, dim: int):
        self.cfg = cfg
        self.buffer = None
        if isinstance(cfg, LangevinConfig) and cfg.init == INIT_BUFFER:
            self.buffer = ReplayBuffer(cfg.buffer_size, dim, cfg.reinit_prob, cfg.lo, cfg.hi)

    def draw(self, model: EnergyModel, n: int, rng: np.random.Generator, pos=None,
             push: bool = True) -> np.ndarray:
        """``n`` negatives; ``push=False`` leaves the buffer untouched (for probes)."""
        cfg = self.cfg
        if cfg == "exact":
            return gaussian_exact_sample(model, n, rng)
        if cfg.init == INIT_BUFFER:
            x0 = buffer_draw(self.buffer, n, rng)
        elif cfg.init == INIT_UNIFORM:
            x0 = rng.uniform(cfg.lo, cfg.hi, size=(n, model.input_dim))
        else:
            if pos is None:
                raise InvalidParameter("data-initialized chains need the positive batch")
            x0 = as_batch(model, pos).copy()
        x = langevin_chain(model, x0, cfg, rng)
        if push and self.buffer is not None:
            buffer_push(self.buffer, x, rng)
        return x
