"""Synthetic data generators.

2-D sets live in ``[-4, 4]^2`` (Gaussian noise may spill slightly; outputs are
clipped to ``[-4.5, 4.5]^2``). Constructions, with all noise Gaussian and
measured in output units:

* cosine: ``x ~ U[-4, 4]``, ``y = 2 cos(pi x / 2) + 0.3 n``.
* swissroll: ``t = 1.5 pi (1 + 2u)``, point ``(t cos t, t sin t)`` scaled by
  ``4 / (4.5 pi)``, plus noise 0.1.
* moon: two interleaved half circles ``(cos a, sin a)`` and
  ``(1 - cos a, 0.5 - sin a)``, centred at ``(0.5, 0.25)``, scaled by 2, plus
  noise 0.1.
* mog2d: 8 equal-weight Gaussians on a radius-3 ring, std 0.2.
* funnel: ``v ~ N(0, 1.5^2)``, ``x | v ~ N(0, exp(v))``, point ``(x, v)``,
  truncated to ``[-4, 4]^2`` by rejection.
* rings: radius 1 or 2.5 with equal probability, uniform angle, radial noise 0.08.

1-D sets: ``mog1d`` (a Gaussian mixture) and ``contaminated`` (a Gaussian
target mixed with a narrow Gaussian contaminant).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .rng import make_rng
from .scoring import DensitySpec

TWO_D = ("cosine", "swissroll", "moon", "mog2d", "funnel", "rings")
ONE_D = ("mog1d", "contaminated")
BOX = 4.0
CLIP = 4.5

MISSPECIFIED_MOG = DensitySpec(((0.5, -1.5, 0.4), (0.5, 1.2, 0.6)))

# Target N(-1, 0.5) and contaminant N(2, 0.05), second argument a variance.
CONTAM_TARGET = (-1.0, math.sqrt(0.5))
CONTAM_NOISE = (2.0, math.sqrt(0.05))


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TWO_D + ONE_D:
            raise InvalidSpec(f"unknown dataset {self.name!r}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidSpec(f"n must be a positive integer, got {self.n}")

    @property
    def dim(self) -> int:
        return 2 if self.name in TWO_D else 1


def _cosine(n, rng):
    x = rng.uniform(-BOX, BOX, n)
    y = 2.0 * np.cos(0.5 * np.pi * x) + 0.3 * rng.standard_normal(n)
    return np.stack([x, y], axis=1)


def _swissroll(n, rng):
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) * (BOX / (4.5 * np.pi))
    return pts + 0.1 * rng.standard_normal((n, 2))


def _moon(n, rng):
    a = np.pi * rng.random(n)
    upper = rng.random(n) < 0.5
    x = np.where(upper, np.cos(a), 1.0 - np.cos(a))
    y = np.where(upper, np.sin(a), 0.5 - np.sin(a))
    pts = (np.stack([x, y], axis=1) - [0.5, 0.25]) * 2.0
    return pts + 0.1 * rng.standard_normal((n, 2))


def mog2d_centers() -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(8) / 8
    return 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _mog2d(n, rng):
    k = rng.integers(0, 8, n)
    return mog2d_centers()[k] + 0.2 * rng.standard_normal((n, 2))


def _funnel(n, rng):
    out = np.empty((0, 2))
    while out.shape[0] < n:
        m = 2 * (n - out.shape[0]) + 16
        v = 1.5 * rng.standard_normal(m)
        x = np.exp(0.5 * v) * rng.standard_normal(m)
        pts = np.stack([x, v], axis=1)
        keep = np.all(np.abs(pts) <= BOX, axis=1)
        out = np.concatenate([out, pts[keep]])
    return out[:n]


def _rings(n, rng):
    r = np.where(rng.random(n) < 0.5, 1.0, 2.5) + 0.08 * rng.standard_normal(n)
    a = 2.0 * np.pi * rng.random(n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


_GENERATORS_2D = {
    "cosine": _cosine,
    "swissroll": _swissroll,
    "moon": _moon,
    "mog2d": _mog2d,
    "funnel": _funnel,
    "rings": _rings,
}


def sample_dataset(spec: DatasetSpec) -> np.ndarray:
    """``(n, 2)`` points for 2-D sets, ``(n,)`` for 1-D ones."""
    rng = make_rng(spec.seed)
    if spec.name in _GENERATORS_2D:
        if spec.params:
            raise InvalidSpec(f"{spec.name} takes no parameters")
        pts = np.clip(_GENERATORS_2D[spec.name](spec.n, rng), -CLIP, CLIP)
        assert np.all(np.isfinite(pts))
        return pts
    if spec.name == "mog1d":
        comps = spec.params.get("components", MISSPECIFIED_MOG.components)
        try:
            density = DensitySpec(tuple(tuple(c) for c in comps))
        except (ValueError, TypeError) as exc:
            raise InvalidSpec(str(exc)) from exc
        return density.sample(spec.n, rng)
    unknown = set(spec.params) - {"ratio"}
    if unknown:
        raise InvalidSpec(f"unknown contamination parameters {sorted(unknown)}")
    return _contaminated(spec.n, spec.params.get("ratio", 0.1), rng)


def contamination_density(ratio: float) -> DensitySpec:
    """The contaminated data density ``(1 - ratio) p + ratio * noise``."""
    _check_ratio(ratio)
    if ratio == 0:
        return DensitySpec.gaussian(*CONTAM_TARGET)
    return DensitySpec(((1.0 - ratio,) + CONTAM_TARGET, (ratio,) + CONTAM_NOISE))


def _check_ratio(ratio):
    if not 0 <= ratio < 0.5:
        raise InvalidSpec(f"contamination ratio must lie in [0, 0.5), got {ratio}")


def _contaminated(n, ratio, rng):
    _check_ratio(ratio)
    noisy = rng.random(n) < ratio
    z = rng.standard_normal(n)
    return np.where(noisy, CONTAM_NOISE[0] + CONTAM_NOISE[1] * z, CONTAM_TARGET[0] + CONTAM_TARGET[1] * z)


def contaminated_gaussian(n: int, ratio: float, seed: int) -> np.ndarray:
    """Each point from the contaminant with probability ``ratio``, else from the target."""
    return sample_dataset(DatasetSpec("contaminated", n, seed, {"ratio": ratio}))


def write_dataset_csv(path, points) -> Path:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(pts.shape[1])])
        for row in pts:
            w.writerow([f"{v:.17g}" for v in row])
    return path


def write_dataset_binary(path, points) -> Path:
    path = Path(path)
    path.write_bytes(np.asarray(points, dtype="<f8").tobytes())
    return path
