"""Sample-based metrics: MMD with a Gaussian kernel and 2-D histograms.

The MMD is the biased V-statistic, so two identical sample sets score exactly
zero. Absolute values depend on the bandwidth protocol and are only
meaningful relative to each other.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput, InvalidParameter

log = logging.getLogger(__name__)

MEDIAN = "median"
BLOCK = 2048


@dataclass(frozen=True)
class MmdConfig:
    """``bandwidth`` is ``"median"`` or a positive float."""

    bandwidth: str | float = MEDIAN
    report_scale: float = 1e4

    def __post_init__(self):
        if self.bandwidth != MEDIAN:
            if isinstance(self.bandwidth, str) or not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
                raise InvalidParameter(f"bandwidth must be 'median' or a positive number, got {self.bandwidth!r}")
        if not (self.report_scale > 0 and math.isfinite(self.report_scale)):
            raise InvalidParameter("report_scale must be positive")


def _as_points(x, name):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be a sequence of points")
    if a.shape[0] < 2:
        raise InvalidInput(f"{name} needs at least 2 samples, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite values")
    return a


def _sqdist(a, b):
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_distance(z) -> float:
    """Median of the pairwise Euclidean distances ``i < j`` (exact, blockwise)."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    parts = []
    for i in range(0, n, BLOCK):
        d = _sqdist(z[i : i + BLOCK], z)
        rows = np.arange(i, min(i + BLOCK, n))[:, None]
        parts.append(np.sqrt(d[np.arange(n)[None, :] > rows]))
    return float(np.median(np.concatenate(parts)))


def _kernel_mean(a, b, h):
    # fixed block order keeps the reduction deterministic
    total = 0.0
    for i in range(0, a.shape[0], BLOCK):
        total += float(np.sum(np.exp(-_sqdist(a[i : i + BLOCK], b) / (2.0 * h * h))))
    return total / (a.shape[0] * b.shape[0])


def bandwidth_for(x, y, cfg: MmdConfig) -> float:
    if cfg.bandwidth != MEDIAN:
        return float(cfg.bandwidth)
    h = median_distance(np.concatenate([x, y]))
    if h <= 0:
        log.warning("median pairwise distance is zero; falling back to bandwidth 1")
        return 1.0
    return h


def mmd(x, y, cfg: MmdConfig = MmdConfig()) -> float:
    """Scaled squared MMD ``mean k(x,x) + mean k(y,y) - 2 mean k(x,y)``."""
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.shape[1] != y.shape[1]:
        raise InvalidInput(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    # canonical argument order makes mmd(x, y) == mmd(y, x) bit for bit
    if (y.shape[0], y.tobytes()) < (x.shape[0], x.tobytes()):
        x, y = y, x
    h = bandwidth_for(x, y, cfg)
    kxx = _kernel_mean(x, x, h)
    kyy = _kernel_mean(y, y, h)
    kxy = _kernel_mean(x, y, h)
    return (kxx + kyy - 2.0 * kxy) * cfg.report_scale


@dataclass(frozen=True)
class Histogram2D:
    counts: np.ndarray  # (bins, bins), row index follows the second coordinate
    overflow: int
    lo: float
    hi: float

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow


def histogram2d(samples, bins: int, range_: tuple[float, float] = (-4.0, 4.0)) -> Histogram2D:
    """Counts on a ``bins x bins`` grid over the square ``range_^2``.

    Rows follow the second coordinate and columns the first, so ``counts``
    prints like an image with ``y`` increasing downward. Points outside the
    closed square are tallied in ``overflow``.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.size == 0:
        raise InvalidInput("histogram of an empty sample")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"samples must have shape (n, 2), got {pts.shape}")
    if int(bins) != bins or bins < 2:
        raise InvalidParameter(f"bins must be an integer >= 2, got {bins}")
    lo, hi = map(float, range_)
    if not lo < hi:
        raise InvalidParameter("range must satisfy lo < hi")
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    idx = np.floor((pts[inside] - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.minimum(idx, bins - 1)
    counts = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(counts, (idx[:, 1], idx[:, 0]), 1)
    return Histogram2D(counts=counts, overflow=int((~inside).sum()), lo=lo, hi=hi)


def write_histogram_csv(path, hist: Histogram2D) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in hist.counts:
            w.writerow([int(c) for c in row])
        w.writerow(["overflow", hist.overflow])
    return path


METRIC_HEADER = ("dataset", "method", "gamma", "seed", "mmd_x1e4")


def write_metrics_csv(path, rows) -> Path:
    """Rows of ``(dataset, method, gamma, seed, mmd_x1e4)``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        for dataset, method, gamma, seed, value in rows:
            w.writerow([dataset, method, f"{gamma:.17g}", int(seed), f"{value:.17g}"])
    return path
