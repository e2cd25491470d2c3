"""Evaluation statistics: relative MSE, sliced Wasserstein distance over
Laplacian-pyramid patch descriptors, empirical semivariograms with ensemble
envelopes, and mass-preservation scatter reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .fields import GridField, average_pool

__all__ = [
    "relative_mse",
    "pearson",
    "sliced_w1_1d",
    "SwdParams",
    "swd",
    "SemivariogramCurve",
    "semivariogram",
    "semivariogram_envelope",
    "MassReport",
    "mass_preservation",
]


def relative_mse(pred: GridField, truth: GridField, denominator: str = "auto") -> float:
    """Mean squared error divided by the average ground-truth value.

    denominator: "mean" divides by the plain mean of the truth values,
    "mean_abs" by the mean absolute value (keeps the ratio positive for
    signed data such as wind u/v), "auto" picks mean_abs whenever the truth
    contains negative values.
    """
    if pred.values.shape != truth.values.shape:
        raise ValueError(f"shape mismatch: pred {pred.values.shape} vs truth {truth.values.shape}")
    t = truth.values
    if denominator == "auto":
        denominator = "mean_abs" if (t < 0).any() else "mean"
    if denominator == "mean":
        denom = float(t.mean())
    elif denominator == "mean_abs":
        denom = float(np.abs(t).mean())
    else:
        raise ValueError(f"unknown denominator mode {denominator!r}")
    if denom == 0.0:
        raise ValueError("truth has zero mean; relative MSE is undefined")
    mse = float(np.mean((pred.values - t) ** 2))
    return mse / denom


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance; correlation is undefined")
    return float(dx @ dy) / (sx * sy)


def sliced_w1_1d(a, b) -> float:
    """Exact 1-D Wasserstein-1 distance between equal-size samples:
    mean absolute difference of the sorted sequences."""
    av = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    bv = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if av.shape != bv.shape:
        raise ValueError(f"length mismatch: {av.shape[0]} vs {bv.shape[0]}")
    if av.shape[0] == 0:
        raise ValueError("empty sample")
    return float(np.mean(np.abs(av - bv)))


@dataclass(frozen=True)
class SwdParams:
    """Knobs for the pyramid/patch SWD; values follow the ProGAN recipe."""

    pyramid_floor: int = 16
    patch_size: int = 7
    descriptors_per_level: int = 128
    n_directions: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.pyramid_floor < 1 or self.patch_size < 1 or self.n_directions < 1:
            raise ValueError("pyramid_floor, patch_size and n_directions must be positive")
        if self.descriptors_per_level < 1:
            raise ValueError("descriptors_per_level must be positive")


# 5-tap binomial kernel, the classic Burt-Adelson pyramid filter
_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PYR_KERNEL_2D = np.outer(_PYR_KERNEL, _PYR_KERNEL)


def _pyr_down(img: np.ndarray) -> np.ndarray:
    blurred = convolve(img, _PYR_KERNEL_2D, mode="mirror")
    return blurred[::2, ::2]


def _pyr_up(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    up = np.zeros((h * 2, w * 2), dtype=img.dtype)
    up[::2, ::2] = img
    return convolve(up, _PYR_KERNEL_2D * 4.0, mode="mirror")


def _laplacian_pyramid(img: np.ndarray, floor: int) -> list[np.ndarray]:
    levels = []
    g = img
    while min(g.shape) > floor:
        down = _pyr_down(g)
        levels.append(g - _pyr_up(down))
        g = down
    levels.append(g)
    return levels


def _patch_descriptors(img: np.ndarray, rows, cols, p: int) -> np.ndarray:
    n = rows.shape[0]
    desc = np.empty((n, p * p), dtype=np.float64)
    for k in range(n):
        desc[k] = img[rows[k] : rows[k] + p, cols[k] : cols[k] + p].ravel()
    std = desc.std()
    desc = (desc - desc.mean()) / (std if std > 0 else 1.0)
    return desc


def swd(pred: GridField, truth: GridField, params: SwdParams = SwdParams()) -> float:
    """Sliced Wasserstein distance between two fields.

    Per channel: standardize to zero mean / unit std, build a Laplacian
    pyramid down to the floor resolution, sample shared patch locations per
    level, standardize each image's descriptor set, project both sets on
    shared random unit directions, and average the 1-D W1 distances over
    directions and levels. The channel distances are averaged. Deterministic
    given params.seed.
    """
    if pred.values.shape != truth.values.shape:
        raise ValueError(f"shape mismatch: pred {pred.values.shape} vs truth {truth.values.shape}")
    side = min(pred.height, pred.width)
    if side < params.patch_size:
        raise ValueError(f"image side {side} smaller than patch size {params.patch_size}")
    p = params.patch_size
    channel_vals = []
    for ch in range(pred.channels):
        a = pred.values[ch]
        b = truth.values[ch]
        sa, sb = a.std(), b.std()
        if sa == 0 or sb == 0:
            raise ValueError(f"channel {ch} is constant; SWD standardization is undefined")
        a = (a - a.mean()) / sa
        b = (b - b.mean()) / sb
        pyr_a = _laplacian_pyramid(a, params.pyramid_floor)
        pyr_b = _laplacian_pyramid(b, params.pyramid_floor)
        level_vals = []
        for lvl, (la, lb) in enumerate(zip(pyr_a, pyr_b)):
            h, w = la.shape
            if h < p or w < p:
                continue
            rng = np.random.default_rng([params.seed, ch, lvl])
            n_pos = (h - p + 1) * (w - p + 1)
            n_take = min(params.descriptors_per_level, n_pos)
            flat = rng.choice(n_pos, size=n_take, replace=False)
            rows, cols = np.divmod(flat, w - p + 1)
            da = _patch_descriptors(la, rows, cols, p)
            db = _patch_descriptors(lb, rows, cols, p)
            dirs = rng.standard_normal((p * p, params.n_directions))
            dirs /= np.sqrt((dirs * dirs).sum(axis=0, keepdims=True))
            proj_a = np.sort(da @ dirs, axis=0)
            proj_b = np.sort(db @ dirs, axis=0)
            level_vals.append(float(np.mean(np.abs(proj_a - proj_b))))
        if not level_vals:
            raise ValueError("no pyramid level large enough for the patch size")
        channel_vals.append(float(np.mean(level_vals)))
    return float(np.mean(channel_vals))


@dataclass(frozen=True)
class SemivariogramCurve:
    """Binned empirical semivariance vs. lag distance (populated bins only)."""

    lags: np.ndarray    # bin-center distances, strictly ascending
    gamma: np.ndarray   # semivariance per bin
    counts: np.ndarray  # pair count per bin

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if not (lags.shape == gamma.shape == counts.shape):
            raise ValueError("lags, gamma and counts must have matching lengths")
        if (np.diff(lags) <= 0).any():
            raise ValueError("lags must be strictly ascending")
        if (gamma < 0).any():
            raise ValueError("semivariance cannot be negative")
        if (counts <= 0).any():
            raise ValueError("bins without pairs must be omitted")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "counts", counts)


def _displacements(max_lag: float, h: int, w: int):
    """Unique pair displacements (dy, dx, dist) with 0 < dist <= max_lag,
    counting each unordered pair once: dy > 0, or dy == 0 and dx > 0."""
    reach = int(math.floor(max_lag))
    out = []
    for dy in range(0, min(reach, h - 1) + 1):
        dx_lo = 1 if dy == 0 else -min(reach, w - 1)
        for dx in range(dx_lo, min(reach, w - 1) + 1):
            dist = math.sqrt(dx * dx + dy * dy)
            if 0.0 < dist <= max_lag:
                out.append((dy, dx, dist))
    return out


def _bin_index(dist: float, bin_width: float, n_bins: int) -> int:
    # bins are half-open on the left: bin k covers (k*w, (k+1)*w]
    idx = math.ceil(dist / bin_width) - 1
    return min(max(idx, 0), n_bins - 1)


def semivariogram(
    field: GridField,
    channel: int = 0,
    max_lag: float | None = None,
    n_bins: int = 16,
    max_pairs: int = 2_000_000,
    seed: int = 0,
) -> SemivariogramCurve:
    """Isotropic empirical semivariogram of one channel.

    gamma(h) = (1 / 2N(h)) * sum of squared value differences over point
    pairs whose Euclidean pixel distance falls in bin h; equal-width bins on
    (0, max_lag], max_lag defaulting to half the image side. If the grid has
    more qualifying pairs than max_pairs they are subsampled uniformly with
    the given seed. Per-bin accumulation uses exactly rounded summation so
    results are independent of accumulation order.
    """
    if not 0 <= channel < field.channels:
        raise ValueError(f"channel {channel} out of range for {field.channels}-channel field")
    v = field.values[channel]
    h, w = v.shape
    if max_lag is None:
        max_lag = min(h, w) / 2.0
    if max_lag <= 0:
        raise ValueError("max_lag must be positive")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    bin_width = max_lag / n_bins

    disps = _displacements(max_lag, h, w)
    if not disps:
        raise ValueError("grid too small: no point pairs within max_lag")
    total_pairs = sum((h - dy) * (w - abs(dx)) for dy, dx, _ in disps)

    per_bin: list[list[np.ndarray]] = [[] for _ in range(n_bins)]
    if total_pairs <= max_pairs:
        for dy, dx, dist in disps:
            if dx >= 0:
                diff = v[: h - dy, : w - dx] - v[dy:, dx:]
            else:
                diff = v[: h - dy, -dx:] - v[dy:, : w + dx]
            per_bin[_bin_index(dist, bin_width, n_bins)].append((diff * diff).ravel())
    else:
        rng = np.random.default_rng(seed)
        flat = v.ravel()
        accepted = 0
        while accepted < max_pairs:
            m = min(4 * (max_pairs - accepted) + 1024, 4_000_000)
            i = rng.integers(0, h * w, size=m)
            j = rng.integers(0, h * w, size=m)
            dy = np.abs(i // w - j // w)
            dx = np.abs(i % w - j % w)
            dist = np.sqrt((dx * dx + dy * dy).astype(np.float64))
            keep = (dist > 0) & (dist <= max_lag)
            i, j, dist = i[keep], j[keep], dist[keep]
            if i.shape[0] > max_pairs - accepted:
                i, j, dist = (arr[: max_pairs - accepted] for arr in (i, j, dist))
            sq = (flat[i] - flat[j]) ** 2
            idx = np.minimum(np.maximum(np.ceil(dist / bin_width) - 1, 0), n_bins - 1).astype(int)
            for k in range(n_bins):
                sel = idx == k
                if sel.any():
                    per_bin[k].append(sq[sel])
            accepted += i.shape[0]

    lags, gamma, counts = [], [], []
    for k in range(n_bins):
        if not per_bin[k]:
            continue
        vals = np.concatenate(per_bin[k])
        lags.append((k + 0.5) * bin_width)
        gamma.append(math.fsum(vals) / (2.0 * vals.shape[0]))
        counts.append(vals.shape[0])
    return SemivariogramCurve(np.array(lags), np.array(gamma), np.array(counts))


def semivariogram_envelope(curves: list[SemivariogramCurve]) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin (min, max) across curves sharing identical binning."""
    if not curves:
        raise ValueError("need at least one curve")
    ref = curves[0].lags
    for c in curves[1:]:
        if not np.array_equal(c.lags, ref):
            raise ValueError("curves do not share binning")
    stack = np.stack([c.gamma for c in curves])
    return stack.min(axis=0), stack.max(axis=0)


@dataclass(frozen=True)
class MassReport:
    """Scatter of (LR pixel value, HR block mean) with agreement summaries."""

    scatter: np.ndarray  # (n, 2)
    pearson_r: float
    max_abs_dev: float


def mass_preservation(lr: GridField, hr: GridField, factor: int) -> MassReport:
    """Check that HR block means reproduce the LR pixels they refine.

    Returns every (lr value, block mean) pair, their Pearson correlation,
    and the largest absolute deviation from the 45-degree line.
    """
    if hr.height != lr.height * factor or hr.width != lr.width * factor:
        raise ValueError(
            f"hr {hr.height}x{hr.width} is not lr {lr.height}x{lr.width} times factor {factor}"
        )
    if hr.channels != lr.channels:
        raise ValueError(f"channel mismatch: lr {lr.channels} vs hr {hr.channels}")
    block_means = average_pool(hr, factor).values.ravel()
    lr_vals = lr.values.ravel()
    scatter = np.stack([lr_vals, block_means], axis=1)
    r = pearson(lr_vals, block_means)
    dev = float(np.max(np.abs(block_means - lr_vals)))
    return MassReport(scatter=scatter, pearson_r=r, max_abs_dev=dev)
