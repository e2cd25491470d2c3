"""Gridded-field data model: pooling, LR/HR pairing, splits, normalization,
and a synthetic random-field generator for desk-scale experiments.

All field values are held as float64 arrays shaped (channels, height, width).
The on-disk format quantizes to binary32 (see ``dsgan.storage``), so fields
loaded from disk always carry binary32-representable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timedelta

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "GridField",
    "PairSample",
    "NormalizationStats",
    "SyntheticFieldConfig",
    "average_pool",
    "make_pairs",
    "chronological_split",
    "fit_normalization",
    "generate_synthetic",
]


@dataclass(frozen=True)
class GridField:
    """A multi-channel gridded geospatial field.

    values: float64 array (channels, height, width), all entries finite.
    channel_names: one name per channel (e.g. "u", "v" or "dni", "dhi").
    timestamp: optional ISO-8601 string; fields in a dataset are ordered by it.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    timestamp: str | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"values must be (channels, height, width), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1 or v.shape[2] < 1:
            raise ValueError(f"all dimensions must be positive, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("field values must be finite (no NaN/Inf)")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != v.shape[0]:
            raise ValueError(
                f"got {len(names)} channel names for {v.shape[0]} channels"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", names)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def with_values(self, values: np.ndarray) -> "GridField":
        """Same metadata, new values."""
        return GridField(values, self.channel_names, self.timestamp)

    def equals(self, other: "GridField") -> bool:
        """Bit-exact equality of values plus metadata."""
        return (
            self.channel_names == other.channel_names
            and self.timestamp == other.timestamp
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def average_pool(hr: GridField, factor: int) -> GridField:
    """Block-average a field by an integer factor per axis.

    Each output pixel is the mean of the corresponding factor x factor block.
    Accumulation runs in float64, adding block entries in row-major order,
    with a single division at the end; exact for binary32-representable
    inputs and factors up to 64.
    """
    if factor < 1 or not _is_power_of_two(factor):
        raise ValueError(f"pooling factor must be a positive power of two, got {factor}")
    if hr.height % factor != 0:
        raise ValueError(f"height {hr.height} not divisible by factor {factor}")
    if hr.width % factor != 0:
        raise ValueError(f"width {hr.width} not divisible by factor {factor}")
    v = hr.values
    acc = np.zeros((hr.channels, hr.height // factor, hr.width // factor), dtype=np.float64)
    for bi in range(factor):
        for bj in range(factor):
            acc += v[:, bi::factor, bj::factor]
    return hr.with_values(acc / float(factor * factor))


@dataclass(frozen=True)
class PairSample:
    """An LR/HR training pair; lr is the block average of hr at `scale`."""

    lr: GridField
    hr: GridField
    scale: int

    def __post_init__(self):
        if not _is_power_of_two(self.scale):
            raise ValueError(f"scale must be a power of two, got {self.scale}")
        if self.hr.height != self.lr.height * self.scale or self.hr.width != self.lr.width * self.scale:
            raise ValueError(
                f"hr {self.hr.height}x{self.hr.width} is not lr "
                f"{self.lr.height}x{self.lr.width} times scale {self.scale}"
            )


MIN_LR_SIDE = 8


def make_pairs(fields: list[GridField], scale: int) -> list[PairSample]:
    """Build LR/HR pairs by average-pooling each field down by `scale`.

    Fields must be square, power-of-two sized, and large enough that the LR
    side is at least MIN_LR_SIDE pixels.
    """
    if not _is_power_of_two(scale):
        raise ValueError(f"scale must be a power of two, got {scale}")
    minimum = scale * MIN_LR_SIDE
    pairs = []
    for i, f in enumerate(fields):
        if f.height != f.width:
            raise ValueError(f"field {i}: grid must be square, got {f.height}x{f.width}")
        if not _is_power_of_two(f.height):
            raise ValueError(f"field {i}: side must be a power of two, got {f.height}")
        if f.height < minimum:
            raise ValueError(
                f"field {i}: side {f.height} too small for scale {scale}; "
                f"need at least {minimum} so the LR side is >= {MIN_LR_SIDE}"
            )
        pairs.append(PairSample(lr=average_pool(f, scale), hr=f, scale=scale))
    return pairs


def chronological_split(
    fields: list[GridField], cut: float | int | str
) -> tuple[list[GridField], list[GridField]]:
    """Split a time-ordered field list into (train, test).

    cut may be a fraction in (0, 1) of the list length, or a timestamp:
    fields stamped at or after it go to the test side. ISO-8601 strings
    compare lexicographically, so a bare year like "2014" works as a cut.
    """
    stamps = [f.timestamp for f in fields]
    if any(s is None for s in stamps):
        raise ValueError("all fields need timestamps for a chronological split")
    for a, b in zip(stamps, stamps[1:]):
        if a > b:
            raise ValueError(f"fields are not sorted by timestamp ({a!r} precedes {b!r})")
    if isinstance(cut, float) or (isinstance(cut, (int, np.integer)) and 0 < cut < 1):
        if not 0 < cut < 1:
            raise ValueError(f"fraction cut must lie in (0, 1), got {cut}")
        k = int(round(len(fields) * float(cut)))
    else:
        cut_str = str(cut)
        k = sum(1 for s in stamps if s < cut_str)
    train, test = fields[:k], fields[k:]
    if not train or not test:
        raise ValueError(
            f"cut {cut!r} leaves an empty side ({len(train)} train / {len(test)} test)"
        )
    return train, test


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std fitted on the training split (population std)."""

    mean: np.ndarray  # (channels,)
    std: np.ndarray   # (channels,)
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        s = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if m.shape != s.shape:
            raise ValueError("mean and std must have the same length")
        if not (np.isfinite(m).all() and np.isfinite(s).all()):
            raise ValueError("normalization stats must be finite")
        if (s <= 0).any():
            bad = int(np.argmax(s <= 0))
            raise ValueError(f"channel {bad} has non-positive std; constant channels are rejected")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def channels(self) -> int:
        return self.mean.shape[0]

    def _check(self, f: GridField):
        if f.channels != self.channels:
            raise ValueError(f"stats cover {self.channels} channels, field has {f.channels}")

    def apply(self, f: GridField) -> GridField:
        """Standardize to zero mean / unit std per channel."""
        self._check(f)
        return f.with_values((f.values - self.mean[:, None, None]) / self.std[:, None, None])

    def invert(self, f: GridField) -> GridField:
        """Map standardized values back to physical units."""
        self._check(f)
        return f.with_values(f.values * self.std[:, None, None] + self.mean[:, None, None])


def fit_normalization(train: list[GridField]) -> NormalizationStats:
    """Fit per-channel mean/std over every pixel of the training split."""
    if not train:
        raise ValueError("cannot fit normalization on an empty training set")
    c = train[0].channels
    for i, f in enumerate(train):
        if f.channels != c:
            raise ValueError(f"field {i} has {f.channels} channels, expected {c}")
    stacked = np.concatenate([f.values.reshape(c, -1) for f in train], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)  # population estimator
    for ch in range(c):
        if std[ch] <= 0:
            name = train[0].channel_names[ch]
            raise ValueError(f"channel {ch} ({name!r}) is constant; cannot normalize")
    return NormalizationStats(mean, std, train[0].channel_names)


@dataclass(frozen=True)
class SyntheticFieldConfig:
    """Settings for the smoothed-noise synthetic field generator."""

    seed: int
    count: int
    size: int
    channels: int = 2
    correlation_length: float = 8.0
    value_range: tuple[float, float] = (0.0, 1.0)
    channel_names: tuple[str, ...] = ()
    start: str = "2007-01-01T00:00:00"
    step_hours: int = 24

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")
        if not _is_power_of_two(self.size):
            raise ValueError(f"size must be a power of two, got {self.size}")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.correlation_length < 1:
            raise ValueError("correlation_length must be >= 1 pixel")
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError(f"value_range must satisfy low < high, got {self.value_range}")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(self.channels))
        if len(names) != self.channels:
            raise ValueError("channel_names length must match channels")
        object.__setattr__(self, "channel_names", names)


def generate_synthetic(config: SyntheticFieldConfig) -> list[GridField]:
    """Deterministic smooth random fields: white noise smoothed by a Gaussian
    kernel of bandwidth `correlation_length` (periodic boundaries), then
    mapped affinely onto `value_range` per channel.

    Outputs are quantized to binary32 so a write/read round trip through the
    grid file format is bit-exact. Timestamps step sequentially from `start`.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.value_range
    t0 = datetime.fromisoformat(config.start)
    fields = []
    for i in range(config.count):
        noise = rng.standard_normal((config.channels, config.size, config.size))
        smooth = gaussian_filter(noise, sigma=(0, config.correlation_length, config.correlation_length), mode="wrap")
        flat = smooth.reshape(config.channels, -1)
        vmin = flat.min(axis=1)[:, None, None]
        vmax = flat.max(axis=1)[:, None, None]
        mapped = lo + (smooth - vmin) * ((hi - lo) / (vmax - vmin))
        # clip in binary32 so the range guarantee survives the quantization
        quantized = np.clip(mapped.astype(np.float32), np.float32(lo), np.float32(hi))
        values = quantized.astype(np.float64)
        stamp = (t0 + timedelta(hours=config.step_hours * i)).isoformat(timespec="seconds")
        fields.append(GridField(values, config.channel_names, stamp))
    return fields
