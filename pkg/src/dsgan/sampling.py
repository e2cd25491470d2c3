"""Inference-time sampling: the deterministic center prediction G(0, y),
Monte Carlo posterior ensembles, per-pixel uncertainty maps, and the
simulation-based plausibility test with its rank pseudo p-value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
import torch

from .fields import GridField, NormalizationStats
from .metrics import SwdParams, swd
from .nets import Generator, StagePosition, derive_seed

__all__ = [
    "EnsembleStats",
    "HypothesisTestResult",
    "STATISTICS",
    "sample_center",
    "sample_posterior",
    "iter_posterior",
    "ensemble_stats",
    "posterior_stats",
    "hypothesis_test",
    "residual_l2",
]


def _check_full_stage(gen: Generator) -> int:
    stage = gen.config.num_stages
    if gen.built_stages < stage:
        raise ValueError(
            f"generator built to stage {gen.built_stages} of {stage}; "
            "training did not reach the full scale"
        )
    return stage


def _check_lr_input(gen: Generator, y: GridField) -> None:
    cfg = gen.config
    if y.channels != cfg.in_channels or y.height != cfg.lr_size or y.width != cfg.lr_size:
        raise ValueError(
            f"expected a {cfg.in_channels}x{cfg.lr_size}x{cfg.lr_size} LR input, "
            f"got {y.channels}x{y.height}x{y.width}"
        )


def _forward(gen: Generator, y: GridField, z: torch.Tensor,
             stats: NormalizationStats | None) -> GridField:
    y_norm = stats.apply(y) if stats is not None else y
    y_t = torch.as_tensor(y_norm.values, dtype=torch.float32).unsqueeze(0)
    stage = _check_full_stage(gen)
    with torch.no_grad():
        out = gen(y_t, z, StagePosition(stage, 1.0))
    field = GridField(out.squeeze(0).numpy().astype(np.float64), y.channel_names, y.timestamp)
    return stats.invert(field) if stats is not None else field


def sample_center(gen_ema: Generator, y: GridField,
                  stats: NormalizationStats | None = None) -> GridField:
    """Most-likely prediction: the generator driven by all-zeros noise."""
    _check_lr_input(gen_ema, y)
    cfg = gen_ema.config
    z = torch.zeros((1, cfg.z_channels, cfg.lr_size, cfg.lr_size), dtype=torch.float32)
    return _forward(gen_ema, y, z, stats)


def _realization_noise(cfg, seed: int, index: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(derive_seed(seed, f"realization/{index}"))
    return torch.randn((1, cfg.z_channels, cfg.lr_size, cfg.lr_size), generator=g)


def iter_posterior(gen_ema: Generator, y: GridField, n: int, seed: int,
                   stats: NormalizationStats | None = None) -> Iterator[GridField]:
    """Stream n posterior realizations; realization i depends only on
    (seed, i), so any prefix of the stream is reproducible."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_lr_input(gen_ema, y)
    for i in range(n):
        z = _realization_noise(gen_ema.config, seed, i)
        yield _forward(gen_ema, y, z, stats)


def sample_posterior(gen_ema: Generator, y: GridField, n: int, seed: int,
                     stats: NormalizationStats | None = None) -> list[GridField]:
    """Materialized list of posterior realizations."""
    return list(iter_posterior(gen_ema, y, n, seed, stats))


@dataclass(frozen=True)
class EnsembleStats:
    """Per-pixel mean and population standard deviation of an ensemble."""

    mean_map: GridField
    std_map: GridField
    n: int
    seed: int


def ensemble_stats(realizations: Iterable[GridField], seed: int = 0) -> EnsembleStats:
    """Streaming per-pixel mean and population (divide-by-n) std."""
    count = 0
    total = sq_total = None
    first = None
    for f in realizations:
        if first is None:
            first = f
            total = np.zeros_like(f.values)
            sq_total = np.zeros_like(f.values)
        elif f.values.shape != first.values.shape:
            raise ValueError("realizations must share one shape")
        total += f.values
        sq_total += f.values * f.values
        count += 1
    if count < 2:
        raise ValueError(f"need at least 2 realizations, got {count}")
    mean = total / count
    var = np.maximum(sq_total / count - mean * mean, 0.0)
    std_names = tuple(f"{n}_std" for n in first.channel_names)
    return EnsembleStats(
        mean_map=GridField(mean, first.channel_names, first.timestamp),
        std_map=GridField(np.sqrt(var), std_names, first.timestamp),
        n=count,
        seed=seed,
    )


def posterior_stats(gen_ema: Generator, y: GridField, n: int, seed: int,
                    stats: NormalizationStats | None = None) -> EnsembleStats:
    """Uncertainty maps from n model realizations, memory-bounded in n."""
    return ensemble_stats(iter_posterior(gen_ema, y, n, seed, stats), seed=seed)


def residual_l2(a: GridField, b: GridField) -> float:
    """Root mean squared pixel difference."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    return float(np.sqrt(np.mean((a.values - b.values) ** 2)))


STATISTICS = ("residual-l2", "swd")


@dataclass(frozen=True)
class HypothesisTestResult:
    """Rank-based plausibility of a candidate HR field.

    pseudo_p = (1 + #{i : ensemble_d[i] >= d_test}) / (n + 1), the add-one
    permutation-test convention, so 1/(n+1) <= pseudo_p <= 1.
    """

    statistic_name: str
    d_test: float
    ensemble_d: np.ndarray
    pseudo_p: float

    @property
    def n(self) -> int:
        return int(self.ensemble_d.shape[0])


def _statistic_fn(name: str, swd_params: SwdParams | None):
    if name == "residual-l2":
        return residual_l2
    if name == "swd":
        params = swd_params or SwdParams()
        return lambda a, b: swd(a, b, params)
    raise ValueError(f"unknown statistic {name!r}; use one of {STATISTICS}")


def pseudo_p_value(ensemble_d: np.ndarray, d_test: float) -> float:
    n = ensemble_d.shape[0]
    return float((1 + int((ensemble_d >= d_test).sum())) / (n + 1))


def hypothesis_test(
    gen_ema: Generator,
    y: GridField,
    x_test: GridField,
    n: int,
    seed: int,
    statistic: str = "residual-l2",
    stats: NormalizationStats | None = None,
    swd_params: SwdParams | None = None,
) -> HypothesisTestResult:
    """Test whether x_test is a plausible downscaled outcome of y.

    Measures the discrepancy of n realizations from the center prediction,
    does the same for x_test, and ranks it in the empirical distribution.
    """
    fn = _statistic_fn(statistic, swd_params)
    center = sample_center(gen_ema, y, stats)
    if x_test.values.shape != center.values.shape:
        raise ValueError(
            f"candidate shape {x_test.values.shape} does not match HR shape {center.values.shape}"
        )
    ensemble_d = np.array([fn(r, center) for r in iter_posterior(gen_ema, y, n, seed, stats)])
    d_test = fn(x_test, center)
    return HypothesisTestResult(
        statistic_name=statistic,
        d_test=d_test,
        ensemble_d=ensemble_d,
        pseudo_p=pseudo_p_value(ensemble_d, d_test),
    )
