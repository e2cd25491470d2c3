"""Composite training objective: Wasserstein adversarial terms, gradient
penalty on interpolated samples, and the latent-center regularization that
keeps the ground truth near the center of the learned latent distribution.

Sign convention: the critic minimizes -(mean real score - mean fake score)
plus the weighted gradient penalty; the generator minimizes -(mean fake
score) plus the weighted center term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "DivergenceError",
    "wgan_terms",
    "interpolate_pairs",
    "gradient_penalty",
    "center_loss",
    "total_losses",
]


class DivergenceError(RuntimeError):
    """A loss term went non-finite; training cannot continue."""


@dataclass(frozen=True)
class LossWeights:
    """Regularization coefficients for the gradient penalty and center term."""

    lambda_gp: float = 10.0
    lambda_center: float = 10.0

    def __post_init__(self):
        for name in ("lambda_gp", "lambda_center"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss terms, for logging and diagnostics."""

    wgan_critic: float
    wgan_generator: float
    gradient_penalty: float
    center: float
    total_critic: float
    total_generator: float

    TSV_HEADER = "step\tphase\tstage\talpha\twgan_critic\twgan_generator\tgradient_penalty\tcenter\ttotal_critic\ttotal_generator"

    def tsv_row(self, step: int, phase: str, stage: int, alpha: float) -> str:
        vals = (self.wgan_critic, self.wgan_generator, self.gradient_penalty,
                self.center, self.total_critic, self.total_generator)
        return f"{step}\t{phase}\t{stage}\t{alpha:.6f}\t" + "\t".join(repr(v) for v in vals)


def _as_tensor(scores) -> torch.Tensor:
    t = scores if isinstance(scores, torch.Tensor) else torch.as_tensor(scores, dtype=torch.float64)
    return t.reshape(-1)


def wgan_terms(scores_real, scores_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """(critic objective to maximize, generator objective to minimize):
    mean(real) - mean(fake), and -mean(fake)."""
    real = _as_tensor(scores_real)
    fake = _as_tensor(scores_fake)
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("score lists must be non-empty")
    critic_objective = real.mean() - fake.mean()
    generator_objective = -fake.mean()
    return critic_objective, generator_objective


def interpolate_pairs(x: torch.Tensor, g: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Per-sample straight-line interpolation u*x + (1-u)*g; u is one scalar
    per batch element, broadcast over pixels."""
    if x.shape != g.shape:
        raise ValueError(f"shape mismatch: x {tuple(x.shape)} vs g {tuple(g.shape)}")
    u = u.reshape(-1)
    if u.shape[0] != x.shape[0]:
        raise ValueError(f"need one u per sample: {u.shape[0]} vs batch {x.shape[0]}")
    if bool((u < 0).any()) or bool((u > 1).any()):
        raise ValueError("u must lie in [0, 1]")
    u = u.reshape(-1, *([1] * (x.ndim - 1))).to(x.dtype)
    return u * x + (1.0 - u) * g


def gradient_penalty(
    critic_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    x_hat: torch.Tensor,
    y: torch.Tensor,
) -> torch.Tensor:
    """Mean over the batch of (||grad_x_hat critic(x_hat, y)||_2 - 1)^2.

    critic_fn must return one scalar score per sample; the norm runs over
    every entry of each sample's input gradient. Raises DivergenceError on
    non-finite gradients.
    """
    if not x_hat.requires_grad:
        x_hat = x_hat.detach().requires_grad_(True)
    scores = critic_fn(x_hat, y)
    if scores.shape != (x_hat.shape[0],):
        raise ValueError(f"critic_fn must return one score per sample, got {tuple(scores.shape)}")
    (grads,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    if not torch.isfinite(grads.detach()).all():
        raise DivergenceError("non-finite critic input gradient")
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def center_loss(proj_truth: torch.Tensor, proj_center: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance between the two latent projections,
    averaged over the batch (summed over each sample's entries)."""
    if proj_truth.shape != proj_center.shape:
        raise ValueError(
            f"shape mismatch: {tuple(proj_truth.shape)} vs {tuple(proj_center.shape)}"
        )
    diff = proj_truth - proj_center
    if diff.ndim < 4:  # a single projection: plain squared distance
        return (diff * diff).sum()
    return (diff * diff).reshape(diff.shape[0], -1).sum(dim=1).mean()


def _require_finite(value: float, term: str) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"loss term {term!r} is non-finite ({value})")
    return value


def total_losses(
    wgan_critic: float,
    wgan_generator: float,
    gp: float,
    center: float,
    weights: LossWeights,
) -> LossBreakdown:
    """Compose the logged breakdown. The critic total ignores the center
    term; the generator total ignores the gradient penalty."""
    wgan_critic = _require_finite(float(wgan_critic), "wgan_critic")
    wgan_generator = _require_finite(float(wgan_generator), "wgan_generator")
    gp = _require_finite(float(gp), "gradient_penalty")
    center = _require_finite(float(center), "center")
    return LossBreakdown(
        wgan_critic=wgan_critic,
        wgan_generator=wgan_generator,
        gradient_penalty=gp,
        center=center,
        total_critic=-wgan_critic + weights.lambda_gp * gp,
        total_generator=wgan_generator + weights.lambda_center * center,
    )
