"""Shared test fixtures: tiny double-precision models and the
finite-difference gradient oracle used by both the loss tests and the
acceptance suite.
"""

import numpy as np
import torch

from dsgan.losses import LossWeights, center_loss, gradient_penalty, interpolate_pairs, wgan_terms
from dsgan.nets import ModelConfig, StagePosition, build_critic, build_generator, critic_score


def tiny_gradcheck_setup(seed=7, batch=2):
    """2-stage model, widths 8, 4x4 HR (lr side 1), float64 throughout.

    The default seed keeps every pre-activation away from the leaky-ReLU
    kink at the finite-difference step, so central differences are valid.
    """
    cfg = ModelConfig(
        in_channels=1, lr_size=1, max_scale=4, base_width=8,
        width_schedule=(8, 8), z_channels=1, min_width=8,
    )
    gen = build_generator(cfg, seed=seed).double()
    critic = build_critic(cfg, seed=seed + 1).double()
    g = torch.Generator().manual_seed(seed + 2)
    y = torch.randn(batch, 1, 1, 1, generator=g, dtype=torch.float64)
    x = torch.randn(batch, 1, 4, 4, generator=g, dtype=torch.float64)
    z = torch.randn(batch, 1, 1, 1, generator=g, dtype=torch.float64)
    u = torch.rand(batch, generator=g, dtype=torch.float64)
    # mid-fade so the transition mixing path is exercised too
    pos = StagePosition(2, 0.5)
    return cfg, gen, critic, x, y, z, u, pos


def generator_total(gen, critic, x, y, z, pos, weights):
    """The scalar the generator update minimizes."""
    g_out = gen(y, z, pos)
    gen_obj = -critic_score(critic(g_out, y, pos)).mean()
    g0 = gen(y, torch.zeros_like(z), pos)
    center = center_loss(critic(x, y, pos), critic(g0, y, pos))
    return gen_obj + weights.lambda_center * center


def adversarial_inputs(gen, x, y, z, u, pos):
    """Fake batch and interpolation points, fixed w.r.t. the critic."""
    with torch.no_grad():
        g_out = gen(y, z, pos)
    x_hat = interpolate_pairs(x, g_out, u).detach()
    return g_out, x_hat


def critic_total(critic, x, y, g_out, x_hat, pos, weights):
    """The scalar the critic update minimizes; g_out and x_hat are the
    constants a critic step sees (fresh leaf made per evaluation)."""

    def critic_fn(a, b):
        return critic_score(critic(a, b, pos))

    critic_obj, _ = wgan_terms(critic_fn(x, y), critic_fn(g_out, y))
    gp = gradient_penalty(critic_fn, x_hat.clone().requires_grad_(True), y)
    return -critic_obj + weights.lambda_gp * gp


def finite_difference_check(loss_fn, params, step=1e-4):
    """Central finite differences against autograd, elementwise.

    Returns an array of relative errors, one per parameter entry, using
    max(|analytic|, |numeric|, 1e-8) as the denominator.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    rel_errors = []

    def poke(flat, i, value):
        with torch.no_grad():
            flat[i] = value

    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            poke(flat, i, orig + step)
            hi = loss_fn().item()
            poke(flat, i, orig - step)
            lo = loss_fn().item()
            poke(flat, i, orig)
            numeric = (hi - lo) / (2 * step)
            analytic = gflat[i].item()
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rel_errors.append(abs(analytic - numeric) / denom)
    return np.array(rel_errors)


def run_gradient_correctness(seed=7, step=1e-4):
    """Returns (generator rel-errors, critic rel-errors) for the tiny model."""
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # tiny tensors: thread sync costs more than it buys
    try:
        cfg, gen, critic, x, y, z, u, pos = tiny_gradcheck_setup(seed)
        weights = LossWeights(lambda_gp=10.0, lambda_center=10.0)
        gen_errors = finite_difference_check(
            lambda: generator_total(gen, critic, x, y, z, pos, weights),
            list(gen.parameters()),
            step,
        )
        g_out, x_hat = adversarial_inputs(gen, x, y, z, u, pos)
        critic_errors = finite_difference_check(
            lambda: critic_total(critic, x, y, g_out, x_hat, pos, weights),
            list(critic.parameters()),
            step,
        )
        return gen_errors, critic_errors
    finally:
        torch.set_num_threads(n_threads)
