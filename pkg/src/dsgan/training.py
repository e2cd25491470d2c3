"""Progressive training loop: phase schedule, alternating critic/generator
updates, EMA weight tracking, and bitwise-reproducible checkpointing.

All stochastic draws (latent noise, interpolation weights) come from one
checkpointed torch.Generator; batch order is derived from (seed, phase,
epoch) so a resumed run replays the uninterrupted run exactly.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .fields import NormalizationStats, PairSample
from .losses import DivergenceError, LossBreakdown, LossWeights, center_loss, gradient_penalty, interpolate_pairs, total_losses, wgan_terms
from .nets import Critic, Generator, ModelConfig, StagePosition, build_critic, build_generator, critic_score

__all__ = [
    "Phase",
    "make_schedule",
    "alpha_of_progress",
    "OptimizerSettings",
    "TrainState",
    "new_train_state",
    "train_step",
    "run_training",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "avg_pool_tensor",
]

TRANSITION = "transition"
STABILIZATION = "stabilization"

CHECKPOINT_KIND = "dsgan-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint cannot be loaded (bad container, version, or config)."""


@dataclass(frozen=True)
class Phase:
    stage: int
    kind: str
    epochs: int

    def __post_init__(self):
        if self.kind not in (TRANSITION, STABILIZATION):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.stage < 1 or self.epochs < 1:
            raise ValueError("stage and epochs must be positive")


def make_schedule(max_scale: int, epochs_per_phase: int) -> list[Phase]:
    """Stage 1 trains with a stabilization phase only; every later stage gets
    a transition (fade-in) phase immediately followed by a stabilization."""
    if max_scale < 4 or (max_scale & (max_scale - 1)) != 0:
        raise ValueError(f"max_scale must be a power of two >= 4, got {max_scale}")
    if epochs_per_phase < 1:
        raise ValueError("epochs_per_phase must be positive")
    n = int(max_scale).bit_length() - 1
    phases = [Phase(1, STABILIZATION, epochs_per_phase)]
    for stage in range(2, n + 1):
        phases.append(Phase(stage, TRANSITION, epochs_per_phase))
        phases.append(Phase(stage, STABILIZATION, epochs_per_phase))
    return phases


def alpha_of_progress(phase: Phase, fraction_done: float) -> float:
    """Linear fade-in ramp during transitions; 1.0 while stabilizing."""
    if not 0.0 <= fraction_done <= 1.0:
        raise ValueError(f"fraction_done must lie in [0, 1], got {fraction_done}")
    if phase.kind == TRANSITION:
        return fraction_done
    return 1.0


@dataclass(frozen=True)
class OptimizerSettings:
    """Adam configuration plus the update pattern around it."""

    learning_rate: float
    batch_size: int
    n_critic: int = 5
    ema_decay: float = 0.999
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("batch_size and n_critic must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass(eq=False)
class TrainState:
    """Everything a training run owns; one loop owns one state at a time."""

    config: ModelConfig
    settings: OptimizerSettings
    schedule: list[Phase]
    seed: int
    generator: Generator
    critic: Critic
    ema: Generator
    opt_g: torch.optim.Adam
    opt_c: torch.optim.Adam
    rng: torch.Generator
    global_step: int = 0
    phase_index: int = 0
    steps_in_phase: int = 0
    normalization: NormalizationStats | None = None


def _make_optimizer(module: torch.nn.Module, s: OptimizerSettings) -> torch.optim.Adam:
    return torch.optim.Adam(
        module.parameters(), lr=s.learning_rate, betas=(s.beta1, s.beta2), eps=s.eps
    )


def new_train_state(
    config: ModelConfig,
    settings: OptimizerSettings,
    schedule: list[Phase],
    seed: int,
    normalization: NormalizationStats | None = None,
    stages: int = 1,
) -> TrainState:
    """Fresh state: networks built at `stages`, EMA initialized equal to the
    generator, Adam optimizers, and a seeded draw generator."""
    gen = build_generator(config, seed, stages)
    critic = build_critic(config, seed, stages)
    ema = build_generator(config, seed, stages)  # same seed => identical tree
    for p in ema.parameters():
        p.requires_grad_(False)
    rng = torch.Generator()
    rng.manual_seed(seed)
    return TrainState(
        config=config,
        settings=settings,
        schedule=list(schedule),
        seed=seed,
        generator=gen,
        critic=critic,
        ema=ema,
        opt_g=_make_optimizer(gen, settings),
        opt_c=_make_optimizer(critic, settings),
        rng=rng,
        normalization=normalization,
    )


def _grow_all(state: TrainState, new_stage: int) -> None:
    """Grow generator, EMA and critic together; register the new parameters
    with the optimizers so Adam moments of old parameters are kept."""
    before_g = {id(p) for p in state.generator.parameters()}
    before_c = {id(p) for p in state.critic.parameters()}
    state.generator.grow(new_stage)
    state.ema.grow(new_stage)
    state.critic.grow(new_stage)
    for p in state.ema.parameters():
        p.requires_grad_(False)
    new_g = [p for p in state.generator.parameters() if id(p) not in before_g]
    new_c = [p for p in state.critic.parameters() if id(p) not in before_c]
    state.opt_g.add_param_group({"params": new_g})
    state.opt_c.add_param_group({"params": new_c})


@torch.no_grad()
def _ema_update(ema: Generator, gen: Generator, decay: float) -> None:
    for pe, pg in zip(ema.parameters(), gen.parameters()):
        pe.mul_(decay).add_(pg, alpha=1.0 - decay)


def _batch_tensors(batch, pos: StagePosition, config: ModelConfig, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(batch, tuple):
        x, y = batch
    else:
        if not batch:
            raise ValueError("empty batch")
        x = torch.stack([torch.as_tensor(p.hr.values) for p in batch])
        y = torch.stack([torch.as_tensor(p.lr.values) for p in batch])
    x = x.to(dtype)
    y = y.to(dtype)
    side = config.side(pos.stage)
    if x.shape[2:] != (side, side):
        raise ValueError(f"batch HR side {tuple(x.shape[2:])} does not match stage {pos.stage} ({side})")
    return x, y


def train_step(
    state: TrainState,
    batch,
    weights: LossWeights,
    settings: OptimizerSettings,
    pos: StagePosition,
) -> LossBreakdown:
    """One global step: n_critic critic updates (fresh z and interpolation
    draws each), one generator update (adversarial plus center term), then
    the EMA update. Raises DivergenceError when a term goes non-finite.

    batch is either a list of PairSample or a pre-built (x, y) tensor tuple,
    with HR resolution matching pos.stage.
    """
    gen, critic = state.generator, state.critic
    dtype = next(gen.parameters()).dtype
    x, y = _batch_tensors(batch, pos, state.config, dtype)
    b = x.shape[0]
    cfg = state.config
    z_shape = (b, cfg.z_channels, cfg.lr_size, cfg.lr_size)

    def critic_fn(xx, yy):
        return critic_score(critic(xx, yy, pos))

    wgan_critic_val = gp_val = 0.0
    for _ in range(settings.n_critic):
        z = torch.randn(z_shape, generator=state.rng).to(dtype)
        with torch.no_grad():
            g = gen(y, z, pos)
        u = torch.rand((b,), generator=state.rng).to(dtype)
        x_hat = interpolate_pairs(x, g, u).detach().requires_grad_(True)
        critic_obj, _ = wgan_terms(critic_fn(x, y), critic_fn(g, y))
        gp = gradient_penalty(critic_fn, x_hat, y)
        total_c = -critic_obj + weights.lambda_gp * gp
        if not torch.isfinite(total_c.detach()):
            raise DivergenceError(
                f"critic loss diverged at step {state.global_step}: "
                f"wgan={critic_obj.item()} gp={gp.item()}"
            )
        state.opt_c.zero_grad()
        total_c.backward()
        state.opt_c.step()
        wgan_critic_val, gp_val = critic_obj.item(), gp.item()

    z = torch.randn(z_shape, generator=state.rng).to(dtype)
    g = gen(y, z, pos)
    gen_obj = -critic_fn(g, y).mean()
    z0 = torch.zeros(z_shape, dtype=dtype)
    g0 = gen(y, z0, pos)
    with torch.no_grad():
        proj_truth = critic(x, y, pos)
    proj_center = critic(g0, y, pos)
    center = center_loss(proj_truth, proj_center)
    total_g = gen_obj + weights.lambda_center * center
    if not torch.isfinite(total_g.detach()):
        raise DivergenceError(
            f"generator loss diverged at step {state.global_step}: "
            f"wgan={gen_obj.item()} center={center.item()}"
        )
    state.opt_g.zero_grad()
    total_g.backward()
    state.opt_g.step()
    _ema_update(state.ema, gen, settings.ema_decay)

    state.global_step += 1
    state.steps_in_phase += 1
    return total_losses(wgan_critic_val, gen_obj.item(), gp_val, center.item(), weights)


def avg_pool_tensor(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Block-average a (N, C, H, W) tensor; float64 accumulation, one divide."""
    if factor == 1:
        return x
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // factor, factor, w // factor, factor).to(torch.float64)
    pooled = blocks.sum(dim=(3, 5)) / float(factor * factor)
    return pooled.to(x.dtype)


def _phase_alpha(phase: Phase, step: int, total_steps: int) -> float:
    return alpha_of_progress(phase, step / total_steps if total_steps else 1.0)


def run_training(
    state: TrainState,
    pairs: list[PairSample],
    weights: LossWeights,
    out_dir: str | Path | None = None,
    log_hook=None,
    max_steps: int | None = None,
) -> list[str]:
    """Drive the phase schedule over a dataset of normalized pairs.

    Grows both networks at each fade-in phase start, trains intermediate
    stages against average-pooled HR targets, writes a checkpoint at every
    phase boundary, and returns the TSV log rows. Resuming from a loaded
    state continues where it left off and replays the same draws.

    max_steps optionally stops early (after that many further generator
    steps) for desk-scale experiments; the state remains resumable.
    """
    cfg = state.config
    settings = state.settings
    full_side = cfg.side(cfg.num_stages)
    if not pairs:
        raise ValueError("empty dataset")
    for i, p in enumerate(pairs):
        if p.hr.height != full_side or p.hr.width != full_side:
            raise ValueError(f"pair {i}: HR side {p.hr.height} != lr_size*max_scale {full_side}")
        if p.lr.height != cfg.lr_size:
            raise ValueError(f"pair {i}: LR side {p.lr.height} != lr_size {cfg.lr_size}")
        if p.hr.channels != cfg.in_channels:
            raise ValueError(f"pair {i}: {p.hr.channels} channels, model expects {cfg.in_channels}")

    x_full = torch.stack([torch.as_tensor(p.hr.values, dtype=torch.float32) for p in pairs])
    y_all = torch.stack([torch.as_tensor(p.lr.values, dtype=torch.float32) for p in pairs])
    n = x_full.shape[0]
    if n < settings.batch_size:
        raise ValueError(f"dataset of {n} pairs smaller than batch size {settings.batch_size}")
    steps_per_epoch = n // settings.batch_size

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    steps_done = 0

    while state.phase_index < len(state.schedule):
        phase = state.schedule[state.phase_index]
        if phase.stage > state.generator.built_stages:
            _grow_all(state, phase.stage)
        stage_side = cfg.side(phase.stage)
        x_stage = avg_pool_tensor(x_full, full_side // stage_side)
        total_steps = phase.epochs * steps_per_epoch
        order = None
        current_epoch = -1
        while state.steps_in_phase < total_steps:
            if max_steps is not None and steps_done >= max_steps:
                return rows
            step = state.steps_in_phase
            epoch, slot = divmod(step, steps_per_epoch)
            if epoch != current_epoch:
                order = np.random.default_rng([state.seed, state.phase_index, epoch]).permutation(n)
                current_epoch = epoch
            idx = torch.as_tensor(order[slot * settings.batch_size : (slot + 1) * settings.batch_size])
            pos = StagePosition(phase.stage, _phase_alpha(phase, step, total_steps))
            breakdown = train_step(state, (x_stage[idx], y_all[idx]), weights, settings, pos)
            row = breakdown.tsv_row(state.global_step, phase.kind, phase.stage, pos.alpha)
            rows.append(row)
            if log_hook is not None:
                log_hook(row)
            steps_done += 1
        state.phase_index += 1
        state.steps_in_phase = 0
        if out_dir is not None:
            save_checkpoint(state, out_dir / f"phase_{state.phase_index:02d}.ckpt")
            save_checkpoint(state, out_dir / "latest.ckpt")
    return rows


def _rng_state_tensor(rng: torch.Generator) -> torch.Tensor:
    return rng.get_state().clone()


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Single-file checkpoint: versioned header plus serialized trees."""
    payload = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(state.config),
        "settings": asdict(state.settings),
        "schedule": [asdict(p) for p in state.schedule],
        "seed": state.seed,
        "built_stages": state.generator.built_stages,
        "global_step": state.global_step,
        "phase_index": state.phase_index,
        "steps_in_phase": state.steps_in_phase,
        "generator": state.generator.state_dict(),
        "critic": state.critic.state_dict(),
        "ema": state.ema.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_c": state.opt_c.state_dict(),
        "rng_state": _rng_state_tensor(state.rng),
        "normalization": None if state.normalization is None else {
            "mean": state.normalization.mean.tolist(),
            "std": state.normalization.std.tolist(),
            "channel_names": list(state.normalization.channel_names),
        },
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> TrainState:
    """Rebuild a TrainState that continues training bitwise-identically.

    Networks are reconstructed by growing from stage 1 so the optimizer
    param-group layout matches the saved run exactly. Refuses to load with
    a mismatched container kind, version, or (when given) ModelConfig.
    """
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_KIND} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload.get('version')} "
            f"!= supported {CHECKPOINT_VERSION}"
        )
    config = ModelConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in payload["model_config"].items()})
    if expect_config is not None and config != expect_config:
        raise CheckpointError(
            f"{path}: checkpoint model config {config} does not match expected {expect_config}"
        )
    settings = OptimizerSettings(**payload["settings"])
    schedule = [Phase(**p) for p in payload["schedule"]]
    norm = payload["normalization"]
    normalization = None if norm is None else NormalizationStats(
        np.asarray(norm["mean"]), np.asarray(norm["std"]), tuple(norm["channel_names"])
    )
    state = new_train_state(config, settings, schedule, payload["seed"], normalization)
    for stage in range(2, payload["built_stages"] + 1):
        _grow_all(state, stage)
    state.generator.load_state_dict(payload["generator"])
    state.critic.load_state_dict(payload["critic"])
    state.ema.load_state_dict(payload["ema"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_c.load_state_dict(payload["opt_c"])
    state.rng.set_state(payload["rng_state"])
    state.global_step = payload["global_step"]
    state.phase_index = payload["phase_index"]
    state.steps_in_phase = payload["steps_in_phase"]
    return state
