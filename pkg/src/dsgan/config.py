"""Run configuration: a flat key=value file plus presets and flag overrides.

Every tunable the pipeline understands is a RunConfig field; unknown keys
are rejected and the fully materialized config is echoed into the output
directory so any run can be reproduced from its echo alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields as dc_fields
from pathlib import Path

from .nets import ModelConfig

__all__ = ["RunConfig", "PRESETS", "parse_config_file", "UsageError"]


class UsageError(Exception):
    """Bad flags, bad config keys, or inconsistent values; exit code 1."""


@dataclass
class RunConfig:
    dataset_dir: str = ""
    out_dir: str = ""
    checkpoint: str = ""
    seed: int = 0
    max_scale: int = 64
    lr_size: int = 8
    base_width: int = 256
    min_width: int = 32
    widths: str = ""          # comma-separated per-stage feature widths; empty = derived
    z_channels: int = 2
    kernel_size: int = 3
    leaky_slope: float = 0.2
    lambda_gp: float = 10.0
    lambda_center: float = 10.0
    learning_rate: float = 2e-3
    batch_size: int = 16
    n_critic: int = 5
    epochs_per_phase: int = 30
    ema_decay: float = 0.999
    train_split: str = "0.9"  # fraction in (0,1) or an ISO-8601 timestamp cut
    max_steps: int = 0        # 0 = run the full schedule

    def model_config(self, in_channels: int) -> ModelConfig:
        widths = None
        if self.widths.strip():
            try:
                widths = tuple(int(w) for w in self.widths.split(","))
            except ValueError as exc:
                raise UsageError(f"widths must be comma-separated integers: {self.widths!r}") from exc
        try:
            return ModelConfig(
                in_channels=in_channels,
                lr_size=self.lr_size,
                max_scale=self.max_scale,
                base_width=self.base_width,
                width_schedule=widths,
                z_channels=self.z_channels,
                leaky_slope=self.leaky_slope,
                kernel_size=self.kernel_size,
                min_width=self.min_width,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def split_cut(self) -> float | str:
        s = self.train_split.strip()
        try:
            frac = float(s)
        except ValueError:
            return s
        if not 0 < frac < 1:
            raise UsageError(f"train_split fraction must lie in (0, 1), got {s}")
        return frac

    def echo(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in dc_fields(self)]
        return "\n".join(lines) + "\n"

    def write_echo(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "config.echo"
        path.write_text(self.echo(), encoding="utf-8")
        return path


# Hyperparameter bundles: the two published training setups plus a
# desk-scale preset that exercises the whole pipeline in minutes.
PRESETS: dict[str, dict] = {
    "wind": dict(max_scale=64, base_width=256, min_width=32, batch_size=16,
                 learning_rate=2e-3, epochs_per_phase=30),
    "solar": dict(max_scale=64, base_width=256, min_width=32, batch_size=1,
                  learning_rate=4e-3, epochs_per_phase=15),
    "smoke": dict(max_scale=8, base_width=32, min_width=16, batch_size=8,
                  learning_rate=2e-3, epochs_per_phase=2, n_critic=5),
}

_FIELD_TYPES = {f.name: f.type for f in dc_fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise UsageError(f"config key {key}: cannot parse {raw!r} as {kind}") from exc


def parse_config_file(path: str | Path) -> dict:
    """key=value lines; '#' starts a comment; unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_run_config(preset: str | None = None, config_path: str | Path | None = None,
                     overrides: dict | None = None) -> RunConfig:
    """Materialize a RunConfig: defaults, then preset, then file, then flags."""
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for k, v in PRESETS[preset].items():
            setattr(cfg, k, v)
    if config_path is not None:
        for k, v in parse_config_file(config_path).items():
            setattr(cfg, k, v)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELD_TYPES:
            raise UsageError(f"unknown config key {k!r}")
        setattr(cfg, k, v)
    return cfg
