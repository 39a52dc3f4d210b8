"""Experiment configuration: one flat record covering model, training,
dataset, metrics and scheduling, with JSON files and CLI flag overrides.

Two named profiles set scale: "desk" (32px, 2000 steps, CI-sized) and
"full" (64px, 5e4 steps, the experiment's original scale).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluation import MetricConfig
from .nets import RGB, SEMANTIC, ModelConfig
from .shapes import ShapesConfig
from .training import TrainConfig

PROFILES = ("desk", "full")


@dataclass(frozen=True)
class ExperimentConfig:
    # run
    mode: str = SEMANTIC
    seed: int = 0
    out_dir: str = "runs/run"
    dataset_dir: str | None = None
    eval_every: int = 500
    # model
    image_size: int = 32
    num_classes: int = 4
    latent_dim: int = 64
    kernel_size: int = 7
    base_channels: int = 8
    depth: int | None = None
    # training
    lr: float = 1e-4
    batch_size: int = 32
    steps: int = 2000
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    feature_layer: int | None = None
    # shapes dataset
    square_side: int = 10
    circle_radius: float = 10.0
    rect_width_range: tuple[int, int] = (8, 24)
    rect_height_range: tuple[int, int] = (6, 16)
    # metrics
    swd_patches: int = 64
    swd_projections: int = 512
    pyramid_min_res: int = 16
    msssim_pairs: int = 64
    spurious_tol: float = 0.02
    extractor_seed: int = 42

    def __post_init__(self):
        if self.mode not in (SEMANTIC, RGB):
            raise ConfigError(f"mode must be '{SEMANTIC}' or '{RGB}', got {self.mode!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")

    def model_config(self, mode: str | None = None) -> ModelConfig:
        return ModelConfig(
            mode=mode or self.mode,
            image_size=self.image_size,
            num_classes=self.num_classes,
            latent_dim=self.latent_dim,
            kernel_size=self.kernel_size,
            base_channels=self.base_channels,
            depth=self.depth,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            total_steps=self.steps,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            feature_layer=self.feature_layer,
            seed=self.seed,
        )

    def shapes_config(self) -> ShapesConfig:
        return ShapesConfig(
            image_size=self.image_size,
            square_side=self.square_side,
            circle_radius=self.circle_radius,
            rect_width_range=tuple(self.rect_width_range),
            rect_height_range=tuple(self.rect_height_range),
            seed=self.seed,
        )

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            patches_per_image=self.swd_patches,
            n_projections=self.swd_projections,
            pyramid_min_res=self.pyramid_min_res,
            msssim_pairs=self.msssim_pairs,
            spurious_tol=self.spurious_tol,
            extractor_seed=self.extractor_seed,
            seed=self.seed,
        )


# Desk scale keeps CI feasible; full scale is the real experiment
# (64px, 5e4 steps, ks 11, ld 100, 2916-scene dataset).
_PROFILE_FIELDS: dict[str, dict] = {
    "desk": {},
    "full": {
        "image_size": 64,
        "steps": 50_000,
        "eval_every": 2500,
        "kernel_size": 11,
        "latent_dim": 100,
        "base_channels": 32,
        "square_side": 11,
    },
}


def profile_config(profile: str = "desk") -> ExperimentConfig:
    if profile not in _PROFILE_FIELDS:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")
    return ExperimentConfig(**_PROFILE_FIELDS[profile])


_TUPLE_FIELDS = ("rect_width_range", "rect_height_range")


def load_config(path: str | Path) -> dict:
    """Read a config JSON file into a field dict (validated names only).

    Accepts either a bare field object or a run.json document (the
    resolved config lives under its "config" key), so any run can be
    replayed with --config <out_dir>/run.json.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    if isinstance(doc.get("config"), dict) and "command" in doc:
        doc = doc["config"]
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config fields in {path}: {sorted(unknown)}")
    return doc


def resolve_config(profile: str = "desk", file_path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Profile defaults, overlaid by a config file, overlaid by flags."""
    values = dict(_PROFILE_FIELDS[profile]) if profile in _PROFILE_FIELDS else None
    if values is None:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")
    if file_path is not None:
        values.update(load_config(file_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    for name in _TUPLE_FIELDS:
        if name in values:
            values[name] = tuple(values[name])
    return ExperimentConfig(**values)


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def with_mode(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    return replace(cfg, mode=mode)
