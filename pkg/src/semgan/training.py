"""Losses, Adam updates and the training loop.

One training step runs the discriminator update first (binary cross
entropy on real vs freshly generated batches, generator frozen), then the
generator update (feature-matching loss against the updated discriminator,
whose parameters stay frozen and whose real-batch features are treated as
constants). Both networks share one learning rate.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import rng
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .nets import ModelState, default_feature_layer, save_checkpoint

PROB_EPS = 1e-7

TRAIN_LOG_COLUMNS = ("step", "d_loss", "g_loss", "wall_time_s")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Defaults: Adam with betas (0.5, 0.999) and
    eps 1e-8, batch 32, 5e4 steps, standard-normal latents."""

    lr: float = 1e-4
    batch_size: int = 32
    total_steps: int = 50_000
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    feature_layer: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")

    def resolve_feature_layer(self, depth: int) -> int:
        layer = self.feature_layer if self.feature_layer is not None else default_feature_layer(depth)
        if not (0 <= layer < depth):
            raise ConfigError(f"feature_layer {layer} out of range for discriminator depth {depth}")
        return layer


def d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy of the two-sided discriminator game.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs, so the
    value is finite (and >= 0) for any inputs in [0, 1].
    """
    d_real = torch.as_tensor(d_real).clamp(PROB_EPS, 1 - PROB_EPS)
    d_fake = torch.as_tensor(d_fake).clamp(PROB_EPS, 1 - PROB_EPS)
    return -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())


def feature_matching_loss(f_real: torch.Tensor, f_fake: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between batch-mean discriminator features."""
    f_real = torch.as_tensor(f_real)
    f_fake = torch.as_tensor(f_fake)
    if f_real.shape[1:] != f_fake.shape[1:]:
        raise ShapeError(f"feature shapes differ: {tuple(f_real.shape)} vs {tuple(f_fake.shape)}")
    diff = f_real.mean(dim=0) - f_fake.mean(dim=0)
    return (diff * diff).sum()


def sample_latent(n: int, latent_dim: int, gen: np.random.Generator) -> np.ndarray:
    """Draw an (n, latent_dim) batch of i.i.d. standard normals."""
    if n < 1 or latent_dim < 1:
        raise ConfigError(f"latent batch dims must be >= 1, got n={n}, latent_dim={latent_dim}")
    return gen.standard_normal((n, latent_dim))


def _adam_update(module: torch.nn.Module, prefix: str, state: ModelState, tc: TrainConfig, t: int) -> None:
    bias1 = 1 - tc.beta1**t
    bias2 = 1 - tc.beta2**t
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.grad is None:
                continue
            g = p.grad
            m = state.adam_m[f"{prefix}.{name}"]
            v = state.adam_v[f"{prefix}.{name}"]
            m.mul_(tc.beta1).add_(g, alpha=1 - tc.beta1)
            v.mul_(tc.beta2).addcmul_(g, g, value=1 - tc.beta2)
            p.add_((m / bias1) / ((v / bias2).sqrt() + tc.eps), alpha=-tc.lr)


def train_step(
    state: ModelState,
    real_batch: np.ndarray | torch.Tensor,
    z: np.ndarray | torch.Tensor,
    tc: TrainConfig,
) -> tuple[float, float]:
    """One discriminator update followed by one generator update.

    `real_batch` is (n, H, W, C) channels-last: one-hot volumes in semantic
    mode, [0,1] RGB in rgb mode. The same latent batch feeds both updates.
    Mutates `state` in place and returns (d_loss, g_loss) values.
    """
    gen, disc = state.generator, state.discriminator
    dtype = next(gen.parameters()).dtype
    feature_layer = tc.resolve_feature_layer(state.config.depth)

    x_real = torch.as_tensor(np.ascontiguousarray(real_batch) if isinstance(real_batch, np.ndarray) else real_batch)
    if x_real.ndim != 4:
        raise ShapeError(f"real_batch must be (n, H, W, C), got shape {tuple(x_real.shape)}")
    x_real = x_real.permute(0, 3, 1, 2).contiguous().to(dtype)
    z_t = torch.as_tensor(z).to(dtype)
    if x_real.shape[0] != tc.batch_size or z_t.shape[0] != tc.batch_size:
        raise ShapeError(
            f"batch sizes (real {x_real.shape[0]}, latent {z_t.shape[0]}) must match batch_size {tc.batch_size}"
        )

    gen.train()
    disc.train()
    t = state.step + 1

    # Discriminator update; generator frozen via no_grad sampling.
    with torch.no_grad():
        x_fake = gen(z_t)
    p_real, _ = disc(x_real)
    p_fake, _ = disc(x_fake)
    loss_d = d_loss(p_real, p_fake)
    disc.zero_grad(set_to_none=True)
    loss_d.backward()
    _adam_update(disc, "disc", state, tc, t)

    # Generator update against the updated discriminator; discriminator
    # parameters are not stepped, real features are detached constants.
    with torch.no_grad():
        _, f_real = disc(x_real, feature_layer)
    _, f_fake = disc(gen(z_t), feature_layer)
    loss_g = feature_matching_loss(f_real, f_fake)
    gen.zero_grad(set_to_none=True)
    disc.zero_grad(set_to_none=True)
    loss_g.backward()
    _adam_update(gen, "gen", state, tc, t)

    state.step += 1
    d_val, g_val = float(loss_d.detach()), float(loss_g.detach())
    if not (math.isfinite(d_val) and math.isfinite(g_val)):
        raise TrainingDivergedError(state.step, f"non-finite loss at step {state.step}: d={d_val}, g={g_val}")
    return d_val, g_val


def training_run(
    state: ModelState,
    real_images: np.ndarray,
    tc: TrainConfig,
    *,
    run_tag: str,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int | None = None,
    on_checkpoint: Callable[[int, Path], None] | None = None,
) -> list[Path]:
    """Train for tc.total_steps over a (N, H, W, C) real-image array.

    Real batches are drawn uniformly with replacement; latents and batch
    indices come from streams keyed by (tc.seed, run_tag), so runs with
    different tags (e.g. the two modes of a comparison) are independent.
    Returns the checkpoint paths written at every `checkpoint_every` steps
    and at the final step.
    """
    if real_images.ndim != 4:
        raise ShapeError(f"real_images must be (N, H, W, C), got shape {real_images.shape}")
    batch_rng = rng.stream(tc.seed, "batch", run_tag)
    latent_rng = rng.stream(tc.seed, "latent", run_tag)
    n_real = real_images.shape[0]
    latent_dim = state.config.latent_dim

    log_file = None
    writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(TRAIN_LOG_COLUMNS)

    checkpoints: list[Path] = []
    last_finite = (float("nan"), float("nan"))
    start = time.monotonic()
    try:
        for _ in range(tc.total_steps):
            idx = batch_rng.integers(0, n_real, size=tc.batch_size)
            z = sample_latent(tc.batch_size, latent_dim, latent_rng)
            try:
                d_val, g_val = train_step(state, real_images[idx], z, tc)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    exc.step, f"{exc} (last finite losses: d={last_finite[0]:.6g}, g={last_finite[1]:.6g})"
                ) from exc
            last_finite = (d_val, g_val)
            if writer is not None:
                writer.writerow([state.step, f"{d_val:.6f}", f"{g_val:.6f}", f"{time.monotonic() - start:.3f}"])
            at_interval = checkpoint_every is not None and state.step % checkpoint_every == 0
            if checkpoint_dir is not None and (at_interval or state.step == tc.total_steps):
                path = Path(checkpoint_dir) / f"checkpoint_{state.step:07d}.npz"
                if not checkpoints or checkpoints[-1] != path:
                    save_checkpoint(state, path)
                    checkpoints.append(path)
                    if on_checkpoint is not None:
                        on_checkpoint(state.step, path)
    finally:
        if log_file is not None:
            log_file.close()
    return checkpoints
