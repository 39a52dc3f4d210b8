"""Generator and discriminator networks, deterministic init, checkpoints.

Both training modes share one architecture; the single structural
difference is the channel head: the generator ends in a K-channel softmax
(semantic) or a 3-channel sigmoid (rgb), and the discriminator's first
convolution takes K or 3 input channels. Every parameter tensor is
initialized from its own stream keyed by (seed, network, parameter name),
so two builds with equal seeds share bit-identical trunk weights across
modes.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import rng
from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1

SEMANTIC = "semantic"
RGB = "rgb"

# Parameter-name prefixes of the mode-dependent heads; everything else is
# trunk and identical across modes at equal seed.
GENERATOR_HEAD_PREFIX = "head."
DISCRIMINATOR_HEAD_PREFIX = "blocks.0.conv."

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by generator and discriminator."""

    mode: str
    image_size: int
    num_classes: int = 4
    latent_dim: int = 64
    kernel_size: int = 7
    base_channels: int = 8
    depth: int | None = None

    def __post_init__(self):
        if self.mode not in (SEMANTIC, RGB):
            raise ConfigError(f"mode must be '{SEMANTIC}' or '{RGB}', got {self.mode!r}")
        depth = self.depth
        if depth is None:
            # Generator grows a 4x4 seed by factors of 2 up to image_size.
            ratio = self.image_size / 4
            depth = int(round(np.log2(ratio))) if ratio >= 2 else 0
            object.__setattr__(self, "depth", depth)
        if self.depth < 1 or self.image_size != 4 * 2**self.depth:
            raise ConfigError(
                f"image_size {self.image_size} must equal 4 * 2**depth (depth={self.depth})"
            )
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.mode == SEMANTIC and self.num_classes < 2:
            raise ConfigError(f"semantic mode needs >= 2 classes, got {self.num_classes}")

    @property
    def out_channels(self) -> int:
        return self.num_classes if self.mode == SEMANTIC else 3


class _GenBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, ks: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, ks, padding=ks // 2)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.bn(self.conv(x)), LEAKY_SLOPE)


class Generator(nn.Module):
    """Maps (n, latent_dim) to (n, out_channels, H, W) class/color maps."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.seed_channels = cfg.base_channels * 2**cfg.depth
        self.fc = nn.Linear(cfg.latent_dim, 16 * self.seed_channels)
        self.bn0 = nn.BatchNorm2d(self.seed_channels)
        chans = [self.seed_channels] + [cfg.base_channels * 2 ** (cfg.depth - 1 - i) for i in range(cfg.depth)]
        self.blocks = nn.ModuleList(_GenBlock(chans[i], chans[i + 1], cfg.kernel_size) for i in range(cfg.depth))
        self.head = nn.Conv2d(chans[-1], cfg.out_channels, cfg.kernel_size, padding=cfg.kernel_size // 2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"latent batch must be (n, {self.cfg.latent_dim}), got {tuple(z.shape)}")
        x = self.fc(z).reshape(-1, self.seed_channels, 4, 4)
        x = F.leaky_relu(self.bn0(x), LEAKY_SLOPE)
        for block in self.blocks:
            x = block(x)
        x = self.head(x)
        if self.cfg.mode == SEMANTIC:
            return torch.softmax(x, dim=1)
        return torch.sigmoid(x)


class _DiscBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, ks: int, use_bn: bool):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, ks, stride=2, padding=ks // 2)
        self.bn = nn.BatchNorm2d(c_out) if use_bn else None

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        return F.leaky_relu(x, LEAKY_SLOPE)


class Discriminator(nn.Module):
    """Maps (n, out_channels, H, W) inputs to realness probabilities.

    forward returns (probs, features) where features are the flattened
    activations after the requested block (None to skip).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.out_channels] + [cfg.base_channels * 2**i for i in range(cfg.depth)]
        # No batch-norm on the first block, per DCGAN practice.
        self.blocks = nn.ModuleList(
            _DiscBlock(chans[i], chans[i + 1], cfg.kernel_size, use_bn=i > 0) for i in range(cfg.depth)
        )
        self.fc = nn.Linear(chans[-1] * 16, 1)

    def forward(
        self, x: torch.Tensor, feature_layer: int | None = None
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        expected = (self.cfg.out_channels, self.cfg.image_size, self.cfg.image_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"discriminator input must be (n, {expected[0]}, {expected[1]}, {expected[2]}), got {tuple(x.shape)}")
        if feature_layer is not None and not (0 <= feature_layer < len(self.blocks)):
            raise ConfigError(f"feature_layer {feature_layer} out of range for depth {len(self.blocks)}")
        features = None
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i == feature_layer:
                features = x.flatten(1)
        probs = torch.sigmoid(self.fc(x.flatten(1))).squeeze(-1)
        return probs, features


def default_feature_layer(depth: int) -> int:
    """Penultimate discriminator block (the last one on depth-1 models)."""
    return max(depth - 2, 0)


@dataclass
class ModelState:
    """Networks plus Adam moments and the global step counter."""

    config: ModelConfig
    generator: Generator
    discriminator: Discriminator
    adam_m: dict[str, torch.Tensor] = field(repr=False, default_factory=dict)
    adam_v: dict[str, torch.Tensor] = field(repr=False, default_factory=dict)
    step: int = 0

    def named_parameters(self) -> dict[str, torch.Tensor]:
        named = {f"gen.{n}": p for n, p in self.generator.named_parameters()}
        named.update({f"disc.{n}": p for n, p in self.discriminator.named_parameters()})
        return named

    def named_buffers(self) -> dict[str, torch.Tensor]:
        named = {f"gen.{n}": b for n, b in self.generator.named_buffers()}
        named.update({f"disc.{n}": b for n, b in self.discriminator.named_buffers()})
        return named


def _seeded_init(module: nn.Module, seed: int, net_tag: str) -> None:
    with torch.no_grad():
        for mod_name, mod in module.named_modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                gen = torch.Generator().manual_seed(rng.torch_seed(seed, net_tag, f"{mod_name}.weight"))
                mod.weight.normal_(0.0, 0.02, generator=gen)
                if mod.bias is not None:
                    mod.bias.zero_()
            elif isinstance(mod, nn.BatchNorm2d):
                gen = torch.Generator().manual_seed(rng.torch_seed(seed, net_tag, f"{mod_name}.weight"))
                mod.weight.normal_(1.0, 0.02, generator=gen)
                mod.bias.zero_()


def build_models(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> ModelState:
    """Construct generator/discriminator with deterministic initialization."""
    generator = Generator(cfg).to(dtype)
    discriminator = Discriminator(cfg).to(dtype)
    _seeded_init(generator, seed, "gen")
    _seeded_init(discriminator, seed, "disc")
    state = ModelState(cfg, generator, discriminator)
    for name, p in state.named_parameters().items():
        state.adam_m[name] = torch.zeros_like(p)
        state.adam_v[name] = torch.zeros_like(p)
    return state


def _to_channels_first(x: np.ndarray | torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
    t = torch.as_tensor(np.ascontiguousarray(x) if isinstance(x, np.ndarray) else x)
    if t.ndim != 4:
        raise ShapeError(f"expected a (n, H, W, C) batch, got shape {tuple(t.shape)}")
    return t.permute(0, 3, 1, 2).contiguous().to(dtype)


def generator_forward(state: ModelState, z: np.ndarray | torch.Tensor) -> np.ndarray:
    """Sample the generator in eval mode; returns a (n, H, W, C) array.

    Semantic mode yields per-pixel class distributions (softmax over the
    class channel); rgb mode yields colors in [0, 1].
    """
    dtype = next(state.generator.parameters()).dtype
    z_t = torch.as_tensor(z).to(dtype)
    state.generator.eval()
    with torch.no_grad():
        out = state.generator(z_t)
    return out.permute(0, 2, 3, 1).contiguous().numpy()


def discriminator_forward(
    state: ModelState, x: np.ndarray | torch.Tensor, feature_layer: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode discriminator pass on a (n, H, W, C) batch.

    Returns (probs, features); features come from `feature_layer`
    (default: the penultimate block).
    """
    if feature_layer is None:
        feature_layer = default_feature_layer(state.config.depth)
    dtype = next(state.discriminator.parameters()).dtype
    x_t = _to_channels_first(x, dtype)
    state.discriminator.eval()
    with torch.no_grad():
        probs, feats = state.discriminator(x_t, feature_layer)
    return probs.numpy(), feats.numpy()


def _checkpoint_arrays(state: ModelState) -> dict[str, np.ndarray]:
    arrays = {}
    for name, p in state.named_parameters().items():
        arrays[f"param/{name}"] = p.detach().numpy()
        arrays[f"adam_m/{name}"] = state.adam_m[name].numpy()
        arrays[f"adam_v/{name}"] = state.adam_v[name].numpy()
    for name, b in state.named_buffers().items():
        arrays[f"buffer/{name}"] = b.detach().numpy()
    return arrays


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Write state as an npz container of named tensors plus a JSON manifest."""
    manifest = dict(
        format_version=CHECKPOINT_FORMAT_VERSION,
        step=state.step,
        **asdict(state.config),
    )
    arrays = _checkpoint_arrays(state)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, manifest=json.dumps(manifest), **arrays)


def load_checkpoint(path: str | Path) -> ModelState:
    """Rebuild a ModelState from disk; bit-exact inverse of save_checkpoint."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            payload = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "manifest" not in payload:
        raise CheckpointError(f"checkpoint {path} has no manifest")
    manifest = json.loads(str(payload["manifest"]))
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {manifest.get('format_version')}")
    cfg_fields = {k: manifest[k] for k in ("mode", "image_size", "num_classes", "latent_dim", "kernel_size", "base_channels", "depth")}
    cfg = ModelConfig(**cfg_fields)
    state = build_models(cfg, seed=0)
    with torch.no_grad():
        for name, p in state.named_parameters().items():
            for prefix, target in (("param", p), ("adam_m", state.adam_m[name]), ("adam_v", state.adam_v[name])):
                key = f"{prefix}/{name}"
                if key not in payload:
                    raise CheckpointError(f"checkpoint {path} is missing tensor {key}")
                arr = payload[key]
                if tuple(arr.shape) != tuple(target.shape):
                    raise CheckpointError(
                        f"checkpoint tensor {key} has shape {tuple(arr.shape)}, expected {tuple(target.shape)}"
                    )
                target.copy_(torch.from_numpy(arr))
        for name, b in state.named_buffers().items():
            key = f"buffer/{name}"
            if key not in payload:
                raise CheckpointError(f"checkpoint {path} is missing tensor {key}")
            arr = payload[key]
            if tuple(arr.shape) != tuple(b.shape):
                raise CheckpointError(f"checkpoint tensor {key} has shape {tuple(arr.shape)}, expected {tuple(b.shape)}")
            b.copy_(torch.from_numpy(arr))
    state.step = int(manifest["step"])
    return state
