"""Colored-shapes dataset synthesis and PNG label-map dataset loading.

Each scene is a 4-class label map: background (0), a blue circle (1), a
green rectangle (2) and a red square (3), painted in z-order
rectangle < square < circle. The dataset enumerates every valid square
position once; circle and rectangle placement comes from a per-item
counter-based stream, so generation parallelizes without changing output.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, DatasetError
from .labels import Palette, load_label_png, make_palette, save_label_png, validate_labels

DATASET_FORMAT_VERSION = 1
Z_ORDER = ("rectangle", "square", "circle")

# Rejection cap for re-drawing a fully occluded rectangle; hitting it would
# take an astronomically unlucky stream.
_MAX_PLACEMENT_ATTEMPTS = 1000


def shapes_palette() -> Palette:
    """Fixed 4-class palette of the colored-shapes dataset."""
    return make_palette(
        [
            (0, "background", (0, 0, 0)),
            (1, "circle", (0, 0, 255)),
            (2, "rectangle", (0, 255, 0)),
            (3, "square", (255, 0, 0)),
        ]
    )


@dataclass(frozen=True)
class ShapesConfig:
    """Scene geometry and seeding for the colored-shapes dataset.

    The default square_side of 11 makes the default 64px canvas enumerate
    54**2 = 2916 square positions (squares rasterized over an inclusive
    pixel range); pass square_side=10 for a nominal 10x10 square.
    """

    image_size: int = 64
    square_side: int = 11
    circle_radius: float = 10.0
    rect_width_range: tuple[int, int] = (8, 24)
    rect_height_range: tuple[int, int] = (6, 16)
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 1:
            raise ConfigError(f"image_size must be >= 1, got {self.image_size}")
        if not (1 <= self.square_side <= self.image_size):
            raise ConfigError(f"square_side must be in 1..{self.image_size}, got {self.square_side}")
        if self.circle_radius <= 0:
            raise ConfigError(f"circle_radius must be > 0, got {self.circle_radius}")
        for name, (lo, hi) in (
            ("rect_width_range", self.rect_width_range),
            ("rect_height_range", self.rect_height_range),
        ):
            if not (1 <= lo <= hi <= self.image_size):
                raise ConfigError(f"{name} must satisfy 1 <= min <= max <= image_size, got ({lo}, {hi})")

    @property
    def positions_per_axis(self) -> int:
        """Valid square top-left positions per axis (0..size-side inclusive)."""
        return self.image_size - self.square_side + 1

    @property
    def num_items(self) -> int:
        return self.positions_per_axis**2


@dataclass(frozen=True)
class SceneSpec:
    """Placement of the three shapes in one scene."""

    square_pos: tuple[int, int]  # top-left (x, y); must fit fully in-canvas
    circle_center: tuple[float, float]
    rect_pos: tuple[int, int]  # top-left (x, y); may clip at borders
    rect_dims: tuple[int, int]  # (w, h)


@dataclass(frozen=True)
class ShapesDataset:
    config: ShapesConfig
    items: tuple[tuple[SceneSpec, np.ndarray], ...]
    palette: Palette

    @property
    def label_maps(self) -> list[np.ndarray]:
        return [m for _, m in self.items]


def render_scene(spec: SceneSpec, cfg: ShapesConfig) -> np.ndarray:
    """Rasterize a scene spec to a (size, size) uint8 label map.

    Circle membership is (px-cx)**2 + (py-cy)**2 <= r**2; rectangle and
    circle clip at the borders, the square must fit fully inside.
    """
    size, side = cfg.image_size, cfg.square_side
    sx, sy = spec.square_pos
    if not (0 <= sx <= size - side and 0 <= sy <= size - side):
        raise ConfigError(f"square at {spec.square_pos} does not fit a {size}px canvas with side {side}")

    labels = np.zeros((size, size), dtype=np.uint8)

    rx, ry = spec.rect_pos
    rw, rh = spec.rect_dims
    labels[max(ry, 0) : max(ry + rh, 0), max(rx, 0) : max(rx + rw, 0)] = 2

    labels[sy : sy + side, sx : sx + side] = 3

    cx, cy = spec.circle_center
    yy, xx = np.ogrid[:size, :size]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= cfg.circle_radius**2
    labels[inside] = 1
    return labels


def _square_pos(cfg: ShapesConfig, index: int) -> tuple[int, int]:
    s = cfg.positions_per_axis
    return index % s, index // s


def sample_scene(cfg: ShapesConfig, index: int) -> SceneSpec:
    """Draw the scene spec for dataset item `index`.

    The square position enumerates the index; circle and rectangle come from
    the item's own stream. Draws are rejected until both the circle and the
    rectangle are visible in the rendered map (the rectangle sits at the
    bottom of the z-order and can otherwise be fully occluded).
    """
    if not (0 <= index < cfg.num_items):
        raise ConfigError(f"item index {index} out of range for {cfg.num_items} items")
    gen = rng.stream(cfg.seed, "shapes-item", counter=index)
    square_pos = _square_pos(cfg, index)
    size = cfg.image_size
    for _ in range(_MAX_PLACEMENT_ATTEMPTS):
        cx, cy = gen.uniform(0.0, size - 1.0, size=2)
        rw = int(gen.integers(cfg.rect_width_range[0], cfg.rect_width_range[1] + 1))
        rh = int(gen.integers(cfg.rect_height_range[0], cfg.rect_height_range[1] + 1))
        # Top-left anywhere that keeps at least one rectangle pixel in-canvas.
        rx = int(gen.integers(1 - rw, size))
        ry = int(gen.integers(1 - rh, size))
        spec = SceneSpec(square_pos, (float(cx), float(cy)), (rx, ry), (rw, rh))
        rendered = render_scene(spec, cfg)
        if (rendered == 1).any() and (rendered == 2).any():
            return spec
    raise DatasetError(f"could not place a visible rectangle for item {index}")


def generate_dataset(cfg: ShapesConfig, workers: int = 1) -> ShapesDataset:
    """Generate the full dataset, one item per square position.

    Output is a pure function of cfg: bit-identical across runs and worker
    counts (each item has its own counter-based stream).
    """

    def build(index: int) -> tuple[SceneSpec, np.ndarray]:
        spec = sample_scene(cfg, index)
        return spec, render_scene(spec, cfg)

    indices = range(cfg.num_items)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = tuple(pool.map(build, indices))
    else:
        items = tuple(build(i) for i in indices)
    return ShapesDataset(cfg, items, shapes_palette())


def _item_name(index: int) -> str:
    return f"item_{index:05d}.png"


def save_dataset(dataset: ShapesDataset, out_dir: str | Path, force: bool = False) -> None:
    """Write label PNGs plus palette.json and manifest.json."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not force:
        raise ConfigError(f"{out_dir} already contains a dataset; pass force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (_, labels) in enumerate(dataset.items):
        save_label_png(labels, out_dir / _item_name(i))
    dataset.palette.save(out_dir / "palette.json")
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "shapes-dataset",
        "item_count": len(dataset.items),
        "z_order": list(Z_ORDER),
        "palette_file": "palette.json",
        "config": asdict(dataset.config),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


def load_png_dataset(dataset_dir: str | Path, palette: Palette) -> list[np.ndarray]:
    """Load all label PNGs in a directory, in lexicographic filename order.

    Every map must share one shape and contain only labels < len(palette).
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise DatasetError(f"{dataset_dir} is not a directory")
    paths = sorted(p for p in dataset_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise DatasetError(f"{dataset_dir} contains no PNG files")
    maps = []
    shape = None
    for path in paths:
        labels = load_label_png(path, num_classes=palette.num_classes)
        if shape is None:
            shape = labels.shape
        elif labels.shape != shape:
            raise DatasetError(f"{path.name}: dimensions {labels.shape} differ from first file {shape}")
        maps.append(labels)
    return maps


def load_dataset_dir(dataset_dir: str | Path) -> tuple[list[np.ndarray], Palette, dict]:
    """Load a saved dataset directory (maps + palette + manifest)."""
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"{dataset_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format_version {manifest.get('format_version')}")
    palette = Palette.load(dataset_dir / manifest.get("palette_file", "palette.json"))
    maps = load_png_dataset(dataset_dir, palette)
    if len(maps) != manifest.get("item_count"):
        raise DatasetError(f"manifest says {manifest.get('item_count')} items, found {len(maps)} PNGs")
    for m in maps:
        validate_labels(m, palette.num_classes)
    return maps, palette, manifest
