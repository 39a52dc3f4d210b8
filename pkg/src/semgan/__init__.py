"""Semantic GANs: generators of per-pixel class distributions over a finite
label set, an RGB-GAN baseline, and the metric stack to compare them."""

__version__ = "0.1.0"

from .labels import (  # noqa: F401
    Palette,
    PaletteEntry,
    collapse,
    make_palette,
    one_hot_encode,
    quantize_rgb,
    spurious_pixel_rate,
    to_rgb,
)
from .nets import (  # noqa: F401
    ModelConfig,
    ModelState,
    build_models,
    discriminator_forward,
    generator_forward,
    load_checkpoint,
    save_checkpoint,
)
from .shapes import (  # noqa: F401
    SceneSpec,
    ShapesConfig,
    ShapesDataset,
    generate_dataset,
    render_scene,
    shapes_palette,
)
from .training import TrainConfig, d_loss, feature_matching_loss, sample_latent, train_step  # noqa: F401
from .metrics import (  # noqa: F401
    DescriptorSet,
    FeatureStats,
    extract_descriptors,
    feature_stats,
    frechet_distance,
    laplacian_pyramid,
    ms_ssim,
    ms_ssim_diversity,
    sliced_wasserstein,
)
from .evaluation import MetricConfig, MetricReport, evaluate_checkpoint, evaluate_image_sets  # noqa: F401
