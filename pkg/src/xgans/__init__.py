"""Conditional-GAN reconstruction of heavily corrupted images."""

from .corruption import (
    CorruptedSample,
    CorruptionKind,
    CorruptionSpec,
    corrupt,
    make_feature_mask,
    make_uniform_mask,
    sobel_edge_map,
)
from .dataset import CorruptionSampler, DatasetManifest, TrainingData, load_and_normalize, sample_stream, split_manifest
from .discriminator import DiscriminatorConfig, ScaleFeatures, build_discriminators, discriminator_forward
from .evaluation import MetricsReport, ablate_point_loss, evaluate_grid, psnr, ssim
from .generator import GeneratorConfig, build_generator, generator_forward
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_losses,
    corresponding_point_loss,
    feature_matching_loss,
    perceptual_loss,
    total_generator_objective,
)
from .training import Batch, Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_loop, train_step

__version__ = "0.1.0"
