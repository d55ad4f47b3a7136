"""Desk-scale adversarial image synthesis laboratory.

Core pieces: cut-mask mixing with attention-weighted labels, a hierarchical
image/pixel discriminator, a reverse-skip feature bank feeding the generator,
differentiable augmentation, a two-phase training loop, and Frechet-distance
evaluation on a procedural phantom dataset.
"""

from .augment import AugPolicy, diff_augment
from .data import ArrayDataset, DatasetSpec, load_dataset, load_image_dir, phantom_dataset
from .discriminator import Discriminator, DiscriminatorConfig, DiscOutput
from .errors import DataError, NumericalError
from .evaluation import (
    FeatureStats,
    compute_stats,
    default_extractor,
    embed,
    eval_run,
    fid_between,
    frechet_distance,
)
from .feature_bank import FeatureBank
from .generator import Generator, GeneratorConfig, GeneratorOutput, sample_latent
from .losses import (
    LossWeights,
    adv_d_loss,
    adv_g_loss,
    consistency_loss,
    feature_consistency_loss,
    total_d_loss,
    total_g_loss,
)
from .masks import (
    BinaryMask,
    MixLabel,
    SaliencyMap,
    attention_to_saliency,
    attention_weighted_ratio,
    attnmix_compose,
    make_mix_label,
    mix_label,
    mix_pixel_targets,
    sample_cut_mask,
)
from .training import TrainConfig, build_state, load_checkpoint, train, train_step

__version__ = "0.1.0"
