"""Patch-feature image pipeline whose spatial pooling maps are learned by gradient descent."""

from .classifier import ClassifierState, backward, forward, sgd_step
from .codebook import Codebook, encode_image, train_kmeans, triangle_encode
from .config import TrainConfig, load_config, preset
from .dataset import ImageSample, generate_synthetic, load_cifar_batch, split
from .pooling import (NormStats, PoolMapSet, apply_norm, fit_norm_stats, init_quadrant_maps,
                      pool_forward, pool_update)
from .preprocess import apply_whitening, extract_patches, fit_whitening, normalize_patch
from .training import TrainReport, evaluate, run_phase1, run_phase2, run_trials

__version__ = "0.1.0"
