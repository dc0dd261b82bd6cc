"""Band attention convolutional networks for hyperspectral patch classification.

A numpy-only toolkit: tensors with reverse-mode gradients, the layers a
VGG-style classifier needs, a convolutional band attention head (plus a
squeeze-and-excitation baseline), the sampling rules for hyperspectral
benchmarks, Adam training and OA/AA/kappa evaluation.
"""

__version__ = "0.1.0"

from .attention import (BamConfig, BandAttention, BandMask, SqueezeExcitation, apply_mask, bam_forward,
                        bam_param_count, se_forward)
from .data import (HsiCube, LabelMap, PatchSet, extract_patches, load_cube, load_labels, normalize_bands,
                   replicate_minority, save_cube, save_labels, split_fraction, split_indian_pines)
from .metrics import MetricsReport, aa, aggregate, confusion, kappa, oa
from .model import Network, NetworkSpec, build
from .tensor import Tensor, backward, create, no_grad, spatial_mean
from .training import AdamState, DatasetSetup, TrainConfig, adam_step, evaluate, run_ablation, train

__all__ = [
    "aa",
    "adam_step",
    "AdamState",
    "aggregate",
    "apply_mask",
    "backward",
    "bam_forward",
    "bam_param_count",
    "BamConfig",
    "BandAttention",
    "BandMask",
    "build",
    "confusion",
    "create",
    "DatasetSetup",
    "evaluate",
    "extract_patches",
    "HsiCube",
    "kappa",
    "LabelMap",
    "load_cube",
    "load_labels",
    "MetricsReport",
    "Network",
    "NetworkSpec",
    "no_grad",
    "normalize_bands",
    "oa",
    "PatchSet",
    "replicate_minority",
    "run_ablation",
    "save_cube",
    "save_labels",
    "se_forward",
    "spatial_mean",
    "split_fraction",
    "split_indian_pines",
    "SqueezeExcitation",
    "Tensor",
    "train",
    "TrainConfig",
]
