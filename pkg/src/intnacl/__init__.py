"""Contrastive losses as neighbourhood component analysis, with adversarial robustness terms.

A small numpy-only stack: reverse-mode autodiff, an MLP encoder, the
g0/g1/g2 negative estimators, the NCA/MIXNCA/integrated loss family,
FGSM/PGD attacks, a training loop and a linear-probe evaluation harness.
"""

from .adversarial import AttackConfig, fgsm, pgd, project_linf
from .batch import ContrastiveBatch
from .data import AugmentConfig, Dataset, augment, make_blobs, sample_contrastive_batch
from .encoder import Encoder, EncoderConfig, encode, init
from .errors import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    IntNaClError,
    NumericalError,
    ShapeError,
    TapeError,
    ZeroNormError,
)
from .estimators import EstimatorConfig
from .losses import LossConfig, PRESETS, intcl_loss, intnacl_loss, preset
from .training import TrainConfig, train_encoder

__version__ = "0.1.0"
