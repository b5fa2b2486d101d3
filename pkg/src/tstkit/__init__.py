"""Transformer encoders for multivariate time series, on numpy.

Masked-value denoising pretraining, supervised training and fine-tuning,
imputation, and the supporting tensor/autodiff core.
"""

from .checkpoint import Checkpoint, CheckpointError, diff_checkpoints, load_checkpoint, save_checkpoint
from .data import (
    Batch,
    DataError,
    Dataset,
    NormStats,
    Sample,
    compute_norm_stats,
    normalize,
    normalize_dataset,
    pad_and_batch,
    parse_archive,
    split_train_val,
    subset_labels,
    write_archive,
)
from .masking import MaskSpec, NoiseMask, apply_mask, generate, make_rng, sample_mask
from .metrics import ResultsMatrix, accuracy, avg_rank, avg_rel_diff_from_mean, rmse
from .model import ConfigError, ModelConfig, TSTModel, encode
from .tensor import Tensor, backward, no_grad
from .train import (
    FitResult,
    NumericError,
    TrainConfig,
    evaluate,
    impute,
    masked_mse_loss,
    model_for_task,
    pretrain,
    supervised_loss,
    train_supervised,
)

__version__ = "0.1.0"
