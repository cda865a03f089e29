"""ResDTA: drug-target binding affinity regression with a three-stream residual 1D CNN."""

from .dataset import (
    EncodedInteractions,
    FoldSplit,
    InteractionRecord,
    RawDataset,
    encode_dataset,
    flatten,
    kiba_transform,
    load_fold_files,
    load_kiba,
    make_folds,
)
from .metrics import MetricsReport, aggregate, concordance_index, mse, r_squared_pair, rm2
from .model import (
    ModelConfig,
    ResDTA,
    conv_output_length,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, TrainHistory, fit, predict, rmse_loss, schedule_lr
from .vocab import (
    EncodedSequence,
    Vocabulary,
    encode,
    protein_vocabulary,
    smiles_vocabulary,
)

__version__ = "0.1.0"

__all__ = [
    "EncodedInteractions",
    "EncodedSequence",
    "FoldSplit",
    "InteractionRecord",
    "MetricsReport",
    "ModelConfig",
    "RawDataset",
    "ResDTA",
    "TrainConfig",
    "TrainHistory",
    "Vocabulary",
    "aggregate",
    "concordance_index",
    "conv_output_length",
    "encode",
    "encode_dataset",
    "fit",
    "flatten",
    "kiba_transform",
    "load_checkpoint",
    "load_fold_files",
    "load_kiba",
    "make_folds",
    "mse",
    "predict",
    "protein_vocabulary",
    "r_squared_pair",
    "rm2",
    "rmse_loss",
    "save_checkpoint",
    "schedule_lr",
    "smiles_vocabulary",
]
