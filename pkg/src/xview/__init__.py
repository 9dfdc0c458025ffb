"""Cross-domain multi-view variational feature learning with CTC recognisers."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .crossdomain import (ArchitectureConfig, LossWeights, RecognizerConfig, SharingSpec,
                          build_model, joint_recognizers_loss, mixed_minibatch, multitask_loss,
                          train, unsupervised_loss)
from .data import (Dataset, MultiViewPair, SynthConfig, Utterance, load_dataset, save_dataset,
                   synth_multiview, window_frames)
from .errors import (BadMagicError, ChecksumError, ConfigError, ContractError, DomainError,
                     FormatError, InfeasibleLabelsError, InfeasibleTargetError,
                     LabelInventoryMismatch, ShapeError, TrainingDivergedError, TruncatedError,
                     UndefinedMetricError, VersionError, XViewError)
from .estimators import (AdaptedRecognizer, CTCRecognizer, JointRecognizers,
                         MultitaskRecognizer, VariationalFeatureLearner)
from .optim import OptimizerConfig, adam_step, sgd_step
from .sequence import (BLANK, LstmStack, ctc_beam_search, ctc_greedy_decode, ctc_loss,
                       edit_distance, per)
from .tensor import Parameter, Tensor, backward
from .variational import (DiagGaussian, LatentDims, extract_features, kl_to_standard_normal,
                          vaep_loss, vae_loss, vccap_loss)

__version__ = "0.1.0"

__all__ = [
    "AdaptedRecognizer", "ArchitectureConfig", "BLANK", "BadMagicError", "CTCRecognizer",
    "Checkpoint", "ChecksumError", "ConfigError", "ContractError", "Dataset", "DiagGaussian",
    "DomainError", "ExperimentConfig", "FormatError", "InfeasibleLabelsError",
    "InfeasibleTargetError", "JointRecognizers", "LabelInventoryMismatch", "LatentDims",
    "LossWeights", "LstmStack", "MultiViewPair", "MultitaskRecognizer", "OptimizerConfig",
    "Parameter", "RecognizerConfig", "ShapeError", "SharingSpec", "SynthConfig", "Tensor",
    "TrainingDivergedError", "TruncatedError", "UndefinedMetricError", "Utterance",
    "VariationalFeatureLearner", "VersionError", "XViewError", "adam_step", "backward",
    "build_model", "ctc_beam_search", "ctc_greedy_decode", "ctc_loss", "edit_distance",
    "extract_features", "joint_recognizers_loss", "kl_to_standard_normal", "load_checkpoint",
    "load_config", "load_dataset", "mixed_minibatch", "multitask_loss", "per",
    "save_checkpoint", "save_dataset", "sgd_step", "synth_multiview", "train",
    "unsupervised_loss", "vae_loss", "vaep_loss", "vccap_loss", "window_frames",
]
