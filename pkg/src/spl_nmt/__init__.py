"""Self-paced learning for sequence-to-sequence models.

Monte Carlo dropout estimates how confident the model is about each training
sentence and token; those confidences reweight the training loss.
"""

from .config import ConfigError, RunConfig
from .confidence import ConfidenceConfig, ConfidenceWeights, McSamples, confidence_weights, mc_forward
from .data import SyntheticTask, generate_corpus
from .harness import MetricsRecord, NumericFailure, TrainResult, train
from .loss import LossConfig, spl_loss, vanilla_loss
from .model import Batch, ModelConfig, ModelParams, init_params

__version__ = "0.1.0"

__all__ = [
    "Batch", "ConfidenceConfig", "ConfidenceWeights", "ConfigError", "LossConfig", "McSamples",
    "MetricsRecord", "ModelConfig", "ModelParams", "NumericFailure", "RunConfig", "SyntheticTask",
    "TrainResult", "confidence_weights", "generate_corpus", "init_params", "mc_forward",
    "spl_loss", "train", "vanilla_loss",
]
