"""AT baseline, CASS-NAT model, losses and the training loop."""

from .at import ATModel, Hypothesis
from .cassnat import CassNat, DecoderOutput, batch_trigger
from .config import LossWeights, ModelConfig
from .encoder import Encoder, EncoderOutput
from .train import (
    TrainConfig,
    TrainResult,
    average_checkpoints,
    build_model,
    dev_wer,
    load_encoder_from,
    load_model,
    save_model,
    train,
)

__all__ = [
    "ATModel", "Hypothesis", "CassNat", "DecoderOutput", "batch_trigger", "LossWeights", "ModelConfig",
    "Encoder", "EncoderOutput", "TrainConfig", "TrainResult", "average_checkpoints", "build_model",
    "dev_wer", "load_encoder_from", "load_model", "save_model", "train",
]
