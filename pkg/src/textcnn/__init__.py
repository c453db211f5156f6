"""From-scratch text classification: convolutional and recurrent encoders
with manual layer-wise backpropagation, classical baselines, and ROC/AUC
evaluation."""

__version__ = "0.1.0"

from .models import ModelConfig, build, load, save
from .train import TrainConfig, fit

__all__ = ["ModelConfig", "TrainConfig", "build", "fit", "load", "save", "__version__"]
