from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D
from .model import (
    BatchTrace,
    ForwardTrace,
    GradientSet,
    Model,
    accuracy,
    backward,
    backward_from_trace,
    build_cnn,
    build_mlp,
    copy_model,
    forward,
    forward_batch,
    loss,
    loss_batch,
    predict,
)

__all__ = [
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool2D",
    "BatchTrace",
    "ForwardTrace",
    "GradientSet",
    "Model",
    "accuracy",
    "backward",
    "backward_from_trace",
    "build_cnn",
    "build_mlp",
    "copy_model",
    "forward",
    "forward_batch",
    "loss",
    "loss_batch",
    "predict",
]
