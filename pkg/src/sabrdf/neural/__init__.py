from .graph import INPUT, GraphError, LayerGraph, Node
from .layers import (
    LAYER_TYPES,
    BatchNorm,
    BilinearUpsample,
    Concat,
    Conv2D,
    FullyConnected,
    Layer,
    MaxPool,
    ReLU,
    ShapeError,
    Sigmoid,
)
from .optim import Adam, mse_loss

__all__ = [
    "INPUT",
    "GraphError",
    "LayerGraph",
    "Node",
    "LAYER_TYPES",
    "BatchNorm",
    "BilinearUpsample",
    "Concat",
    "Conv2D",
    "FullyConnected",
    "Layer",
    "MaxPool",
    "ReLU",
    "ShapeError",
    "Sigmoid",
    "Adam",
    "mse_loss",
]
