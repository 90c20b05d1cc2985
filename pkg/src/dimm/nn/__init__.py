"""Small reverse-mode autodiff kernel used by the fusion agent."""

from .autodiff import Graph, GraphError, Parameter, Tensor
from .checkpoint import load_params, save_params
from .layers import Dense, EncoderBlock, LayerNorm, MLP, MultiHeadAttention, ParamStore
from .optim import Adam, adam_step

__all__ = [
    "Adam", "Dense", "EncoderBlock", "Graph", "GraphError", "LayerNorm", "MLP",
    "MultiHeadAttention", "Parameter", "ParamStore", "Tensor", "adam_step",
    "load_params", "save_params",
]
