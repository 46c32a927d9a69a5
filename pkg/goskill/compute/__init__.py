"""Dense tensors, reverse-mode differentiation, layers and Adam."""
from .checkpoint import CHECKPOINT_VERSION, load_checkpoint, load_into, save_checkpoint
from .functional import (
    AttentionParams,
    causal_self_attention,
    layer_norm,
    linear_forward,
    mse_loss,
    softmax_cross_entropy,
)
from .nn import (
    MLP,
    CausalTransformer,
    Dropout,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    initialize,
    state_checksum,
)
from .optim import Adam, AdamState, adam_update, clip_grad_norm
from .tensor import ComputationTape, Tensor, concat, no_grad, stack, straight_through

__all__ = [
    "CHECKPOINT_VERSION",
    "load_checkpoint",
    "load_into",
    "save_checkpoint",
    "AttentionParams",
    "causal_self_attention",
    "layer_norm",
    "linear_forward",
    "mse_loss",
    "softmax_cross_entropy",
    "MLP",
    "CausalTransformer",
    "Dropout",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "initialize",
    "state_checksum",
    "Adam",
    "AdamState",
    "adam_update",
    "clip_grad_norm",
    "ComputationTape",
    "Tensor",
    "concat",
    "no_grad",
    "stack",
    "straight_through",
]
