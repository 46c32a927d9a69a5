"""Parameter containers and the layers used by the skill and policy models."""
from __future__ import annotations

import hashlib
import zlib
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from goskill.errors import ConfigError, ShapeError

from .functional import AttentionParams, causal_self_attention, layer_norm, linear_forward
from .tensor import Tensor, dropout

INIT_STD = 0.02


class Parameter(Tensor):
    """Trainable leaf tensor; ``init`` names how it is (re)initialised."""

    __slots__ = ("init",)

    def __init__(self, shape: Sequence[int], init: str = "normal") -> None:
        super().__init__(np.zeros(tuple(shape)), requires_grad=True)
        self.init = init


class Module:
    """Minimal module tree: attributes that are parameters or sub-modules."""

    def __init__(self) -> None:
        self.training = True

    # ------------------------------------------------------------------
    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(
                isinstance(item, Module) for item in value
            ):
                for idx, item in enumerate(value):
                    yield f"{name}.{idx}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(prefix=f"{path}.")

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.grad = None

    def freeze(self) -> None:
        for param in self.parameters().values():
            param.requires_grad = False

    def unfreeze(self) -> None:
        for param in self.parameters().values():
            param.requires_grad = True

    # ------------------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        return {path: param.data.copy() for path, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {missing[:5]}")
        for path, param in params.items():
            value = np.asarray(state[path], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(f"parameter {path}: checkpoint shape {value.shape} != {param.shape}")
            param.data = value.copy()

    def checksum(self) -> str:
        return state_checksum(self.state_dict())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))


def state_checksum(state: Dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for path in sorted(state):
        digest.update(path.encode("utf-8"))
        digest.update(np.ascontiguousarray(state[path], dtype="<f8").tobytes())
    return digest.hexdigest()


def truncated_normal(shape: Tuple[int, ...], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2.0 * std
    while np.any(outside):
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2.0 * std
    return values


def initialize(module: Module, seed: int, std: float = INIT_STD) -> Module:
    """Seed every parameter from ``(seed, path)`` so layouts init reproducibly."""
    for path, param in module.named_parameters():
        if param.init == "zeros":
            param.data = np.zeros(param.shape)
        elif param.init == "ones":
            param.data = np.ones(param.shape)
        else:
            rng = np.random.default_rng([seed, zlib.crc32(path.encode("utf-8"))])
            param.data = truncated_normal(param.shape, std, rng)
        param.grad = None
    return module


# ----------------------------------------------------------------------
class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True) -> None:
        super().__init__()
        self.weight = Parameter((in_features, out_features))
        self.bias = Parameter((out_features,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.gain = Parameter((width,), init="ones")
        self.offset = Parameter((width,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.offset, self.eps)


class Dropout(Module):
    def __init__(self, rate: float, seed: int = 0) -> None:
        super().__init__()
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: Sequence[int]) -> None:
        super().__init__()
        if len(dims) < 2:
            raise ConfigError(f"MLP needs at least input and output widths, got {dims}")
        self.layers: List[Linear] = [Linear(a, b) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for idx, layer in enumerate(self.layers):
            x = layer(x)
            if idx < len(self.layers) - 1:
                x = x.relu()
        return x


class CausalSelfAttention(Module):
    def __init__(self, width: int, n_heads: int, dropout_rate: float = 0.0) -> None:
        super().__init__()
        if n_heads < 1 or width % n_heads:
            raise ConfigError(f"model width {width} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = Linear(width, 3 * width)
        self.out = Linear(width, width)
        self.attn_drop = Dropout(dropout_rate)

    def __call__(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        params = AttentionParams(self.qkv.weight, self.qkv.bias, self.out.weight, self.out.bias)
        return causal_self_attention(
            x,
            params,
            self.n_heads,
            key_mask=key_mask,
            dropout_rate=self.attn_drop.rate,
            rng=self.attn_drop.rng,
            training=self.training,
        )


class TransformerBlock(Module):
    """Pre-norm block: attention then a 4x ReLU feed-forward, both residual."""

    def __init__(self, width: int, n_heads: int, dropout_rate: float = 0.0) -> None:
        super().__init__()
        self.ln_attn = LayerNorm(width)
        self.attn = CausalSelfAttention(width, n_heads, dropout_rate)
        self.ln_mlp = LayerNorm(width)
        self.mlp = MLP((width, 4 * width, width))
        self.resid_drop = Dropout(dropout_rate)

    def __call__(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.resid_drop(self.attn(self.ln_attn(x), key_mask))
        return x + self.resid_drop(self.mlp(self.ln_mlp(x)))


class CausalTransformer(Module):
    def __init__(self, width: int, n_layers: int, n_heads: int, dropout_rate: float = 0.0) -> None:
        super().__init__()
        self.width = width
        self.embed_drop = Dropout(dropout_rate)
        self.blocks: List[TransformerBlock] = [
            TransformerBlock(width, n_heads, dropout_rate) for _ in range(n_layers)
        ]
        self.ln_final = LayerNorm(width)

    def seed_dropout(self, seed: int) -> None:
        for idx, module in enumerate(self.modules()):
            if isinstance(module, Dropout):
                module.reseed(zlib.crc32(f"{seed}:{idx}".encode("utf-8")))

    def __call__(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        if x.shape[-1] != self.width:
            raise ShapeError(f"transformer width {self.width} != token width {x.shape[-1]}")
        x = self.embed_drop(x)
        for block in self.blocks:
            x = block(x, key_mask)
        return self.ln_final(x)


__all__ = [
    "Parameter",
    "Module",
    "Linear",
    "LayerNorm",
    "Dropout",
    "MLP",
    "CausalSelfAttention",
    "TransformerBlock",
    "CausalTransformer",
    "initialize",
    "truncated_normal",
    "state_checksum",
]
