"""
Autoencoder Service

Fully connected encoder/decoder pairs, one pair per element type, evaluated in
float64. Hidden layers use softplus or tanh; output layers are linear.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from app.core.exceptions import ValidationError
from app.core.validation import validate_layer_sizes

ArrayLike = Union[np.ndarray, torch.Tensor]

DTYPE = torch.float64


def stable_softplus(x: torch.Tensor) -> torch.Tensor:
    """Overflow-safe ``log(1 + exp(x))``."""
    return torch.clamp(x, min=0.0) + torch.log1p(torch.exp(-torch.abs(x)))


ACTIVATIONS = {
    "softplus": stable_softplus,
    "tanh": torch.tanh,
}


class Mlp(nn.Module):
    """Dense stack; activation after every layer except the last."""

    def __init__(self, layer_sizes: Sequence[int], activation: str = "softplus", type_id: int = 0):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValidationError(f"Unknown activation '{activation}'", field="activation")
        self.layer_sizes: Tuple[int, ...] = validate_layer_sizes(layer_sizes)
        self.activation = activation
        self.type_id = type_id
        self.layers = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=DTYPE)
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        )

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                x = act(x)
        return x

    @property
    def weights(self):
        return [layer.weight.detach().cpu().numpy() for layer in self.layers]

    @property
    def biases(self):
        return [layer.bias.detach().cpu().numpy() for layer in self.layers]


def init_params(
    layer_sizes: Sequence[int],
    activation: str = "softplus",
    seed: int = 0,
    type_id: int = 0,
) -> Mlp:
    """Xavier-uniform weights and zero biases, reproducible from ``seed``."""
    mlp = Mlp(layer_sizes, activation, type_id)
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in mlp.layers:
            fan_out, fan_in = layer.weight.shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            layer.weight.uniform_(-bound, bound, generator=generator)
            layer.bias.zero_()
    return mlp


def _apply(mlp: Mlp, x: ArrayLike, label: str) -> ArrayLike:
    is_numpy = not isinstance(x, torch.Tensor)
    tensor = torch.as_tensor(np.asarray(x, dtype=np.float64)) if is_numpy else x
    if tensor.shape[-1] != mlp.n_in:
        raise ValidationError(
            f"{label} has trailing size {tensor.shape[-1]}, expected {mlp.n_in}", field=label
        )
    if is_numpy:
        with torch.no_grad():
            return mlp(tensor).numpy()
    return mlp(tensor)


def encode(params: Mlp, q_local: ArrayLike) -> ArrayLike:
    """Latent coordinates of one or more local fields (trailing axis = space)."""
    return _apply(params, q_local, "q_local")


def decode(params: Mlp, z: ArrayLike) -> ArrayLike:
    return _apply(params, z, "z")


class Autoencoder(nn.Module):
    """Encoder/decoder pair for one element type."""

    def __init__(self, encoder: Mlp, decoder: Mlp):
        super().__init__()
        if encoder.n_out != decoder.n_in or encoder.n_in != decoder.n_out:
            raise ValidationError("encoder and decoder sizes do not mirror each other", field="decoder")
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def build(
        cls,
        n_local: int,
        hidden_sizes: Sequence[int],
        latent_dim: int,
        activation: str = "softplus",
        seed: int = 0,
        type_id: int = 0,
    ) -> "Autoencoder":
        sizes = (n_local, *hidden_sizes, latent_dim)
        encoder = init_params(sizes, activation, seed, type_id)
        decoder = init_params(tuple(reversed(sizes)), activation, seed + 1, type_id)
        return cls(encoder, decoder)

    @property
    def n_local(self) -> int:
        return self.encoder.n_in

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    @property
    def activation(self) -> str:
        return self.encoder.activation

    @property
    def type_id(self) -> int:
        return self.encoder.type_id

    def encode(self, q_local: ArrayLike) -> ArrayLike:
        return encode(self.encoder, q_local)

    def decode(self, z: ArrayLike) -> ArrayLike:
        return decode(self.decoder, z)

    def forward(self, q_local: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(q_local))


@dataclass
class GradientTape:
    """Per-parameter gradient accumulators keyed by parameter name."""

    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: nn.Module) -> "GradientTape":
        return cls({name: np.zeros(tuple(p.shape)) for name, p in params.named_parameters()})

    def accumulate(self, other: "GradientTape") -> "GradientTape":
        for name, grad in other.grads.items():
            if name in self.grads:
                if self.grads[name].shape != grad.shape:
                    raise ValidationError(f"gradient shape mismatch for {name}", field=name)
                self.grads[name] = self.grads[name] + grad
            else:
                self.grads[name] = grad.copy()
        return self

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]


def backprop(
    params: Mlp,
    inputs: ArrayLike,
    upstream_grad: ArrayLike,
    tape: Optional[GradientTape] = None,
) -> Tuple[GradientTape, np.ndarray]:
    """Reverse-mode gradients of ``<upstream_grad, params(inputs)>``.

    Returns the parameter tape (added into ``tape`` when given) and the
    gradient with respect to ``inputs``.
    """
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64)).clone().requires_grad_(True)
    upstream = torch.as_tensor(np.asarray(upstream_grad, dtype=np.float64))
    if x.shape[-1] != params.n_in:
        raise ValidationError(f"input trailing size {x.shape[-1]} != {params.n_in}", field="inputs")
    out = params(x)
    if upstream.shape != out.shape:
        raise ValidationError(
            f"upstream gradient shape {tuple(upstream.shape)} != output shape {tuple(out.shape)}",
            field="upstream_grad",
        )
    names, tensors = zip(*params.named_parameters())
    grads = torch.autograd.grad(out, (x, *tensors), grad_outputs=upstream)
    step = GradientTape({name: g.detach().numpy().copy() for name, g in zip(names, grads[1:])})
    tape = (tape or GradientTape.zeros_like(params)).accumulate(step)
    return tape, grads[0].detach().numpy()
