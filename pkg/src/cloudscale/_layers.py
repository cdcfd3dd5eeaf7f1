"""Parameter dicts and dense stacks shared by the networks."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .numgrad import GradientTape, Tensor, add, apply_activation, matmul

Params = dict  # name -> np.ndarray


def init_mlp(
    prefix: str,
    sizes: Sequence[int],
    rng: np.random.Generator | None,
    out_scale: float = 1.0,
) -> Params:
    """Glorot-uniform weights, zero biases; ``rng=None`` gives all zeros."""
    params = {}
    n_layers = len(sizes) - 1
    for k in range(n_layers):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        if rng is None:
            w = np.zeros((fan_in, fan_out))
        else:
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            if k == n_layers - 1:
                w *= out_scale
        params[f"{prefix}.W{k}"] = w
        params[f"{prefix}.b{k}"] = np.zeros((1, fan_out))
    return params


def mlp(
    p: Mapping[str, Tensor],
    prefix: str,
    x: Tensor,
    n_layers: int,
    activation: str = "relu",
    out_activation: str = "identity",
) -> Tensor:
    for k in range(n_layers):
        x = add(matmul(x, p[f"{prefix}.W{k}"]), p[f"{prefix}.b{k}"])
        x = apply_activation(x, activation if k < n_layers - 1 else out_activation)
    return x


def as_constants(params: Params) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def watch_all(tape: GradientTape, params: Params, names=None) -> dict[str, Tensor]:
    names = params.keys() if names is None else names
    return {k: tape.watch(params[k]) for k in names}


def params_to_json(params: Params) -> dict:
    return {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in params.items()}


def params_from_json(obj: Mapping) -> Params:
    return {
        k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj.items()
    }
