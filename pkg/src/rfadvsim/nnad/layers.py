"""Parameterized layers and a small container base class."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, parameter


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def parameters(self) -> dict[str, Tensor]:
        return {}


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        self.weight = parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = parameter(np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        return ops.dense(x, self.weight, self.bias)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel, rng, padding="valid", dtype=np.float32):
        kh, kw = kernel
        fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        self.weight = parameter(glorot_uniform(rng, (kh, kw, c_in, c_out), fan_in, fan_out, dtype))
        self.bias = parameter(np.zeros(c_out, dtype=dtype))
        self.padding = padding

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.padding)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class ConvTranspose2d(Layer):
    def __init__(self, c_in, c_out, kernel, rng, padding="same", dtype=np.float32):
        kh, kw = kernel
        fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        self.weight = parameter(glorot_uniform(rng, (kh, kw, c_out, c_in), fan_in, fan_out, dtype))
        self.bias = parameter(np.zeros(c_out, dtype=dtype))
        self.padding = padding

    def __call__(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self.padding)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class Network:
    """Base for models built from named layers.

    Subclasses assign layers as attributes listed in ``layer_names`` and
    implement ``forward``. Parameters are exposed flat as ``"layer.param"``.
    """

    layer_names: tuple[str, ...] = ()

    def __init__(self):
        self.training = False

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for lname in self.layer_names:
            for pname, p in getattr(self, lname).parameters().items():
                out[f"{lname}.{pname}"] = p
        return out

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    def astype(self, dtype):
        """Cast all parameters in place (e.g. to float64 for gradient checks)."""
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = state[k].astype(p.data.dtype, copy=True)
        return self
