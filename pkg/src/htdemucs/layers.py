"""Parameter containers and the small layer set used by the model."""
import math

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Tensor


class Module:
    """Attribute-walking parameter container (Tensors, Modules, lists of Modules)."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing={missing[:5]} extra={extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        """Cast every parameter in place (used to run float64 oracles)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = uniform_fan_in(rng, (d_out, d_in), d_in)
        self.bias = uniform_fan_in(rng, (d_out,), d_in) if bias else None

    def __call__(self, x):
        return nx.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """Affine normalization over ``axes``; (-1,) is per token, (-2, -1) all tokens jointly."""

    def __init__(self, dim, axes=(-1,), eps=1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self._axes = tuple(axes)
        self._eps = eps

    def __call__(self, x):
        return nx.layer_norm(x, self._axes, self.gamma, self.beta, self._eps)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True):
        fan_in = c_in * kernel
        self.weight = uniform_fan_in(rng, (c_out, c_in, kernel), fan_in)
        self.bias = uniform_fan_in(rng, (c_out,), fan_in) if bias else None
        self._stride, self._padding = stride, padding

    def __call__(self, x):
        return nx.conv1d(x, self.weight, self.bias, self._stride, self._padding)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True):
        fan_in = c_out * kernel
        self.weight = uniform_fan_in(rng, (c_in, c_out, kernel), fan_in)
        self.bias = uniform_fan_in(rng, (c_out,), fan_in) if bias else None
        self._stride, self._padding = stride, padding

    def __call__(self, x):
        return nx.conv_transpose1d(x, self.weight, self.bias, self._stride, self._padding)
