import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    """Parameter container; walks attributes to find Parameters and submodules."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.value for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name], dtype=np.float64)
                if value.shape != p.value.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.value.shape}")
                p.value[...] = value


def _walk(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.W = Parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.b = Parameter(uniform_init(rng, d_in, (d_out,))) if bias else None

    def __call__(self, x):
        y = ops.matmul(x, self.W)
        return y if self.b is None else ops.add(y, self.b)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x):
        return ops.layer_norm(x, self.gain, self.bias)
