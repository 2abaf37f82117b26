"""Parameter containers: a small Module tree with named parameters,
state dicts and freezing. Initialization always draws from an explicitly
passed Generator so model construction is reproducible bit for bit.
"""

import collections

import numpy as np

from .tensor import Tensor, ShapeError
from . import functional as F

__all__ = ["Parameter", "Module", "ModuleList", "Linear", "Conv2d", "LayerNorm",
           "he_normal"]


class Parameter(Tensor):
    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", collections.OrderedDict())
        object.__setattr__(self, "_children", collections.OrderedDict())

    def __setattr__(self, key, value):
        params = self.__dict__ if False else object.__getattribute__(self, "_params")
        children = object.__getattribute__(self, "_children")
        params.pop(key, None)
        children.pop(key, None)
        if isinstance(value, Parameter):
            params[key] = value
        elif isinstance(value, Module):
            children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        for k, p in self._params.items():
            yield (prefix + k, p)
        for k, child in self._children.items():
            yield from child.named_parameters(prefix + k + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def state_dict(self):
        return collections.OrderedDict(
            (name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state):
        own = collections.OrderedDict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError("state dict mismatch: missing %s, unexpected %s"
                           % (sorted(missing), sorted(extra)))
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeError("param %r: stored shape %s != model shape %s"
                                 % (name, arr.shape, p.data.shape))
            p.data[...] = arr.astype(p.data.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._n = 0
        for m in mods:
            self.append(m)

    def append(self, mod):
        setattr(self, str(self._n), mod)
        self._n += 1
        return self

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        return getattr(self, str(range(self._n)[i]))

    def __iter__(self):
        return (getattr(self, str(i)) for i in range(self._n))


class Linear(Module):
    """Affine map along the last axis; weight stored [out, in]."""

    def __init__(self, in_features, out_features, rng, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((out_features, in_features), dtype=np.float32)
        else:
            w = he_normal(rng, (out_features, in_features), in_features)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_c, out_c, k, rng, stride=1, pad=None, bias=True,
                 zero_init=False):
        super().__init__()
        if pad is None:
            pad = k // 2
        self.stride, self.pad = stride, pad
        if zero_init:
            w = np.zeros((out_c, in_c, k, k), dtype=np.float32)
        else:
            w = he_normal(rng, (out_c, in_c, k, k), in_c * k * k)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_c, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=np.float32))
        self.beta = Parameter(np.zeros(dim, dtype=np.float32))

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, eps=self.eps)
