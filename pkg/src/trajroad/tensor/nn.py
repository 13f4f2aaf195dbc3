"""Parameters, Xavier initialisation and the Adam optimizer."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .core import DEFAULT_DTYPE, Tensor


def xavier_init(shape, fan_in, fan_out, rng, dtype=DEFAULT_DTYPE):
    """Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.data)


class ParamSet:
    """Ordered name -> Parameter mapping; indexing returns the tensor."""

    def __init__(self, params=()):
        self._params = {}
        for p in params:
            self.add(p)

    def add(self, param):
        if param.name in self._params:
            raise KeyError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param

    def __getitem__(self, name):
        return self._params[name].tensor

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def parameters(self):
        return list(self._params.values())

    def param(self, name):
        return self._params[name]

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.zero_grad()

    def astype(self, dtype):
        """Copy of the set with values cast to ``dtype`` and fresh optimizer state."""
        return ParamSet(Parameter(n, Tensor(p.tensor.data.astype(dtype), dtype=dtype))
                        for n, p in self._params.items())

    def copy(self):
        return ParamSet(Parameter(n, Tensor(p.tensor.data.copy(), dtype=p.tensor.dtype),
                                  p.m.copy(), p.v.copy())
                        for n, p in self._params.items())

    def count(self):
        return sum(p.tensor.size for p in self._params.values())


def adam_step(params, grads=None, t=1, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place.

    ``params`` is an iterable of Parameter; ``grads`` defaults to each
    parameter's ``tensor.grad``.  ``t`` is the 1-based step number.
    """
    params = list(params)
    if grads is None:
        grads = [p.tensor.grad for p in params]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.tensor.shape:
            raise ShapeMismatch(f"{p.name}: grad {g.shape} vs param {p.tensor.shape}")
        dt = p.tensor.dtype
        p.m *= dt.type(beta1)
        p.m += dt.type(1 - beta1) * g
        p.v *= dt.type(beta2)
        p.v += dt.type(1 - beta2) * g * g
        step = (lr / bc1) * p.m / (np.sqrt(p.v / bc2) + eps)
        p.tensor.data -= step.astype(dt)
