"""Parameter containers and the basic layers used by every network."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .conv import conv2d, conv_transpose2d
from .core import DEFAULT_DTYPE, DimensionError, Tensor


class CheckpointError(KeyError):
    pass


def _normal(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    std = math.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Module:
    """Attribute-walking parameter tree.

    Tensors stored as attributes are parameters, numpy arrays whose names are
    listed in ``_buffers`` are persistent state, and attributes holding modules
    (or lists of modules) are children.
    """

    _buffers: tuple[str, ...] = ()
    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad or not trainable_only]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters(trainable_only=False):
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters(trainable_only=False):
            p.grad = None

    def to(self, dtype) -> "Module":
        dtype = np.dtype(dtype)
        for m in self.modules():
            for name, value in list(vars(m).items()):
                if isinstance(value, Tensor):
                    value.data = value.data.astype(dtype)
            for name in m._buffers:
                setattr(m, name, getattr(m, name).astype(dtype))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(own) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in own and k not in buffers]
        if strict and (missing or unexpected):
            raise CheckpointError(f"checkpoint mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.shape:
                    raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
                p.data = arr.astype(p.dtype).copy()
        for m_name, m in self._buffer_owners():
            for b in m._buffers:
                key = f"{m_name}{b}"
                if key in state:
                    cur = getattr(m, b)
                    arr = np.asarray(state[key])
                    if arr.shape != cur.shape:
                        raise CheckpointError(f"shape mismatch for {key}: {arr.shape} vs {cur.shape}")
                    setattr(m, b, arr.astype(cur.dtype).copy())

    def _buffer_owners(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child._buffer_owners(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters(trainable_only=False))


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, dilation: int = 1, bias: bool = True):
        self.weight = _normal(rng, (cout, cin, k, k), cin * k * k)
        self.bias = _zeros((cout,)) if bias else None
        self.stride = stride
        self.padding = dilation * (k // 2) if padding is None else padding
        self.dilation = dilation

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    """Transposed conv; the default k=4, s=2, p=1 doubles the spatial extent exactly."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 4, stride: int = 2,
                 padding: int = 1, output_padding: int = 0, bias: bool = True):
        self.weight = _normal(rng, (cin, cout, k, k), cin * k * k)
        self.bias = _zeros((cout,)) if bias else None
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None):
        if std is None:
            self.weight = _normal(rng, (fin, fout), fin)
        else:
            self.weight = Tensor((rng.standard_normal((fin, fout)) * std).astype(np.float32), requires_grad=True)
        self.bias = _zeros((fout,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"linear expects {self.weight.shape[0]} features, got {x.shape}")
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        self.weight = _ones((c,))
        self.bias = _zeros((c,))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, axis=-1, eps=self.eps)


class BatchNorm2d(Module):
    """Batch norm with running statistics.

    ``frozen_stats`` forces the running statistics even in training mode and
    stops updating them.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = _ones((c,))
        self.bias = _zeros((c,))
        self.running_mean = np.zeros(c, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(c, dtype=DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps
        self.frozen_stats = False

    def forward(self, x: Tensor) -> Tensor:
        use_batch = self.training and not self.frozen_stats
        return F.batchnorm2d(x, self.running_mean, self.running_var, self.weight, self.bias,
                             training=use_batch, momentum=self.momentum, eps=self.eps)


def freeze_batchnorm_stats(model: Module, frozen: bool = True) -> None:
    for m in model.modules():
        if isinstance(m, BatchNorm2d):
            m.frozen_stats = frozen
