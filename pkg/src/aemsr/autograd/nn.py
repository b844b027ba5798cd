"""Module containers, parameters and the basic layers built on :mod:`ops`."""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, VersionError
from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor.  ``frozen`` parameters are skipped by optimisers."""

    __slots__ = ("frozen",)

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = False


def xavier_uniform(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    """Glorot-uniform init; convolution kernels count their receptive field in both fans."""
    shape = tuple(shape)
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class with recursive parameter/buffer discovery.

    Parameters and sub-modules are found by walking instance attributes in
    definition order; lists and tuples of modules are indexed by position.
    Names join path components with ``/``.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    # ------------------------------------------------------------ traversal
    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("/"), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}/")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}/{i}/")

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for mod_name, module in self.named_modules():
            base = f"{mod_name}/" if mod_name else ""
            for name, value in module._children():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    yield base + name, value

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for mod_name, module in self.named_modules():
            base = f"{mod_name}/" if mod_name else ""
            for name, value in module._buffers.items():
                yield base + name, value

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # ---------------------------------------------------------------- modes
    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.frozen = True
        return self

    # ---------------------------------------------------------------- state
    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(targets) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in targets and k not in buffers]
        if strict and (missing or unexpected):
            raise VersionError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, value in state.items():
            dest = targets[name].data if name in targets else buffers.get(name)
            if dest is None:
                continue
            value = np.asarray(value, dtype=np.float64)
            if dest.shape != value.shape:
                raise VersionError(f"{name}: checkpoint shape {value.shape} != model shape {dest.shape}")
            np.copyto(dest, value)


class Linear(Module):
    """Affine map on the last axis: ``x @ W + b`` with ``W[in, out]``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.W = Parameter(xavier_uniform(rng, (out_features, in_features)).T)
        self.b = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.W)
        return ops.add(y, self.b) if self.b is not None else y


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, (num, dim)))

    def forward(self, ids: np.ndarray) -> Tensor:
        return ops.getitem(self.weight, np.asarray(ids, dtype=np.int64))


class Conv1d(Module):
    """1-D convolution layer; see :func:`ops.conv1d` for the padding modes."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 dilation: int = 1, padding="same", causal: bool = False, transposed: bool = False,
                 groups: int = 1, bias: bool = True):
        super().__init__()
        if c_in % groups or c_out % groups:
            raise ConfigurationError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
        self.W = Parameter(xavier_uniform(rng, (c_out, c_in // groups, kernel)))
        self.b = Parameter(np.zeros(c_out)) if bias else None
        self.stride, self.dilation, self.padding = stride, dilation, padding
        self.causal, self.transposed, self.groups = causal, transposed, groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.W, self.b, stride=self.stride, dilation=self.dilation,
                          padding=self.padding, causal_pad=self.causal,
                          transposed=self.transposed, groups=self.groups)


class WeightNormConv1d(Conv1d):
    """Conv1d whose kernel is ``g * v / ||v||`` per output channel."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        v = self.W
        del self.W
        self.v = v
        self.g = Parameter(np.sqrt((v.data ** 2).sum(axis=(1, 2))))

    def forward(self, x: Tensor) -> Tensor:
        w = ops.weight_norm(self.v, self.g)
        return ops.conv1d(x, w, self.b, stride=self.stride, dilation=self.dilation,
                          padding=self.padding, causal_pad=self.causal,
                          transposed=self.transposed, groups=self.groups)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: Tuple[int, int, int], rng: np.random.Generator,
                 stride=1, padding="same", bias: bool = False):
        super().__init__()
        self.W = Parameter(xavier_uniform(rng, (c_out, c_in) + tuple(kernel)))
        self.b = Parameter(np.zeros(c_out)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.W, self.b, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Per-channel batch norm for ``[B, C, *S]`` with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, zero_init: bool = False):
        super().__init__()
        self.gamma = Parameter(np.zeros(channels) if zero_init else np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training, self.momentum, self.eps)
