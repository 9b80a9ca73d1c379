"""Parameter storage, Adam, and the warmup/linear-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, TrainingError
from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor mapping plus Adam moment state.

    Parameters are mutated in place by :func:`adam_step`, so any tensor
    handed out by ``store[name]`` stays the live parameter.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value, dtype=None):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, dtype=dtype, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    @property
    def optimizer_initialized(self):
        return bool(self.m)

    def num_parameters(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype):
        """Copy of the store with every parameter (and moment) cast to ``dtype``."""
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data, dtype=dtype)
        out.m = {k: a.astype(dtype) for k, a in self.m.items()}
        out.v = {k: a.astype(dtype) for k, a in self.v.items()}
        out.step = self.step
        return out

    def copy(self):
        return self.astype(self.dtype)

    @property
    def dtype(self):
        first = next(iter(self._params.values()), None)
        return np.float32 if first is None else first.dtype.type


def global_grad_norm(store):
    total = 0.0
    for t in store._params.values():
        if t.grad is not None:
            total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    return math.sqrt(total)


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """One bias-corrected Adam update over every parameter, then zero the grads.

    Raises TrainingError naming the first parameter without a gradient.
    """
    for name, p in store.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name!r} has no gradient")
    if lr < 0:
        raise ConfigError(f"negative learning rate {lr}")
    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(store)
        if norm > clip_norm:
            scale = clip_norm / (norm + 1e-12)

    if not store.optimizer_initialized:
        for name, p in store.items():
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.items():
        g = p.grad if scale == 1.0 else p.grad * p.dtype.type(scale)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if lr != 0.0:
            update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
            p.data -= update.astype(p.dtype, copy=False)
        p.grad = None
    return store


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup from 0 to ``peak_lr``, then linear decay to 0."""

    peak_lr: float
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.warmup_steps == 0:
            object.__setattr__(self, "warmup_steps", max(1, math.ceil(0.1 * self.total_steps)))
        if not 1 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} outside [1, {self.total_steps}]")


def lr_at(schedule, step):
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    w, n = schedule.warmup_steps, schedule.total_steps
    # the ratio is formed first so the anchors (1, 1/2, 0) come out exact
    if step <= w:
        return schedule.peak_lr * (step / w)
    return schedule.peak_lr * ((n - step) / (n - w))
