"""Parameter store, Adam and the one-cycle learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named parameters plus a set of frozen name prefixes."""

    def __init__(self, params: Iterable[tuple[str, Tensor]] | Mapping[str, Tensor], frozen: Iterable[str] = ()):
        items = params.items() if isinstance(params, Mapping) else params
        self.params: dict[str, Tensor] = {}
        for name, p in items:
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.params[name] = p
        self.frozen: set[str] = set()
        for prefix in frozen:
            self.freeze(prefix)

    def freeze(self, prefix: str) -> None:
        if not any(self._matches(name, prefix) for name in self.params):
            raise KeyError(f"frozen prefix {prefix!r} matches no parameter")
        self.frozen.add(prefix)

    @staticmethod
    def _matches(name: str, prefix: str) -> bool:
        return name == prefix or name.startswith(prefix if prefix.endswith(".") else prefix + ".") or prefix == ""

    def is_frozen(self, name: str) -> bool:
        return any(self._matches(name, p) for p in self.frozen)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.params.items() if not self.is_frozen(n)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


@dataclass
class OneCycleSchedule:
    """Cosine warmup from ``max_lr / div_factor`` to ``max_lr``, then cosine decay
    to ``max_lr * final_lr_fraction`` at ``total_steps``."""

    total_steps: int
    max_lr: float = 3e-5
    warmup_fraction: float = 0.3
    final_lr_fraction: float = 1e-2
    div_factor: float = 25.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")

    @property
    def warmup_end(self) -> int:
        return max(1, int(round(self.warmup_fraction * self.total_steps)))

    @staticmethod
    def _cos(start: float, end: float, frac: float) -> float:
        return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0

    def lr(self, t: float) -> float:
        w = self.warmup_end
        if t <= w:
            return self._cos(self.max_lr / self.div_factor, self.max_lr, t / w)
        if t >= self.total_steps:
            return self.max_lr * self.final_lr_fraction
        return self._cos(self.max_lr, self.max_lr * self.final_lr_fraction,
                         (t - w) / (self.total_steps - w))


class Adam:
    def __init__(self, store: ParamStore, schedule: OneCycleSchedule,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.updates = 0

    def step(self, t: int) -> float:
        if t >= self.schedule.total_steps:
            raise ValueError(f"step {t} beyond schedule of {self.schedule.total_steps} steps")
        lr = self.schedule.lr(t)
        self.updates += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.updates
        c2 = 1.0 - b2 ** self.updates
        for name, p in self.store.trainable():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        return lr


def step(store: ParamStore, optimizer: Adam, t: int) -> float:
    """Apply one optimizer update at schedule step ``t``; returns the learning rate used."""
    if optimizer.store is not store:
        raise ValueError("optimizer is bound to a different ParamStore")
    return optimizer.step(t)
