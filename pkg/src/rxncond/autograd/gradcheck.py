"""Central finite-difference checks for taped gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor

# Entries whose gradient is below this magnitude are compared absolutely.  At
# h=1e-5 a composed model's loss carries a few ulps of summation noise, which
# shows up as ~1e-10 in the difference quotient of structurally-zero gradients.
GRAD_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    names: Optional[Sequence[str]] = None, h: float = 1e-5,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> list[GradCheckResult]:
    """Compare backward() gradients of ``loss_fn`` with central differences.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of ``tensors``
    on every call.  With ``max_entries`` only that many randomly chosen entries
    per tensor are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    names = list(names) if names is not None else [f"t{i}" for i in range(len(tensors))]
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    results = []
    for name, t in zip(names, tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * h)
        err = relative_error(analytic.reshape(-1)[idx], numeric)
        results.append(GradCheckResult(name, float(err.max()) if err.size else 0.0, len(idx)))
    for t in tensors:
        t.grad = None
    return results


def directional_check(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Relative error of the directional derivative along one random unit
    direction spanning every entry of ``tensors``."""
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    dirs = [rng.normal(size=t.data.shape) for t in tensors]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((d * (t.grad if t.grad is not None else 0.0)).sum()) for d, t in zip(dirs, tensors))
    orig = [t.data.copy() for t in tensors]
    for t, o, d in zip(tensors, orig, dirs):
        t.data = o + h * d
    up = loss_fn().item()
    for t, o, d in zip(tensors, orig, dirs):
        t.data = o - h * d
    down = loss_fn().item()
    for t, o in zip(tensors, orig):
        t.data = o
        t.grad = None
    return float(relative_error(np.array(analytic), np.array((up - down) / (2 * h))))
