"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5,
                       indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """d fn() / d target at the flat ``indices`` (all entries by default).

    ``fn`` must rebuild its output from the current contents of ``target.data``
    and return a scalar tensor.
    """
    flat = target.data.flat
    grad = np.zeros(target.size)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = fn().item()
        flat[i] = old - h
        down = fn().item()
        flat[i] = old
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(target.shape)


def check_gradients(fn: Callable[[], Tensor], tensors: Dict[str, Tensor], h: float = 1e-5,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Compare backward() against central differences for every named tensor.

    Returns the relative error per tensor.  With ``max_entries`` only a random
    subset of coordinates of large tensors is probed (the analytic gradient is
    restricted to the same coordinates).
    """
    for t in tensors.values():
        t.grad = np.zeros_like(t.data)
    out = fn()
    out.backward()
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, t in tensors.items():
        analytic = t.grad.reshape(-1).copy()
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            idx = np.arange(t.size)
        numeric = numerical_gradient(fn, t, h, idx).reshape(-1)
        errors[name] = relative_error(analytic[idx], numeric[idx])
    return errors
