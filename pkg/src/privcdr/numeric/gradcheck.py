"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss_fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``leaf.data`` (mutated and restored)."""
    grad = np.zeros_like(leaf.data, dtype=np.float64)
    flat = leaf.data.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn().item()
        flat[k] = orig - h
        down = loss_fn().item()
        flat[k] = orig
        grad.reshape(-1)[k] = (up - down) / (2 * h)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest coordinate-wise relative error between backprop and finite differences."""
    for leaf in leaves:
        leaf.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()
        numeric = numeric_gradient(loss_fn, leaf, h)
        worst = max(worst, float(relative_error(analytic, numeric, floor).max(initial=0.0)))
    return worst
