"""Splitting user representations into domain-specific and domain-common parts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import MLP, ShapeError, Tensor, dropout_apply


class DisentangleMLP(MLP):
    """Two dense layers (``hidden`` then ``out``) with a ReLU in between."""

    def __init__(self, name: str, in_dim: int, hidden: int = 128, out: int = 64, seed: int = 0,
                 dtype=np.float32):
        super().__init__(name, [in_dim, hidden, out], seed, dtype)


@dataclass(eq=False)
class DisentangledBundle:
    domain: str
    specific: Tensor
    common: Tensor
    specific_aug: Tensor
    common_aug: Tensor
    mask: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return self.common.rows


def disentangle(h_user: Tensor, mlp_s: DisentangleMLP, mlp_c: DisentangleMLP) -> tuple[Tensor, Tensor]:
    if h_user.cols != mlp_s.in_dim or h_user.cols != mlp_c.in_dim:
        raise ShapeError(f"user representation width {h_user.cols} does not match disentangler inputs "
                         f"{mlp_s.in_dim}/{mlp_c.in_dim}")
    return mlp_s(h_user), mlp_c(h_user)


def feature_dropout_mask(n_cols: int, rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """A ``1 x n_cols`` mask: zero with probability ``rate``, else ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return np.ones((1, n_cols), dtype=dtype)
    keep = rng.random((1, n_cols)) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def augment_dropout(h_user: Tensor, mlp_s: DisentangleMLP, mlp_c: DisentangleMLP, rate: float,
                    rng: np.random.Generator) -> tuple[Tensor, Tensor, np.ndarray]:
    """Feature-dropout view of ``h_user`` pushed through both MLPs with one shared mask."""
    mask = feature_dropout_mask(h_user.cols, rate, rng, h_user.data.dtype)
    masked = h_user if rate == 0 else dropout_apply(h_user, mask)
    p_s, p_c = disentangle(masked, mlp_s, mlp_c)
    return p_s, p_c, mask
