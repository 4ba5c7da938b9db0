"""Modality projections and the concatenated user / item representations."""

from __future__ import annotations

import numpy as np

from .datasets import FeatureTable
from .numeric import Dense, ShapeError, Tensor, as_tensor, concat_cols, relu


class ModalityProjector:
    """One dense layer plus ReLU mapping raw modality vectors to ``d_proj``."""

    def __init__(self, name: str, raw_dim: int, proj_dim: int = 64, seed: int = 0, dtype=np.float32):
        self.modality = name
        self.layer = Dense(f"proj.{name}", raw_dim, proj_dim, seed, dtype)

    @property
    def raw_dim(self) -> int:
        return self.layer.fan_in

    @property
    def proj_dim(self) -> int:
        return self.layer.fan_out

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.layer(x))

    def parameters(self):
        return self.layer.parameters()


def project_modality(features, projector: ModalityProjector) -> Tensor:
    """Missing rows are zero vectors, so they come out as ``ReLU(b)``."""
    matrix = features.matrix if isinstance(features, FeatureTable) else features
    x = as_tensor(matrix)
    if x.cols != projector.raw_dim:
        raise ShapeError(f"{projector.modality} features have {x.cols} dims, projector expects {projector.raw_dim}")
    return projector(x)


def _check_rows(blocks) -> None:
    rows = {b.rows for b in blocks}
    if len(rows) > 1:
        raise ShapeError(f"representation blocks have different row counts: {[b.shape for b in blocks]}")


def user_representation(id_emb: Tensor, review: Tensor | None = None) -> Tensor:
    """``[E_u | M]``, or ``E_u`` alone when reviews are ablated (``review=None``)."""
    if review is None:
        return id_emb
    _check_rows([id_emb, review])
    return concat_cols([id_emb, review])


def item_representation(id_emb: Tensor, visual: Tensor | None = None, text: Tensor | None = None) -> Tensor:
    """``[E_i | V | T]`` with ablated blocks left out."""
    blocks = [b for b in (id_emb, visual, text) if b is not None]
    if len(blocks) == 1:
        return id_emb
    _check_rows(blocks)
    return concat_cols(blocks)
