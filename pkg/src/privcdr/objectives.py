"""Contrastive, fusion and prediction objectives.

Both contrastive losses are row-wise InfoNCE terms: for each user the listed
pairs of that user's own embeddings are scored by cosine (or dot) similarity
over a temperature, and the loss is ``-log(pos / (pos + neg))`` averaged over
users. They are evaluated in log-sum-exp form for stability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import (
    MLP,
    Dense,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    bce_with_logits,
    concat_cols,
    cosine_rows,
    div,
    dot_rows,
    exp,
    gather_rows,
    logsumexp_rows,
    mul,
    reduce_mean,
    slice_cols,
    softmax_rows,
    sub,
)

FUSION_METHODS = ("sum", "concat", "attention")


def similarity(a: Tensor, b: Tensor, kind: str = "cosine") -> Tensor:
    if kind == "cosine":
        return cosine_rows(a, b)
    if kind == "dot":
        return dot_rows(a, b)
    raise ValueError(f"unknown similarity {kind!r}")


def _temperature(tau) -> Tensor:
    tau = as_tensor(tau)
    if not np.all(tau.data > 0):
        raise ValueError(f"temperature must be positive, got {tau.data.ravel()}")
    return tau


def _info_nce(positives: list[Tensor], negatives: list[Tensor], tau) -> Tensor:
    tau = _temperature(tau)
    pos = div(concat_cols(positives), tau)
    everything = concat_cols([pos, div(concat_cols(negatives), tau)])
    return reduce_mean(sub(logsumexp_rows(everything), logsumexp_rows(pos)))


def intra_loss(qc: Tensor, qs: Tensor, qc_aug: Tensor, qs_aug: Tensor, tau, kind: str = "cosine") -> Tensor:
    """Views of the same embedding attract; common and specific views repel."""
    shapes = {qc.shape, qs.shape, qc_aug.shape, qs_aug.shape}
    if len(shapes) != 1:
        raise ShapeError(f"intra_loss: matrices differ in shape {sorted(shapes)}")
    f = lambda a, b: similarity(a, b, kind)  # noqa: E731
    return _info_nce(
        [f(qc, qc_aug), f(qs, qs_aug)],
        [f(qc, qs), f(qc, qs_aug), f(qs, qc_aug), f(qs_aug, qc_aug)],
        tau,
    )


def inter_loss(qc_a: Tensor, qs_a: Tensor, qc_b: Tensor, qs_b: Tensor, tau, kind: str = "cosine") -> Tensor:
    """Common parts of the same user align across domains; specific parts stay apart."""
    if qc_a.rows != qc_b.rows or qs_a.rows != qs_b.rows:
        raise ShapeError(f"inter_loss: user counts differ, {qc_a.shape} vs {qc_b.shape}")
    f = lambda a, b: similarity(a, b, kind)  # noqa: E731
    return _info_nce([f(qc_a, qc_b)], [f(qc_a, qs_b), f(qc_b, qs_a), f(qs_a, qs_b)], tau)


def contrastive_total(intra_a, intra_b, inter, use_intra: bool = True, use_inter: bool = True):
    """``L_C`` from its three terms; plain numbers mix in without changing dtype."""
    terms = []
    if use_intra:
        terms += [intra_a, intra_b]
    if use_inter:
        terms.append(inter)
    if not terms:
        dtype = next((t.data.dtype for t in (intra_a, intra_b, inter) if isinstance(t, Tensor)), np.float64)
        return Tensor(np.zeros((1, 1), dtype=dtype))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return as_tensor(total)


def total_loss(prd_a, prd_b, contrastive, alpha: float) -> Tensor:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return as_tensor(prd_a + prd_b + contrastive * alpha)


class LogTemperature:
    """A positive trainable temperature, ``tau = exp(theta)``."""

    def __init__(self, name: str, init: float = 0.2, dtype=np.float32):
        self.theta = Parameter(np.full((1, 1), np.log(init), dtype=dtype), name)

    def __call__(self) -> Tensor:
        return exp(self.theta)

    @property
    def value(self) -> float:
        return float(np.exp(self.theta.data[0, 0]))

    def parameters(self):
        return [self.theta]


# -- fusion ----------------------------------------------------------------------

@dataclass(frozen=True)
class FusionConfig:
    method: str = "sum"

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}; expected one of {FUSION_METHODS}")

    def out_dim(self, dim: int) -> int:
        return 2 * dim if self.method == "concat" else dim


class AttentionScorer:
    """Two-way softmax weights from a linear score of ``[Qc | Qs]``."""

    def __init__(self, name: str, dim: int, seed: int = 0, dtype=np.float32):
        self.layer = Dense(name, 2 * dim, 2, seed, dtype)

    def __call__(self, qc: Tensor, qs: Tensor) -> Tensor:
        return softmax_rows(self.layer(concat_cols([qc, qs])))

    def parameters(self):
        return self.layer.parameters()


def fuse(qc: Tensor, qs: Tensor, cfg: FusionConfig | str = "sum", scorer: AttentionScorer | None = None) -> Tensor:
    """Combine one domain's common and specific embeddings into user preferences."""
    method = cfg.method if isinstance(cfg, FusionConfig) else cfg
    if qc.shape != qs.shape:
        raise ShapeError(f"fuse: incompatible shapes {qc.shape} and {qs.shape}")
    if method == "sum":
        return qc + qs
    if method == "concat":
        return concat_cols([qc, qs])
    if method == "attention":
        if scorer is None:
            raise ValueError("attention fusion needs a scorer")
        w = scorer(qc, qs)
        return mul(slice_cols(w, 0, 1), qc) + mul(slice_cols(w, 1, 2), qs)
    raise ValueError(f"unknown fusion method {method!r}")


# -- prediction ------------------------------------------------------------------

class Predictor(MLP):
    """Scores ``[user preference | item representation]`` pairs; output is a logit."""

    def __init__(self, name: str, user_dim: int, item_dim: int, hidden: int = 64, seed: int = 0,
                 dtype=np.float32):
        super().__init__(name, [user_dim + item_dim, hidden, 1], seed, dtype)

    def logits(self, h_user: Tensor, h_item: Tensor, users, items) -> Tensor:
        return self(concat_cols([gather_rows(h_user, users), gather_rows(h_item, items)]))

    def candidate_logits(self, h_user: np.ndarray, h_item: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Logits for user ``u`` against items ``candidates[u]``, no tape.

        The first layer is split into its user and item halves so each
        half is applied once per row instead of once per pair.
        """
        first, rest = self.layers[0], self.layers[1:]
        du = h_user.shape[1]
        w = first.weight.data
        a = h_user @ w[:du]
        b = h_item @ w[du:] + first.bias.data
        x = a[:, None, :] + b[candidates]
        for layer in rest:
            x = np.maximum(x, 0) @ layer.weight.data + layer.bias.data
        return x[..., 0]


def prediction_loss(h_user: Tensor, h_item: Tensor, users, items, labels, predictor: Predictor) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(predictor(...))`` against 0/1 labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty prediction batch")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    z = predictor.logits(h_user, h_item, users, items)
    return bce_with_logits(z, labels.reshape(-1, 1))
