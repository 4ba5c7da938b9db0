"""Laplace obfuscation of disentangled embeddings.

``lam`` is the Laplace *scale* b (location fixed at 0): the noise standard
deviation is ``b * sqrt(2)``. No epsilon budget is derived here; a formal
guarantee would need a sensitivity bound on the embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disentangle import DisentangledBundle
from .numeric import Tensor, add

MATRIX_CODES = {"common": 0, "specific": 1, "common_aug": 2, "specific_aug": 3}


@dataclass(frozen=True)
class PrivacyConfig:
    """``lam=None`` switches obfuscation off entirely (the ``obf`` ablation)."""

    lam: float | None = 0.01
    mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mu != 0:
            raise ValueError("Laplace location is fixed at 0")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError(f"Laplace scale must be >= 0, got {self.lam}")


@dataclass(eq=False)
class ObfuscatedBundle:
    domain: str
    specific: Tensor
    common: Tensor
    specific_aug: Tensor
    common_aug: Tensor
    lambda_used: float | None

    @property
    def n_users(self) -> int:
        return self.common.rows

    def matrices(self) -> dict[str, Tensor]:
        return {"common": self.common, "specific": self.specific,
                "common_aug": self.common_aug, "specific_aug": self.specific_aug}


def standard_laplace(shape, rng: np.random.Generator) -> np.ndarray:
    """Laplace(0, 1) draws by inverting the CDF at uniform points."""
    p = np.maximum(rng.random(shape), np.finfo(np.float64).tiny)
    return np.where(p < 0.5, np.log(2 * p), -np.log(2 * (1 - p)))


def sample_laplace(shape, lam: float, rng) -> np.ndarray:
    if lam < 0:
        raise ValueError(f"Laplace scale must be >= 0, got {lam}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if lam == 0:
        return np.zeros(shape)
    return lam * standard_laplace(shape, rng)


def laplace_cdf(x, lam: float):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, 0.5 * np.exp(x / lam), 1 - 0.5 * np.exp(-x / lam))


def noise_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def obfuscate(bundle: DisentangledBundle, cfg: PrivacyConfig, *stream: int) -> ObfuscatedBundle:
    """Add independent Laplace noise to each of the four matrices.

    ``stream`` (e.g. domain, epoch, step) selects fresh noise per call. The
    noise enters as a constant, so gradients pass through unchanged.
    """
    out = {}
    for name, code in MATRIX_CODES.items():
        p = getattr(bundle, name)
        if cfg.lam is None:
            out[name] = p
            continue
        noise = sample_laplace(p.shape, cfg.lam, noise_rng(cfg.seed, *stream, code))
        out[name] = add(p, noise.astype(p.data.dtype))
    return ObfuscatedBundle(bundle.domain, out["specific"], out["common"], out["specific_aug"],
                            out["common_aug"], cfg.lam)
