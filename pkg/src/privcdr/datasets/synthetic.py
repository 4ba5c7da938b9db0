"""Planted-structure two-domain datasets for desk-scale experiments.

Each user carries a common latent shared by both domains and one specific
latent per domain. An item's affinity to a user is the dot product of the
user's (common, specific) pair with the item's own latents plus an item
popularity offset; interactions are Bernoulli draws of a logistic link whose
temperature is the interaction noise. Modality features are noisy linear
images of the latents they describe.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .features import FeatureTable, write_feature_table
from .interactions import DOMAINS, DatasetError, InteractionTable, write_interactions


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 300
    n_items_a: int = 200
    n_items_b: int = 200
    common_dim: int = 8
    specific_dim: int = 8
    noise: float = 0.25
    feature_noise: float = 0.5
    feature_dim: int = 32
    density: float | None = 0.05
    popularity: float = 0.5
    min_degree: int = 5
    seed: int = 0

    def n_items(self, domain: str) -> int:
        return self.n_items_a if domain == "A" else self.n_items_b

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class SyntheticCDR:
    spec: SyntheticSpec
    tables: dict[str, InteractionTable]
    features: dict[tuple[str, str], FeatureTable]
    latents: dict[str, np.ndarray]


def _calibrate_offset(score: np.ndarray, noise: float, density: float | None) -> float:
    if density is None:
        return 0.0
    if not 0 < density < 1:
        raise DatasetError(f"density must lie in (0, 1), got {density}")
    if noise == 0:
        return -float(np.quantile(score, 1 - density))
    lo, hi = -score.max() - 50 * noise, -score.min() + 50 * noise
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.mean(1 / (1 + np.exp(-(score + mid) / noise))) < density:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _top_up(adj: np.ndarray, z: np.ndarray, min_degree: int) -> None:
    """Give every row and column ``min_degree`` links, choosing the highest affinities."""
    if min_degree <= 0:
        return
    for mat, aff in ((adj, z), (adj.T, z.T)):
        need = np.flatnonzero(mat.sum(axis=1) < min_degree)
        for r in need:
            missing = min_degree - int(mat[r].sum())
            ranked = np.argsort(-np.where(mat[r], -np.inf, aff[r]), kind="stable")
            mat[r, ranked[:missing]] = True


def generate_synthetic_cdr(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticCDR:
    dims = (spec.common_dim, spec.specific_dim, spec.feature_dim)
    if min(dims) < 1:
        raise DatasetError(f"latent and feature dims must be >= 1, got {dims}")
    if min(spec.n_users, spec.n_items_a, spec.n_items_b) < 2:
        raise DatasetError("user and item counts must be >= 2")
    if spec.noise < 0 or spec.feature_noise < 0:
        raise DatasetError("noise levels must be >= 0")

    rng = np.random.default_rng(spec.seed)
    kc, ks = spec.common_dim, spec.specific_dim
    m = spec.n_users
    # entries scaled so each latent dot product has unit variance
    common = rng.standard_normal((m, kc)) / kc ** 0.25
    latents = {"user_common": common}
    tables, features = {}, {}
    users = tuple(f"u{u:05d}" for u in range(m))

    for domain in DOMAINS:
        n = spec.n_items(domain)
        specific = rng.standard_normal((m, ks)) / ks ** 0.25
        item_c = rng.standard_normal((n, kc)) / kc ** 0.25
        item_s = rng.standard_normal((n, ks)) / ks ** 0.25
        pop = spec.popularity * rng.standard_normal(n)
        score = common @ item_c.T + specific @ item_s.T + pop
        offset = _calibrate_offset(score, spec.noise, spec.density)
        z = score + offset
        if spec.noise == 0:
            adj = z > 0
        else:
            adj = rng.random(z.shape) < 1 / (1 + np.exp(-z / spec.noise))
        _top_up(adj, z, spec.min_degree)

        items = tuple(f"{domain.lower()}{i:05d}" for i in range(n))
        pairs = np.argwhere(adj)
        stamps = np.arange(len(pairs), dtype=np.int64)
        tables[domain] = InteractionTable(domain, users, items, pairs, stamps)

        user_lat = np.hstack([common, specific])
        item_lat = np.hstack([item_c, item_s])
        for entity, modality, lat, keys in (
            ("user", "review", user_lat, users),
            ("item", "text", item_lat, items),
            ("item", "visual", item_lat, items),
        ):
            proj = rng.standard_normal((lat.shape[1], spec.feature_dim)) / np.sqrt(lat.shape[1])
            feat = lat @ proj + spec.feature_noise * rng.standard_normal((lat.shape[0], spec.feature_dim))
            features[(domain, modality)] = FeatureTable(entity, modality, feat, keys)

        latents.update({
            f"user_specific_{domain}": specific,
            f"item_common_{domain}": item_c,
            f"item_specific_{domain}": item_s,
            f"item_popularity_{domain}": pop,
            f"affinity_{domain}": score,
            f"offset_{domain}": np.array(offset),
        })

    return SyntheticCDR(spec, tables, features, latents)


def write_raw_dataset(directory, data: SyntheticCDR) -> dict[str, Path]:
    """Write interactions as TSV, features as P2FT and latents as ``.npz``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for domain, table in data.tables.items():
        paths[f"interactions_{domain}"] = directory / f"{domain}.tsv"
        write_interactions(paths[f"interactions_{domain}"], table)
    for (domain, modality), table in data.features.items():
        paths[f"{modality}_{domain}"] = directory / f"{domain}.{modality}.p2ft"
        write_feature_table(paths[f"{modality}_{domain}"], table)
    paths["latents"] = directory / "latents.npz"
    np.savez(paths["latents"], **data.latents)
    return paths
