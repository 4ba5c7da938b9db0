"""Preprocessing pipeline (k-core, split, feature alignment) and its on-disk layout.

A prepared directory holds, per domain ``D``::

    D.tsv            filtered interactions (train + held-out)
    D.test.tsv       the held-out pair of every user
    D.<modality>.p2ft  aligned, standardized modality features
    manifest.ini     counts and density per domain
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .features import FeatureTable, read_feature_table, write_feature_table
from .interactions import (
    DOMAINS,
    DatasetError,
    InteractionTable,
    SplitSpec,
    kcore_filter,
    leave_one_out_split,
    load_interactions,
    split_from_test,
    write_interactions,
)

MODALITIES = {"review": "user", "text": "item", "visual": "item"}


@dataclass(eq=False)
class PreparedDomain:
    domain: str
    table: InteractionTable
    split: SplitSpec
    features: dict[str, FeatureTable]

    @property
    def n_users(self) -> int:
        return self.table.n_users

    @property
    def n_items(self) -> int:
        return self.table.n_items

    def counts(self) -> dict:
        return {
            "users": self.table.n_users,
            "items": self.table.n_items,
            "training": self.split.train.n_interactions,
            "test": len(self.split.test),
            "density": self.table.density,
        }


@dataclass(eq=False)
class PreparedData:
    domains: dict[str, PreparedDomain]
    k: int
    seed: int
    extra: dict = field(default_factory=dict)

    def __getitem__(self, domain: str) -> PreparedDomain:
        return self.domains[domain]

    def manifest(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        cp["dataset"] = {"k_core": str(self.k), "seed": str(self.seed), **{k: str(v) for k, v in self.extra.items()}}
        for domain, part in sorted(self.domains.items()):
            cp[domain] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in part.counts().items()}
        return cp

    def manifest_text(self) -> str:
        buf = io.StringIO()
        self.manifest().write(buf)
        return buf.getvalue()

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_text().encode("utf-8")).hexdigest()


def _empty_features(entity: str, modality: str, keys, dims: int) -> FeatureTable:
    return FeatureTable(entity, modality, np.zeros((len(keys), dims), np.float32), tuple(keys),
                        np.ones(len(keys), dtype=bool))


def prepare_dataset(
    tables: Mapping[str, InteractionTable],
    features: Mapping[tuple[str, str], FeatureTable],
    k: int = 5,
    seed: int = 0,
    missing_dims: int = 32,
) -> PreparedData:
    """k-core filter both domains, split leave-one-out, and align/standardize features."""
    filtered = dict(zip(DOMAINS, kcore_filter(tables["A"], tables["B"], k)))
    domains = {}
    for offset, domain in enumerate(DOMAINS):
        table = filtered[domain]
        split = leave_one_out_split(table, seed + offset)
        feats = {}
        for modality, entity in MODALITIES.items():
            keys = table.users if entity == "user" else table.items
            src = features.get((domain, modality))
            if src is None:
                feats[modality] = _empty_features(entity, modality, keys, missing_dims)
            else:
                feats[modality] = src.align(keys).standardize()
        domains[domain] = PreparedDomain(domain, table, split, feats)
    return PreparedData(domains, k, seed)


def save_prepared(directory, data: PreparedData) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for domain, part in data.domains.items():
        write_interactions(directory / f"{domain}.tsv", part.table)
        with (directory / f"{domain}.test.tsv").open("w", encoding="utf-8", newline="\n") as fh:
            for u, i in part.split.test:
                fh.write(f"{part.table.users[u]}\t{part.table.items[i]}\t1\t0\n")
        for modality, table in part.features.items():
            write_feature_table(directory / f"{domain}.{modality}.p2ft", table)
    (directory / "manifest.ini").write_text(data.manifest_text(), encoding="utf-8")
    return directory


def load_prepared(directory, domains=DOMAINS) -> PreparedData:
    """Load a prepared directory; ``domains`` may restrict loading to one side."""
    directory = Path(directory)
    manifest_path = directory / "manifest.ini"
    if not manifest_path.exists():
        raise DatasetError(f"no prepared dataset at {directory} (missing manifest.ini)")
    cp = configparser.ConfigParser()
    cp.read(manifest_path, encoding="utf-8")
    k, seed = cp.getint("dataset", "k_core"), cp.getint("dataset", "seed")
    parts = {}
    for domain in domains:
        table = load_interactions(directory / f"{domain}.tsv", domain)
        uv, iv = table.user_vocab, table.item_vocab
        test = []
        with (directory / f"{domain}.test.tsv").open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    ukey, ikey = line.split("\t")[:2]
                    test.append((uv[ukey], iv[ikey]))
        split = split_from_test(table, np.array(test), seed + DOMAINS.index(domain))
        feats = {m: read_feature_table(directory / f"{domain}.{m}.p2ft") for m in MODALITIES}
        parts[domain] = PreparedDomain(domain, table, split, feats)
    extra = {key: val for key, val in cp["dataset"].items() if key not in ("k_core", "seed")}
    return PreparedData(parts, k, seed, extra)
