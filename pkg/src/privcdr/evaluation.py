"""Leave-one-out ranking against sampled negatives, HR/NDCG, and embedding diagnostics."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .datasets import FeatureTable, InteractionTable, PreparedDomain, dumps_feature_table


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RankResult:
    user: int
    candidates: np.ndarray  # positive first, then the negatives
    scores: np.ndarray
    rank: int


@dataclass(frozen=True)
class MetricsSummary:
    domain: str
    k: int
    hr: float
    ndcg: float
    n_users: int

    def __post_init__(self):
        if not (0 <= self.ndcg <= self.hr <= 1):
            raise EvaluationError(f"inconsistent metrics HR={self.hr} NDCG={self.ndcg}")


def sample_candidates(part: PreparedDomain, n_negatives: int = 99, seed: int = 0) -> np.ndarray:
    """``(m, 1 + n_negatives)`` item ids per user: the held-out item, then negatives.

    Negatives are distinct and avoid every item the user interacted with
    (training and held-out), drawn from a stream fixed by ``seed`` and domain.
    """
    table, test = part.table, part.split.test
    seen = table.user_items()
    rng = np.random.default_rng([seed, ord(part.domain), 99])
    out = np.empty((table.n_users, 1 + n_negatives), dtype=np.int64)
    order = np.argsort(test[:, 0], kind="stable")
    for u, i in test[order]:
        pool = np.setdiff1d(np.arange(table.n_items), seen[u], assume_unique=True)
        if len(pool) < n_negatives:
            raise EvaluationError(f"user {table.users[u]!r} has only {len(pool)} non-interacted items, "
                                  f"need {n_negatives}")
        out[u, 0] = i
        out[u, 1:] = rng.choice(pool, size=n_negatives, replace=False)
    return out


def rank_from_scores(scores: np.ndarray) -> np.ndarray:
    """1-based rank of column 0 in each row; ties count against it."""
    scores = np.atleast_2d(scores)
    return 1 + np.sum(scores[:, 1:] >= scores[:, :1], axis=1)


def rank_candidates(user: int, positive: int, negatives, scorer: Callable) -> RankResult:
    """Score ``[positive, *negatives]`` for one user with ``scorer(user, items)``."""
    cands = np.concatenate([[positive], np.asarray(negatives, dtype=np.int64)])
    if len(np.unique(cands)) != len(cands):
        raise EvaluationError(f"duplicate candidates for user {user}")
    scores = np.asarray(scorer(user, cands), dtype=np.float64).ravel()
    if scores.shape != cands.shape:
        raise EvaluationError(f"scorer returned {scores.shape[0]} scores for {len(cands)} candidates")
    return RankResult(user, cands, scores, int(rank_from_scores(scores[None, :])[0]))


def _ranks(results) -> np.ndarray:
    ranks = np.array([r.rank if isinstance(r, RankResult) else r for r in results], dtype=np.int64)
    if ranks.size == 0:
        raise EvaluationError("no ranking results")
    if (ranks < 1).any():
        raise EvaluationError("ranks are 1-based")
    return ranks


def _check_k(k: int) -> None:
    if k < 1:
        raise EvaluationError(f"K must be >= 1, got {k}")


def hr_at_k(results, k: int = 10) -> float:
    _check_k(k)
    return float(np.mean(_ranks(results) <= k))


def ndcg_at_k(results, k: int = 10) -> float:
    _check_k(k)
    ranks = _ranks(results)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def summarize(domain: str, results, k: int = 10) -> MetricsSummary:
    ranks = _ranks(results)
    return MetricsSummary(domain, k, hr_at_k(ranks, k), ndcg_at_k(ranks, k), len(ranks))


# -- popularity floor --------------------------------------------------------------

def popularity_counts(train: InteractionTable) -> np.ndarray:
    if train.n_interactions == 0:
        raise EvaluationError("popularity baseline needs a nonempty table")
    return train.item_degrees().astype(np.float64)


def popularity_baseline(train: InteractionTable) -> Callable:
    counts = popularity_counts(train)
    return lambda user, items: counts[np.asarray(items)]


def popularity_summary(part: PreparedDomain, candidates: np.ndarray, k: int = 10) -> MetricsSummary:
    counts = popularity_counts(part.split.train)
    return summarize(part.domain, rank_from_scores(counts[candidates]), k)


# -- embedding diagnostics ------------------------------------------------------------

def mean_row_cosine(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    num = np.sum(a * b, axis=1)
    den = np.maximum(np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), eps)
    return float(np.mean(num / den))


def principal_projection(blocks: Mapping[str, np.ndarray], n_components: int = 2) -> dict[str, np.ndarray]:
    """Project every block onto the top principal axes of their union."""
    names = list(blocks)
    stacked = np.vstack([np.asarray(blocks[n], np.float64) for n in names])
    centered = stacked - stacked.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:n_components]
    # fix the sign of each axis so repeated runs agree
    signs = np.sign(axes[np.arange(len(axes)), np.argmax(np.abs(axes), axis=1)])
    proj = centered @ (axes * signs[:, None]).T
    out, pos = {}, 0
    for n in names:
        rows = len(blocks[n])
        out[n] = proj[pos:pos + rows]
        pos += rows
    return out


@dataclass(eq=False)
class SeparationReport:
    common_cross: float
    specific_cross: float
    within: dict[str, float]
    projection: dict[str, np.ndarray]

    @property
    def gap(self) -> float:
        return self.common_cross - self.specific_cross

    def as_dict(self) -> dict:
        return {"common_cross": self.common_cross, "specific_cross": self.specific_cross,
                "gap": self.gap, **{f"within_{d}": v for d, v in sorted(self.within.items())}}


def separation_diagnostics(bundles: Mapping[str, object]) -> SeparationReport:
    """Cosine structure of the obfuscated embeddings of both domains.

    ``bundles`` maps domain to anything with ``common`` and ``specific``
    (tensors or arrays), rows aligned by shared user.
    """
    mats = {}
    for d, b in bundles.items():
        for kind in ("common", "specific"):
            m = getattr(b, kind)
            mats[(d, kind)] = np.asarray(getattr(m, "data", m))
    a, b = sorted(bundles)
    return SeparationReport(
        common_cross=mean_row_cosine(mats[(a, "common")], mats[(b, "common")]),
        specific_cross=mean_row_cosine(mats[(a, "specific")], mats[(b, "specific")]),
        within={d: mean_row_cosine(mats[(d, "common")], mats[(d, "specific")]) for d in (a, b)},
        projection=principal_projection({f"{d}.{k}": v for (d, k), v in mats.items()}),
    )


def embedding_tables(bundle, users) -> dict[str, FeatureTable]:
    out = {}
    for kind in ("common", "specific"):
        m = getattr(bundle, kind)
        out[kind] = FeatureTable("user", "emb", np.asarray(getattr(m, "data", m), np.float32), tuple(users))
    return out


def export_embeddings(directory, bundles: Mapping[str, object], users: Mapping[str, tuple]) -> list[Path]:
    """Write ``<domain>.<common|specific>.emb.p2ft`` and the 2-D projection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for d, b in sorted(bundles.items()):
        for kind, table in embedding_tables(b, users[d]).items():
            path = directory / f"{d}.{kind}.emb.p2ft"
            path.write_bytes(dumps_feature_table(table))
            paths.append(path)
    report = separation_diagnostics(bundles)
    lines = ["set\tuser\tx\ty"]
    for name, proj in report.projection.items():
        us = users[name.split(".")[0]]
        lines += [f"{name}\t{u}\t{x!r}\t{y!r}" for u, (x, y) in zip(us, proj)]
    path = directory / "projection.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths.append(path)
    path = directory / "separation.json"
    path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(path)
    return paths


# -- metrics document ---------------------------------------------------------------

def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt_lambda(lam) -> str:
    return "none" if lam is None else repr(float(lam))


def metrics_document(summaries: Mapping[str, MetricsSummary], seed: int, cfg_hash: str,
                     lambda_used, extra: Mapping | None = None) -> str:
    """Deterministic key-value text; contains no timings so equal runs hash equal."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["run"] = {"seed": str(seed), "config_hash": cfg_hash, "lambda_used": _fmt_lambda(lambda_used),
                 **{k: str(v) for k, v in (extra or {}).items()}}
    for d, s in sorted(summaries.items()):
        cp[d] = {"domain": s.domain, "K": str(s.k), "HR": repr(s.hr), "NDCG": repr(s.ndcg),
                 "n_users": str(s.n_users)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


@dataclass(frozen=True)
class MetricsDocument:
    seed: int
    config_hash: str
    lambda_used: float | None
    summaries: dict
    extra: dict

    @property
    def mean_hr(self) -> float:
        return float(np.mean([s.hr for s in self.summaries.values()]))


def parse_metrics_document(text: str) -> MetricsDocument:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    if not cp.has_section("run"):
        raise EvaluationError("not a metrics document (no [run] section)")
    run = dict(cp["run"])
    summaries = {}
    for d in cp.sections():
        if d == "run":
            continue
        s = cp[d]
        summaries[d] = MetricsSummary(s["domain"], int(s["K"]), float(s["HR"]), float(s["NDCG"]), int(s["n_users"]))
    lam = run.pop("lambda_used")
    return MetricsDocument(int(run.pop("seed")), run.pop("config_hash"), None if lam == "none" else float(lam),
                           summaries, run)


def read_metrics_document(path) -> MetricsDocument:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics document not found: {path}")
    return parse_metrics_document(path.read_text(encoding="utf-8"))
