"""Binarized per-domain interaction tables, k-core filtering and splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DOMAINS = ("A", "B")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionTable:
    """Deduplicated implicit-feedback interactions of one domain.

    ``users`` and ``items`` are the index -> key vocabularies (sorted keys, so
    indices are dense and deterministic). ``pairs`` holds ``(user, item)``
    index rows sorted by user then item; every stored rating is 1.
    """

    domain: str
    users: tuple[str, ...]
    items: tuple[str, ...]
    pairs: np.ndarray
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise DatasetError(f"unknown domain tag {self.domain!r}")
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)
        if self.timestamps is None:
            object.__setattr__(self, "timestamps", np.zeros(len(pairs), dtype=np.int64))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_interactions(self) -> int:
        return len(self.pairs)

    @property
    def density(self) -> float:
        return self.n_interactions / (self.n_users * self.n_items)

    @property
    def user_vocab(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.users)}

    @property
    def item_vocab(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.items)}

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 0], minlength=self.n_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.pairs[:, 1], minlength=self.n_items)

    def user_items(self) -> list[np.ndarray]:
        """Per-user sorted arrays of interacted item indices."""
        bounds = np.searchsorted(self.pairs[:, 0], np.arange(self.n_users + 1))
        return [self.pairs[bounds[u]:bounds[u + 1], 1] for u in range(self.n_users)]

    def records(self) -> Iterator[tuple[str, str, float, int]]:
        for (u, i), ts in zip(self.pairs, self.timestamps):
            yield self.users[u], self.items[i], 1.0, int(ts)

    def with_pairs(self, mask: np.ndarray) -> "InteractionTable":
        """Same vocabularies, subset of the interaction rows."""
        return InteractionTable(self.domain, self.users, self.items, self.pairs[mask], self.timestamps[mask])


def table_from_records(domain: str, records: Sequence[tuple[str, str, int]]) -> InteractionTable:
    """Build a table from ``(user_key, item_key, timestamp)`` triples; later duplicates are dropped."""
    if not records:
        raise DatasetError("no interactions")
    users = tuple(sorted({r[0] for r in records}))
    items = tuple(sorted({r[1] for r in records}))
    uv = {k: i for i, k in enumerate(users)}
    iv = {k: i for i, k in enumerate(items)}
    seen: dict[tuple[int, int], int] = {}
    for ukey, ikey, ts in records:
        seen.setdefault((uv[ukey], iv[ikey]), int(ts))
    keys = sorted(seen)
    pairs = np.array(keys, dtype=np.int64).reshape(-1, 2)
    stamps = np.array([seen[k] for k in keys], dtype=np.int64)
    return InteractionTable(domain, users, items, pairs, stamps)


def load_interactions(path, domain: str) -> InteractionTable:
    """Read a ``user \\t item \\t rating \\t timestamp`` file into a binarized table."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            ukey, ikey, rating, stamp = parts
            try:
                float(rating)
                ts = int(stamp)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: cannot parse rating/timestamp in {line!r}") from None
            records.append((ukey, ikey, ts))
    if not records:
        raise DatasetError(f"{path}: empty interaction file")
    return table_from_records(domain, records)


def write_interactions(path, table: InteractionTable) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for ukey, ikey, rating, ts in table.records():
            fh.write(f"{ukey}\t{ikey}\t{rating:g}\t{ts}\n")


# -- k-core filtering ------------------------------------------------------------

def _peel(users: np.ndarray, items: np.ndarray, alive: np.ndarray, k: int) -> np.ndarray:
    """Drop edges touching a user or item of degree < k until none remain."""
    alive = alive.copy()
    while True:
        u_deg = np.bincount(users[alive], minlength=users.max(initial=-1) + 1)
        i_deg = np.bincount(items[alive], minlength=items.max(initial=-1) + 1)
        bad = alive & ((u_deg[users] < k) | (i_deg[items] < k))
        if not bad.any():
            return alive
        alive &= ~bad


def _condense(table: InteractionTable, alive: np.ndarray, users: tuple[str, ...]) -> InteractionTable:
    uv = {k: i for i, k in enumerate(users)}
    kept = table.pairs[alive]
    item_ids = np.unique(kept[:, 1])
    items = tuple(table.items[i] for i in item_ids)
    item_map = np.full(table.n_items, -1, dtype=np.int64)
    item_map[item_ids] = np.arange(len(item_ids))
    user_map = np.array([uv.get(k, -1) for k in table.users], dtype=np.int64)
    pairs = np.stack([user_map[kept[:, 0]], item_map[kept[:, 1]]], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return InteractionTable(table.domain, users, items, pairs[order], table.timestamps[alive][order])


def kcore_filter(table_a: InteractionTable, table_b: InteractionTable, k: int = 5):
    """Iterative k-core peeling on both domains restricted to their common users.

    Peel each domain to its fixpoint, intersect to users alive in both, and
    repeat until stable. Returns two tables over one shared user vocabulary.
    """
    if k < 1:
        raise DatasetError(f"k must be >= 1, got {k}")
    tables = (table_a, table_b)
    alive = [np.ones(t.n_interactions, dtype=bool) for t in tables]
    while True:
        alive = [_peel(t.pairs[:, 0], t.pairs[:, 1], a, k) for t, a in zip(tables, alive)]
        present = [{t.users[u] for u in np.unique(t.pairs[a, 0])} for t, a in zip(tables, alive)]
        common = present[0] & present[1]
        changed = False
        for idx, t in enumerate(tables):
            keep_user = np.array([key in common for key in t.users], dtype=bool)
            new_alive = alive[idx] & keep_user[t.pairs[:, 0]]
            if (new_alive != alive[idx]).any():
                changed = True
            alive[idx] = new_alive
        if not changed:
            break
    if not common or not all(a.any() for a in alive):
        raise DatasetError("filtering eliminated all data")
    users = tuple(sorted(common))
    return tuple(_condense(t, a, users) for t, a in zip(tables, alive))


# -- splits and sampling ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitSpec:
    """Leave-one-out split: ``test[u] = (u, held_out_item)`` for every user."""

    train: InteractionTable
    test: np.ndarray
    rng_seed: int

    @property
    def domain(self) -> str:
        return self.train.domain


def leave_one_out_split(table: InteractionTable, seed: int) -> SplitSpec:
    deg = table.user_degrees()
    short = np.flatnonzero(deg < 2)
    if short.size:
        raise DatasetError(
            f"leave-one-out needs >= 2 interactions per user; user {table.users[short[0]]!r} has {deg[short[0]]}"
        )
    rng = np.random.default_rng(seed)
    start = np.searchsorted(table.pairs[:, 0], np.arange(table.n_users))
    pick = start + rng.integers(0, deg)
    mask = np.ones(table.n_interactions, dtype=bool)
    mask[pick] = False
    test = table.pairs[pick].copy()
    return SplitSpec(table.with_pairs(mask), test, seed)


def split_from_test(table: InteractionTable, test: np.ndarray, seed: int) -> SplitSpec:
    """Rebuild a split from a full table and its held-out pairs."""
    test = np.asarray(test, dtype=np.int64).reshape(-1, 2)
    code = table.pairs[:, 0] * table.n_items + table.pairs[:, 1]
    held = test[:, 0] * table.n_items + test[:, 1]
    missing = ~np.isin(held, code)
    if missing.any():
        raise DatasetError(f"{int(missing.sum())} test pairs are not in the table")
    return SplitSpec(table.with_pairs(~np.isin(code, held)), test, seed)


def _sample_excluding(rng: np.random.Generator, n_items: int, users: np.ndarray,
                      observed: list[set]) -> np.ndarray:
    out = rng.integers(0, n_items, size=len(users))
    todo = np.array([out[k] in observed[u] for k, u in enumerate(users)], dtype=bool)
    while todo.any():
        idx = np.flatnonzero(todo)
        out[idx] = rng.integers(0, n_items, size=idx.size)
        todo[idx] = [out[k] in observed[users[k]] for k in idx]
    return out


def sample_negatives(table: InteractionTable, ratio: int = 1, seed: int = 0):
    """Draw ``ratio`` uniform non-interacted items per positive.

    Returns ``(users, items, labels)`` arrays with labels all zero, ordered
    like the positives (each positive's draws are adjacent).
    """
    if ratio < 1:
        raise DatasetError(f"ratio must be >= 1, got {ratio}")
    deg = table.user_degrees()
    full = np.flatnonzero(deg >= table.n_items)
    if full.size:
        raise DatasetError(f"user {table.users[full[0]]!r} has interacted with every item")
    observed = [set(row.tolist()) for row in table.user_items()]
    users = np.repeat(table.pairs[:, 0], ratio)
    rng = np.random.default_rng(seed)
    items = _sample_excluding(rng, table.n_items, users, observed)
    return users, items, np.zeros(len(users), dtype=np.int64)
