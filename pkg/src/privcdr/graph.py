"""User-item graph and light graph-convolution ID embeddings.

Each layer multiplies by the symmetric normalized adjacency
``D^-1/2 A D^-1/2`` of the bipartite graph (no self loops, no transforms);
the output concatenates layer 0 through layer L column-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datasets import InteractionTable
from .numeric import Tensor, as_tensor, concat_cols, spmm


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    n_users: int
    n_items: int
    edges: np.ndarray
    degree_u: np.ndarray
    degree_i: np.ndarray
    norm: sp.csr_matrix
    norm_t: sp.csr_matrix

    @property
    def norm_adj(self) -> sp.csr_matrix:
        """The full (m+n) x (m+n) symmetric normalized adjacency."""
        return sp.bmat([[None, self.norm], [self.norm_t, None]]).tocsr()


def build_graph(table_or_edges, n_users: int | None = None, n_items: int | None = None,
                dtype=np.float64) -> BipartiteGraph:
    """Build the graph from an :class:`InteractionTable` or an ``(E, 2)`` edge array."""
    if isinstance(table_or_edges, InteractionTable):
        edges = table_or_edges.pairs
        n_users, n_items = table_or_edges.n_users, table_or_edges.n_items
    else:
        edges = np.asarray(table_or_edges, dtype=np.int64).reshape(-1, 2)
        if n_users is None or n_items is None:
            raise GraphError("n_users and n_items are required with a raw edge array")
    if len(edges) == 0:
        raise GraphError("graph has no edges")
    edges = np.unique(edges, axis=0)  # sorted by (user, item); also drops duplicates
    du = np.bincount(edges[:, 0], minlength=n_users)
    di = np.bincount(edges[:, 1], minlength=n_items)
    if (du == 0).any() or (di == 0).any():
        raise GraphError("graph has zero-degree nodes")
    weights = 1.0 / np.sqrt(du[edges[:, 0]].astype(np.float64) * di[edges[:, 1]])
    norm = sp.csr_matrix((weights.astype(dtype), (edges[:, 0], edges[:, 1])), shape=(n_users, n_items))
    norm.sort_indices()
    norm_t = norm.T.tocsr()
    norm_t.sort_indices()
    return BipartiteGraph(n_users, n_items, edges, du, di, norm, norm_t)


@dataclass(eq=False)
class IdEmbeddings:
    user: Tensor
    item: Tensor
    layers: int


def propagate(graph: BipartiteGraph, user_emb, item_emb, layers: int) -> IdEmbeddings:
    """Run ``layers`` propagation steps and concatenate every layer's output."""
    if layers < 0:
        raise GraphError(f"layers must be >= 0, got {layers}")
    u, i = as_tensor(user_emb), as_tensor(item_emb)
    if u.shape[0] != graph.n_users or i.shape[0] != graph.n_items:
        raise GraphError(f"embedding rows {u.shape[0]}+{i.shape[0]} do not match graph "
                         f"{graph.n_users}+{graph.n_items}")
    us, its = [u], [i]
    for _ in range(layers):
        u, i = spmm(graph.norm, i, graph.norm_t), spmm(graph.norm_t, u, graph.norm)
        us.append(u)
        its.append(i)
    if layers == 0:
        return IdEmbeddings(u, i, 0)
    return IdEmbeddings(concat_cols(us), concat_cols(its), layers)


def init_id_embeddings(n_rows: int, dim: int, rng: np.random.Generator, scale: float = 0.05,
                       dtype=np.float32) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(n_rows, dim)).astype(dtype)
