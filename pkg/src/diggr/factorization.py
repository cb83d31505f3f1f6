"""Turning latent factors into factor-specific node sets and edge weights.

Affiliation of a node with a factor is measured by the expected Poisson
rate mass it places on its observed edges; nodes are hard-assigned to
their strongest factor (argmax, ties to the lowest index) or soft-assigned
to all factors above a relative threshold. Edges are split across factors
either by a per-edge softmax of the factor rates (weighted variant, the
default) or by keeping only intra-factor edges (cut variant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch


@dataclass
class FactorizedGraph:
    """K factor-specific views of one graph.

    ``weighted_adjacencies[k]`` is a sparse N x N matrix; over k they sum to
    the original adjacency (weighted variant) or tile disjoint pieces of it
    (cut variant). ``hard_labels[u]`` is the argmax factor of node u.
    """

    weighted_adjacencies: list
    hard_labels: np.ndarray
    affiliation_scores: np.ndarray
    soft_sets: list | None = None

    @property
    def num_factors(self):
        return len(self.weighted_adjacencies)

    def factor_node_sets(self):
        """Hard-partition node index sets, one per factor."""
        return [
            np.flatnonzero(self.hard_labels == k) for k in range(self.num_factors)
        ]


def affiliation_scores(z, gamma, edge_index, num_nodes=None):
    """Expected per-factor edge-rate mass of each node on its neighbors.

    ``s[u, k] = gamma_k * z_uk * sum_{v in N(u)} z_vk``; rows of isolated
    nodes fall back to ``gamma_k * z_uk`` so every node stays assignable.
    ``edge_index`` lists each undirected edge in both directions.
    """
    n = z.shape[0] if num_nodes is None else num_nodes
    src, dst = edge_index[0], edge_index[1]
    neigh = torch.zeros_like(z).index_add_(0, dst, z[src])
    deg = torch.zeros(n, dtype=z.dtype, device=z.device).index_add_(
        0, dst, torch.ones(len(src), dtype=z.dtype, device=z.device)
    )
    s = gamma * z * neigh
    fallback = gamma * z
    return torch.where(deg.unsqueeze(1) > 0, s, fallback)


def hard_assign(scores):
    """Argmax factor per node; ties break toward the lowest index."""
    s = scores.detach().cpu().numpy() if torch.is_tensor(scores) else np.asarray(scores)
    return np.argmax(s, axis=1).astype(np.int64)


def soft_assign(scores, tau):
    """Node sets per factor: u joins factor k iff s_uk >= tau * max_j s_uj."""
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    s = scores.detach().cpu().numpy() if torch.is_tensor(scores) else np.asarray(scores)
    cutoff = tau * s.max(axis=1, keepdims=True)
    member = s >= cutoff
    return [np.flatnonzero(member[:, k]) for k in range(s.shape[1])]


def edge_factor_weights(z, gamma, edges):
    """Per-edge softmax over factors of the rates gamma_k z_uk z_vk.

    ``edges`` is (M, 2); the result is (M, K) with rows summing to 1, fully
    differentiable so edge weights can be trained jointly.
    """
    u, v = edges[:, 0], edges[:, 1]
    logits = gamma * z[u] * z[v]
    return torch.softmax(logits, dim=1)


def _edge_matrices(num_nodes, edges, weights_per_factor):
    mats = []
    u, v = edges[:, 0], edges[:, 1]
    for k in range(weights_per_factor.shape[1]):
        w = weights_per_factor[:, k]
        mat = sp.coo_matrix(
            (
                np.concatenate([w, w]),
                (np.concatenate([u, v]), np.concatenate([v, u])),
            ),
            shape=(num_nodes, num_nodes),
        ).tocsr()
        mats.append(mat)
    return mats


def factorize_edges_weighted(graph, z, gamma):
    """Weighted edge factorization of a whole graph.

    Returns K sparse symmetric matrices carrying a softmax share of every
    observed edge; their elementwise sum reproduces the adjacency.
    """
    z_t = torch.as_tensor(np.asarray(z), dtype=torch.float64)
    g_t = torch.as_tensor(np.asarray(gamma), dtype=torch.float64)
    edges_t = torch.as_tensor(graph.edges)
    if len(graph.edges) == 0:
        weights = np.zeros((0, z_t.shape[1]))
    else:
        weights = edge_factor_weights(z_t, g_t, edges_t).numpy()
    scores = affiliation_scores(
        z_t, g_t, torch.as_tensor(graph.directed_edges()), graph.num_nodes
    ).numpy()
    labels = hard_assign(scores)
    mats = _edge_matrices(graph.num_nodes, graph.edges, weights)
    return FactorizedGraph(mats, labels, scores)


def factorize_edges_cut(graph, labels):
    """Cut edge factorization: factor k keeps only its internal edges."""
    labels = np.asarray(labels)
    num_factors = int(labels.max()) + 1 if len(labels) else 1
    mats = []
    u, v = (
        (graph.edges[:, 0], graph.edges[:, 1])
        if len(graph.edges)
        else (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    )
    for k in range(num_factors):
        keep = (labels[u] == k) & (labels[v] == k) if len(u) else np.zeros(0, bool)
        uk, vk = u[keep], v[keep]
        mat = sp.coo_matrix(
            (
                np.ones(2 * len(uk)),
                (np.concatenate([uk, vk]), np.concatenate([vk, uk])),
            ),
            shape=(graph.num_nodes, graph.num_nodes),
        ).tocsr()
        mats.append(mat)
    return mats


def cut_edge_weights(labels, edges, num_factors, dtype=torch.float32):
    """Per-edge 0/1 factor weights for the cut variant (torch, not trainable)."""
    labels_t = torch.as_tensor(labels, dtype=torch.long)
    u, v = edges[:, 0], edges[:, 1]
    same = labels_t[u] == labels_t[v]
    onehot = torch.nn.functional.one_hot(labels_t[u], num_factors).to(dtype)
    return onehot * same.unsqueeze(1).to(dtype)
