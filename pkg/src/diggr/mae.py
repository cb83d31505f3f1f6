"""Factor-wise and graph-level masked autoencoding.

Masking replaces a uniformly sampled subset of node feature rows (within
each factor's node set, and globally) with one shared learnable token.
Encoders run per factor over the factor-specific weighted adjacency;
decoding always uses the full original adjacency. Reconstruction quality
is measured by the scaled cosine error over masked rows only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

COSINE_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class MaskPlan:
    """Masked node subsets for one training step.

    ``per_factor[k]`` is drawn uniformly without replacement from factor k's
    node set with exactly round(rate * set size) entries; ``global_mask`` is
    either their union or a fresh uniform draw over all nodes.
    """

    per_factor: tuple
    global_mask: np.ndarray
    rate: float
    seed: int

    def union(self):
        if not self.per_factor:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(list(self.per_factor)))


def sample_mask(
    factor_node_sets,
    rate,
    seed,
    num_nodes=None,
    global_mode="union_of_factors",
):
    """Draw a deterministic :class:`MaskPlan` for the given factor node sets."""
    if not (0.0 <= rate < 1.0):
        raise ValueError("mask rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    per_factor = []
    for nodes in factor_node_sets:
        nodes = np.asarray(nodes, dtype=np.int64)
        count = int(round(rate * len(nodes)))
        picked = rng.choice(nodes, size=count, replace=False) if count else np.zeros(0, np.int64)
        per_factor.append(np.sort(picked))
    if global_mode == "union_of_factors":
        global_mask = (
            np.unique(np.concatenate(per_factor)) if per_factor else np.zeros(0, np.int64)
        )
    elif global_mode == "fresh_uniform":
        if num_nodes is None:
            raise ValueError("fresh_uniform mode needs num_nodes")
        count = int(round(rate * num_nodes))
        global_mask = np.sort(rng.choice(num_nodes, size=count, replace=False))
    else:
        raise ValueError(f"unknown global mask mode '{global_mode}'")
    return MaskPlan(tuple(per_factor), global_mask, rate, seed)


def apply_mask(features, masked_nodes, token):
    """Replace the masked rows of ``features`` by the learnable token."""
    masked_nodes = np.asarray(masked_nodes, dtype=np.int64)
    if masked_nodes.size and (
        masked_nodes.min() < 0 or masked_nodes.max() >= features.shape[0]
    ):
        raise ValueError("masked node index out of range")
    if token.shape[-1] != features.shape[1]:
        raise ValueError(
            f"mask token width {token.shape[-1]} != feature width {features.shape[1]}"
        )
    if masked_nodes.size == 0:
        return features
    out = features.clone()
    idx = torch.as_tensor(masked_nodes, device=features.device)
    out[idx] = token
    return out


def encode_factorwise(encoders, features, edge_index, factor_edge_weights, mask_plan, token):
    """Run each factor's encoder on its masked view; concatenate on features.

    ``factor_edge_weights`` is (E, K) aligned with ``edge_index`` columns.
    Every encoder sees all nodes; only the edge weights differ per factor.
    """
    blocks = []
    for k, enc in enumerate(encoders):
        masked = apply_mask(features, mask_plan.per_factor[k], token)
        blocks.append(enc(masked, edge_index, factor_edge_weights[:, k]))
    return torch.cat(blocks, dim=1)


def encode_graph_level(encoder, features, edge_index, masked_nodes, token):
    """Encoder pass over the original adjacency with the global mask applied."""
    masked = apply_mask(features, masked_nodes, token)
    return encoder(masked, edge_index)


def decode(decoder, hidden, edge_index):
    """Map hidden representations back to feature space over the full graph."""
    return decoder(hidden, edge_index)


def sce_loss(target, reconstruction, masked_nodes, scale=2.0):
    """Scaled cosine error, averaged over masked nodes.

    Per node: (1 - cos(target_row, reconstructed_row)) ** scale. Row norms
    are floored at 1e-8 so all-zero rows stay defined. ``scale`` >= 1 acts
    as focal-style down-weighting of already well-reconstructed rows.
    """
    masked_nodes = np.asarray(masked_nodes, dtype=np.int64)
    if masked_nodes.size == 0:
        raise ValueError("scaled cosine error over an empty masked set is undefined")
    if scale < 1.0:
        raise ValueError("scale must be >= 1")
    idx = torch.as_tensor(masked_nodes, device=target.device)
    x = target[idx]
    y = reconstruction[idx]
    xn = x.norm(dim=1).clamp(min=COSINE_NORM_FLOOR)
    yn = y.norm(dim=1).clamp(min=COSINE_NORM_FLOOR)
    cos = (x * y).sum(dim=1) / (xn * yn)
    return ((1.0 - cos) ** scale).mean()


def factor_loss(target, reconstruction, mask_plan, scale=2.0):
    """Reconstruction loss of the factor path over the union of factor masks."""
    return sce_loss(target, reconstruction, mask_plan.union(), scale)


def graph_loss(target, reconstruction, global_masked, scale=2.0):
    """Reconstruction loss of the graph-level path over its mask."""
    return sce_loss(target, reconstruction, global_masked, scale)
