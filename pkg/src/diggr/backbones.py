"""Message-passing building blocks: graph convolution, attention,
isomorphism layers, and graph readout.

All layers share one calling convention:

    layer(x, edge_index, edge_weight=None, num_nodes=None)

where ``edge_index`` is a (2, E) tensor listing every undirected edge in both
directions and ``edge_weight`` holds nonnegative per-edge weights. A weight of
zero is exactly equivalent to deleting the edge.
"""

from __future__ import annotations

import torch
from torch import nn

LAYER_KINDS = ("gcn", "gat", "gin")
ACTIVATIONS = ("relu", "prelu", "elu", "identity")


def make_activation(name):
    if name == "relu":
        return nn.ReLU()
    if name == "prelu":
        return nn.PReLU()
    if name == "elu":
        return nn.ELU()
    if name == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation '{name}', expected one of {ACTIVATIONS}")


def _prepare_edges(x, edge_index, edge_weight):
    n = x.shape[0]
    if edge_index.numel() == 0:
        empty = torch.zeros(0, dtype=x.dtype, device=x.device)
        return edge_index.view(2, 0), empty, n
    if edge_weight is None:
        edge_weight = torch.ones(edge_index.shape[1], dtype=x.dtype, device=x.device)
    keep = edge_weight > 0
    if not bool(keep.all()):
        edge_index = edge_index[:, keep]
        edge_weight = edge_weight[keep]
    return edge_index, edge_weight, n


class GraphConv(nn.Module):
    """Symmetrically normalized graph convolution with self-loops.

    Each node's self-loop weight equals the mean weight of its incident
    edges (1 for isolated nodes), so the propagation is invariant to a
    uniform rescaling of all edge weights and reduces to the standard
    renormalized convolution on unweighted graphs.
    """

    def __init__(self, in_dim, out_dim, activation="identity", bias=True):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, bias=bias)
        self.activation = make_activation(activation)

    def forward(self, x, edge_index, edge_weight=None, num_nodes=None):
        edge_index, w, n = _prepare_edges(x, edge_index, edge_weight)
        src, dst = edge_index[0], edge_index[1]

        h = self.linear(x)
        w_sum = torch.zeros(n, dtype=x.dtype, device=x.device).index_add_(0, dst, w)
        w_cnt = torch.zeros(n, dtype=x.dtype, device=x.device).index_add_(
            0, dst, torch.ones_like(w)
        )
        self_w = torch.where(w_cnt > 0, w_sum / w_cnt.clamp(min=1.0), torch.ones_like(w_sum))
        inv_sqrt = (w_sum + self_w).rsqrt()

        coeff = w * inv_sqrt[src] * inv_sqrt[dst]
        out = torch.zeros_like(h).index_add_(0, dst, h[src] * coeff.unsqueeze(1))
        out = out + h * (self_w * inv_sqrt * inv_sqrt).unsqueeze(1)
        return self.activation(out)


def _segment_softmax(scores, segment, num_segments):
    """Softmax of `scores` grouped by `segment` along dim 0."""
    smax = torch.full(
        (num_segments,) + scores.shape[1:],
        float("-inf"),
        dtype=scores.dtype,
        device=scores.device,
    )
    idx = segment.view(-1, *([1] * (scores.dim() - 1))).expand_as(scores)
    smax = smax.scatter_reduce(0, idx, scores.detach(), reduce="amax", include_self=True)
    shifted = torch.exp(scores - smax.gather(0, idx))
    denom = torch.zeros_like(smax).scatter_add(0, idx, shifted)
    return shifted / denom.gather(0, idx).clamp(min=1e-30)


class GraphAttention(nn.Module):
    """Multi-head graph attention over the 1-hop neighborhood plus self.

    Weighted adjacencies offset the attention logits by log(weight), so a
    unit weight recovers the standard layer and zero-weight edges vanish.
    Heads are concatenated when ``concat`` is true, averaged otherwise.
    """

    def __init__(
        self,
        in_dim,
        out_dim,
        heads=1,
        concat=True,
        activation="identity",
        negative_slope=0.2,
        bias=True,
    ):
        super().__init__()
        if concat and out_dim % heads != 0:
            raise ValueError(f"out_dim {out_dim} not divisible by heads {heads}")
        self.heads = heads
        self.concat = concat
        self.head_dim = out_dim // heads if concat else out_dim
        self.linear = nn.Linear(in_dim, heads * self.head_dim, bias=False)
        self.attn_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.attn_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        self.negative_slope = negative_slope
        self.bias = nn.Parameter(torch.zeros(out_dim)) if bias else None
        self.activation = make_activation(activation)
        nn.init.xavier_uniform_(self.attn_src)
        nn.init.xavier_uniform_(self.attn_dst)

    def forward(self, x, edge_index, edge_weight=None, num_nodes=None):
        edge_index, w, n = _prepare_edges(x, edge_index, edge_weight)

        loops = torch.arange(n, device=x.device)
        src = torch.cat([edge_index[0], loops])
        dst = torch.cat([edge_index[1], loops])
        logw = torch.cat([torch.log(w), torch.zeros(n, dtype=x.dtype, device=x.device)])

        h = self.linear(x).view(n, self.heads, self.head_dim)
        a_src = (h * self.attn_src).sum(-1)
        a_dst = (h * self.attn_dst).sum(-1)
        scores = nn.functional.leaky_relu(
            a_src[src] + a_dst[dst], self.negative_slope
        ) + logw.unsqueeze(1)
        alpha = _segment_softmax(scores, dst, n)

        msg = h[src] * alpha.unsqueeze(-1)
        out = torch.zeros_like(h).index_add_(0, dst, msg)
        out = out.reshape(n, -1) if self.concat else out.mean(dim=1)
        if self.bias is not None:
            out = out + self.bias
        return self.activation(out)


class GraphIsomorphism(nn.Module):
    """Sum-aggregation layer with a learnable self-weight and a 2-layer MLP."""

    def __init__(self, in_dim, out_dim, activation="identity", train_eps=True):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, out_dim),
            nn.ReLU(),
            nn.Linear(out_dim, out_dim),
        )
        eps = torch.zeros(1)
        self.eps = nn.Parameter(eps) if train_eps else eps
        self.activation = make_activation(activation)

    def aggregate(self, x, edge_index, edge_weight=None):
        edge_index, w, n = _prepare_edges(x, edge_index, edge_weight)
        src, dst = edge_index[0], edge_index[1]
        agg = torch.zeros_like(x).index_add_(0, dst, x[src] * w.unsqueeze(1))
        return (1.0 + self.eps) * x + agg

    def forward(self, x, edge_index, edge_weight=None, num_nodes=None):
        return self.activation(self.mlp(self.aggregate(x, edge_index, edge_weight)))


def make_layer(kind, in_dim, out_dim, heads=1, activation="identity", concat=True):
    if kind == "gcn":
        return GraphConv(in_dim, out_dim, activation=activation)
    if kind == "gat":
        return GraphAttention(in_dim, out_dim, heads=heads, concat=concat, activation=activation)
    if kind == "gin":
        return GraphIsomorphism(in_dim, out_dim, activation=activation)
    raise ValueError(f"unknown layer kind '{kind}', expected one of {LAYER_KINDS}")


class GNNStack(nn.Module):
    """A stack of layers of one kind, used as masked-autoencoder encoder
    or (single-layer) decoder."""

    def __init__(self, kind, in_dim, out_dim, num_layers=2, heads=4, activation="prelu"):
        super().__init__()
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown backbone '{kind}'")
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        self.kind = kind
        dims = [in_dim] + [out_dim] * num_layers
        use_heads = heads if kind == "gat" else 1
        last_act = activation if num_layers > 1 else "identity"
        layers = []
        for i in range(num_layers):
            act = activation if i < num_layers - 1 else last_act
            layers.append(
                make_layer(kind, dims[i], dims[i + 1], heads=use_heads, activation=act)
            )
        self.layers = nn.ModuleList(layers)

    def forward(self, x, edge_index, edge_weight=None):
        h = x
        for layer in self.layers:
            h = layer(h, edge_index, edge_weight)
        return h


def readout(h, kind):
    """Permutation-invariant pooling of one graph's node embeddings."""
    if h.shape[0] == 0:
        raise ValueError("readout of an empty graph is undefined")
    if kind == "mean":
        return h.mean(dim=0)
    if kind == "max":
        return h.max(dim=0).values
    if kind == "sum":
        return h.sum(dim=0)
    raise ValueError(f"unknown readout '{kind}', expected mean/max/sum")


def batched_readout(h, graph_ids, num_graphs, kind):
    """Per-graph readout over a block-diagonal batch."""
    if kind not in ("mean", "max", "sum"):
        raise ValueError(f"unknown readout '{kind}', expected mean/max/sum")
    counts = torch.zeros(num_graphs, dtype=h.dtype, device=h.device).index_add_(
        0, graph_ids, torch.ones(h.shape[0], dtype=h.dtype, device=h.device)
    )
    if bool((counts == 0).any()):
        raise ValueError("readout of an empty graph is undefined")
    if kind == "max":
        out = torch.full(
            (num_graphs, h.shape[1]), float("-inf"), dtype=h.dtype, device=h.device
        )
        idx = graph_ids.unsqueeze(1).expand_as(h)
        return out.scatter_reduce(0, idx, h, reduce="amax", include_self=True)
    sums = torch.zeros(num_graphs, h.shape[1], dtype=h.dtype, device=h.device)
    sums = sums.index_add_(0, graph_ids, h)
    if kind == "mean":
        sums = sums / counts.unsqueeze(1)
    return sums
