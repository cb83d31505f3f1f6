"""Graph data model, dataset loaders, and synthetic generators.

Supported on-disk formats:

* Planetoid citation benchmarks (``ind.<name>.x / tx / allx / y / ty /
  ally / graph / test.index``) with their public train/val/test splits.
* TU-style graph classification datasets (``<DS>_A.txt``,
  ``<DS>_graph_indicator.txt``, ``<DS>_graph_labels.txt`` and optional
  ``<DS>_node_labels.txt``).
* A native ``.npz`` single-graph format used for synthetic fixtures.
"""

from __future__ import annotations

import json
import pickle
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PLANETOID_NAMES = ("cora", "citeseer", "pubmed")


class LoadError(RuntimeError):
    """A dataset directory is missing, incomplete, or unreadable."""


class FormatError(ValueError):
    """A dataset file violates its format contract."""


def _canonical_edges(edges, num_nodes, keep_self_loops=False):
    """Deduplicate an edge list into unique undirected pairs with u < v."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise ValueError(
            f"edge endpoint out of range [0, {num_nodes}): "
            f"min={edges.min()}, max={edges.max()}"
        )
    if not keep_self_loops:
        edges = edges[edges[:, 0] != edges[:, 1]]
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    pairs = np.stack([lo, hi], axis=1)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)


@dataclass(frozen=True)
class Graph:
    """Sparse undirected graph with node features and optional labels.

    ``edges`` holds unique undirected pairs with ``u < v``; self-loops and
    duplicate/reversed duplicates are collapsed on construction.
    ``node_labels`` is either an integer vector (single-label) or a binary
    matrix (multi-label). Instances are immutable and safe to share.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    node_labels: np.ndarray | None = None
    graph_label: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"feature matrix must be ({self.num_nodes}, L), got {feats.shape}"
            )
        if self.node_labels is not None and len(self.node_labels) != self.num_nodes:
            raise ValueError("node_labels length must equal num_nodes")

    @classmethod
    def build(cls, num_nodes, edges, features, node_labels=None, graph_label=None):
        """Construct a Graph, canonicalizing the edge list on the way in."""
        edges = _canonical_edges(edges, num_nodes)
        features = np.ascontiguousarray(features, dtype=np.float32)
        if node_labels is not None:
            node_labels = np.asarray(node_labels)
        return cls(num_nodes, edges, features, node_labels, graph_label)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def num_features(self):
        return self.features.shape[1]

    def adjacency(self):
        """Symmetric 0/1 adjacency as a CSR matrix."""
        n = self.num_nodes
        if self.num_edges == 0:
            return sp.csr_matrix((n, n))
        u, v = self.edges[:, 0], self.edges[:, 1]
        row = np.concatenate([u, v])
        col = np.concatenate([v, u])
        data = np.ones(len(row))
        a = sp.coo_matrix((data, (row, col)), shape=(n, n)).tocsr()
        a.data[:] = 1.0
        return a

    def directed_edges(self):
        """Edge index of shape (2, 2M) with every undirected edge both ways."""
        if self.num_edges == 0:
            return np.zeros((2, 0), dtype=np.int64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        return np.stack([np.concatenate([u, v]), np.concatenate([v, u])])

    def degrees(self):
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def with_features(self, features):
        return replace(self, features=np.ascontiguousarray(features, dtype=np.float32))


@dataclass
class GraphDataset:
    """Ordered collection of graphs plus named index splits.

    Splits index nodes for transductive single-graph data and graphs for
    graph-level data.
    """

    graphs: list[Graph]
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.validate_splits()

    def validate_splits(self):
        limit = (
            self.graphs[0].num_nodes if len(self.graphs) == 1 else len(self.graphs)
        )
        seen = {}
        for name, idx in self.splits.items():
            idx = np.asarray(idx, dtype=np.int64)
            self.splits[name] = idx
            if idx.size and (idx.min() < 0 or idx.max() >= limit):
                raise ValueError(f"split '{name}' has out-of-range indices")
            for other, prev in seen.items():
                if np.intersect1d(idx, prev).size:
                    raise ValueError(f"splits '{name}' and '{other}' overlap")
            seen[name] = idx

    def __len__(self):
        return len(self.graphs)

    @property
    def num_classes(self):
        labels = [g.graph_label for g in self.graphs if g.graph_label is not None]
        if labels:
            return int(max(labels)) + 1
        node_labels = self.graphs[0].node_labels
        if node_labels is None:
            return 0
        if node_labels.ndim == 2:
            return node_labels.shape[1]
        return int(max(int(g.node_labels.max()) for g in self.graphs)) + 1

    def graph_labels(self):
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)


# ---------------------------------------------------------------------------
# Planetoid citation benchmarks
# ---------------------------------------------------------------------------


def _planetoid_dir(directory, name):
    directory = Path(directory)
    for cand in (directory, directory / name, directory / name / "raw",
                 directory / name.capitalize() / "raw"):
        if (cand / f"ind.{name}.x").exists():
            return cand
    return directory


def _load_pickled(path):
    if not path.exists():
        raise LoadError(f"missing Planetoid file: {path}")
    try:
        with open(path, "rb") as fh:
            return pickle.load(fh, encoding="latin1")
    except Exception as exc:  # corrupt pickle, wrong format, ...
        raise LoadError(f"cannot read Planetoid file {path}: {exc}") from exc


def load_planetoid(directory, name):
    """Load a Planetoid citation graph with its public node splits.

    Returns ``(graph, splits)`` where ``splits`` maps train/val/test to node
    index arrays. Features are bag-of-words rows; labels are class indices.
    Isolated nodes present in the raw files are kept.
    """
    name = str(name).lower()
    if name not in PLANETOID_NAMES:
        raise ValueError(f"unknown Planetoid dataset '{name}', expected one of {PLANETOID_NAMES}")
    base = _planetoid_dir(directory, name)

    objs = {}
    for part in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        objs[part] = _load_pickled(base / f"ind.{name}.{part}")
    index_path = base / f"ind.{name}.test.index"
    if not index_path.exists():
        raise LoadError(f"missing Planetoid file: {index_path}")
    test_idx = np.loadtxt(index_path, dtype=np.int64)

    allx, tx = sp.csr_matrix(objs["allx"]), sp.csr_matrix(objs["tx"])
    ally, ty = np.asarray(objs["ally"]), np.asarray(objs["ty"])
    n_known = allx.shape[0]

    # The raw test rows are stored in shuffled order; place them back at the
    # node ids recorded in test.index. Gaps in the index range correspond to
    # isolated filler nodes that receive zero features and labels.
    sorted_idx = np.sort(test_idx)
    span = np.arange(sorted_idx[0], sorted_idx[-1] + 1)
    tx_full = sp.lil_matrix((len(span), tx.shape[1]), dtype=np.float32)
    ty_full = np.zeros((len(span), ty.shape[1]), dtype=ty.dtype)
    tx_full[test_idx - sorted_idx[0]] = tx
    ty_full[test_idx - sorted_idx[0]] = ty

    features = sp.vstack([allx, tx_full.tocsr()]).toarray().astype(np.float32)
    onehot = np.vstack([ally, ty_full])
    labels = onehot.argmax(axis=1).astype(np.int64)
    num_nodes = n_known + len(span)

    graph_dict = objs["graph"]
    edges = [(u, v) for u, nbrs in graph_dict.items() for v in nbrs]
    graph = Graph.build(num_nodes, edges, features, node_labels=labels)

    splits = {
        "train": np.arange(len(objs["y"]), dtype=np.int64),
        "val": np.arange(len(objs["y"]), len(objs["y"]) + 500, dtype=np.int64),
        "test": sorted_idx,
    }
    return graph, splits


# ---------------------------------------------------------------------------
# TU-format graph classification datasets
# ---------------------------------------------------------------------------


def _tu_dir(directory, name):
    directory = Path(directory)
    for cand in (directory, directory / name, directory / name / "raw"):
        if (cand / f"{name}_A.txt").exists():
            return cand
    return directory


def load_tu_dataset(directory, name):
    """Load a TU-format dataset: one :class:`Graph` per graph id.

    Node labels, when present, become one-hot features. Graph labels are
    remapped to contiguous 0-based integers. Graphs without node labels get
    empty (zero-width) feature matrices; use
    :func:`degree_onehot_features` to synthesize features.
    """
    base = _tu_dir(directory, name)
    a_path = base / f"{name}_A.txt"
    ind_path = base / f"{name}_graph_indicator.txt"
    glab_path = base / f"{name}_graph_labels.txt"
    for path in (a_path, ind_path, glab_path):
        if not path.exists():
            raise LoadError(f"missing TU file: {path}")

    indicator = np.loadtxt(ind_path, dtype=np.int64, ndmin=1)
    edges_raw = np.loadtxt(a_path, dtype=np.int64, delimiter=",", ndmin=2)
    graph_labels_raw = np.loadtxt(glab_path, dtype=np.int64, ndmin=1)

    num_nodes_total = len(indicator)
    if edges_raw.size and (edges_raw.min() < 1 or edges_raw.max() > num_nodes_total):
        raise FormatError(f"{a_path}: edge endpoints must be 1..{num_nodes_total}")
    edges0 = edges_raw - 1  # to 0-based global ids

    if edges0.size:
        cross = indicator[edges0[:, 0]] != indicator[edges0[:, 1]]
        if cross.any():
            u, v = edges0[np.argmax(cross)]
            raise FormatError(
                f"{a_path}: edge ({u + 1},{v + 1}) crosses graphs "
                f"{indicator[u]} and {indicator[v]}"
            )

    node_labels = None
    nlab_path = base / f"{name}_node_labels.txt"
    if nlab_path.exists():
        raw = np.loadtxt(nlab_path, dtype=np.int64, ndmin=1)
        if len(raw) != num_nodes_total:
            raise FormatError(f"{nlab_path}: expected {num_nodes_total} lines")
        values = np.unique(raw)
        remap = {v: i for i, v in enumerate(values)}
        node_labels = np.array([remap[v] for v in raw], dtype=np.int64)
        feat_dim = len(values)

    glab_values = np.unique(graph_labels_raw)
    glab_remap = {v: i for i, v in enumerate(glab_values)}

    graph_ids = np.unique(indicator)
    if len(graph_labels_raw) != len(graph_ids):
        raise FormatError(f"{glab_path}: expected one label per graph id")

    graphs = []
    for gi, gid in enumerate(graph_ids):
        members = np.flatnonzero(indicator == gid)
        local = {g: l for l, g in enumerate(members)}
        n = len(members)
        if edges0.size:
            mask = indicator[edges0[:, 0]] == gid
            local_edges = [(local[u], local[v]) for u, v in edges0[mask]]
        else:
            local_edges = []
        if node_labels is not None:
            labs = node_labels[members]
            feats = np.zeros((n, feat_dim), dtype=np.float32)
            feats[np.arange(n), labs] = 1.0
        else:
            labs = None
            feats = np.zeros((n, 0), dtype=np.float32)
        graphs.append(
            Graph.build(
                n,
                local_edges,
                feats,
                node_labels=labs,
                graph_label=glab_remap[graph_labels_raw[gi]],
            )
        )
    return GraphDataset(graphs)


def write_tu_dataset(dataset, directory, name):
    """Serialize a dataset in TU format (inverse of :func:`load_tu_dataset`)."""
    base = Path(directory)
    base.mkdir(parents=True, exist_ok=True)
    edge_lines, indicator, glabels, nlabels = [], [], [], []
    offset = 0
    has_node_labels = all(
        g.node_labels is not None and g.node_labels.ndim == 1 for g in dataset.graphs
    )
    for gid, g in enumerate(dataset.graphs, start=1):
        for u, v in g.edges:
            edge_lines.append(f"{u + 1 + offset}, {v + 1 + offset}")
            edge_lines.append(f"{v + 1 + offset}, {u + 1 + offset}")
        indicator.extend([gid] * g.num_nodes)
        glabels.append(0 if g.graph_label is None else int(g.graph_label))
        if has_node_labels:
            nlabels.extend(int(x) for x in g.node_labels)
        offset += g.num_nodes
    (base / f"{name}_A.txt").write_text("\n".join(edge_lines) + "\n")
    (base / f"{name}_graph_indicator.txt").write_text(
        "\n".join(str(i) for i in indicator) + "\n"
    )
    (base / f"{name}_graph_labels.txt").write_text(
        "\n".join(str(l) for l in glabels) + "\n"
    )
    if has_node_labels:
        (base / f"{name}_node_labels.txt").write_text(
            "\n".join(str(l) for l in nlabels) + "\n"
        )


# ---------------------------------------------------------------------------
# PPI-style multi-label data (GraphSAGE JSON layout)
# ---------------------------------------------------------------------------


def load_ppi(directory, prefix="ppi"):
    """Load a GraphSAGE-style inductive dataset (multi-label node targets).

    Expects ``<prefix>-G.json`` (node-link graph with per-node train/val/test
    flags), ``<prefix>-feats.npy`` and ``<prefix>-class_map.json``. Returns a
    single merged :class:`Graph` with a binary label matrix plus node splits.
    """
    base = Path(directory)
    g_path = base / f"{prefix}-G.json"
    feats_path = base / f"{prefix}-feats.npy"
    cmap_path = base / f"{prefix}-class_map.json"
    for path in (g_path, feats_path, cmap_path):
        if not path.exists():
            raise LoadError(f"missing PPI file: {path}")
    payload = json.loads(g_path.read_text())
    feats = np.load(feats_path).astype(np.float32)
    class_map = json.loads(cmap_path.read_text())

    nodes = payload["nodes"]
    num_nodes = len(nodes)
    labels = np.zeros((num_nodes, len(next(iter(class_map.values())))), dtype=np.int64)
    train_idx, val_idx, test_idx = [], [], []
    for node in nodes:
        nid = int(node["id"])
        labels[nid] = np.asarray(class_map[str(node["id"])])
        if node.get("test"):
            test_idx.append(nid)
        elif node.get("val"):
            val_idx.append(nid)
        else:
            train_idx.append(nid)
    edges = [(int(e["source"]), int(e["target"])) for e in payload["links"]]
    graph = Graph.build(num_nodes, edges, feats, node_labels=labels)
    splits = {
        "train": np.array(sorted(train_idx), dtype=np.int64),
        "val": np.array(sorted(val_idx), dtype=np.int64),
        "test": np.array(sorted(test_idx), dtype=np.int64),
    }
    return graph, splits


# ---------------------------------------------------------------------------
# Feature preparation
# ---------------------------------------------------------------------------


def degree_onehot_features(dataset, max_degree):
    """Replace every graph's features by one-hot encoded, clamped degrees.

    Feature length is ``max_degree + 1``; a node of degree d gets a 1 at index
    ``min(d, max_degree)``.
    """
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    graphs = []
    for g in dataset.graphs:
        idx = np.minimum(g.degrees(), max_degree)
        feats = np.zeros((g.num_nodes, max_degree + 1), dtype=np.float32)
        feats[np.arange(g.num_nodes), idx] = 1.0
        graphs.append(g.with_features(feats))
    return GraphDataset(graphs, dict(dataset.splits))


# ---------------------------------------------------------------------------
# Synthetic generators and the native fixture format
# ---------------------------------------------------------------------------


def generate_sbm(block_sizes, p_in, p_out, seed):
    """Stochastic-block-model graph with planted block labels.

    Node features are the identity matrix so structure is the only signal.
    Deterministic for a fixed seed.
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes:
        raise ValueError("block_sizes must be non-empty")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError("require 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    n = sum(block_sizes)
    labels = np.repeat(np.arange(len(block_sizes)), block_sizes)
    starts = np.cumsum([0] + block_sizes)

    edges = []
    for i in range(len(block_sizes)):
        for j in range(i, len(block_sizes)):
            p = p_in if i == j else p_out
            ui = np.arange(starts[i], starts[i + 1])
            uj = np.arange(starts[j], starts[j + 1])
            draw = rng.random((len(ui), len(uj)))
            if i == j:
                mask = np.triu(draw < p, k=1)
            else:
                mask = draw < p
            rows, cols = np.nonzero(mask)
            if rows.size:
                edges.append(np.stack([ui[rows], uj[cols]], axis=1))
    edges = np.concatenate(edges, axis=0) if edges else np.zeros((0, 2), dtype=np.int64)
    features = np.eye(n, dtype=np.float32)
    return Graph.build(n, edges, features, node_labels=labels)


def save_graph_npz(graph, path, splits=None):
    """Write a single graph (and optional node splits) to a .npz file."""
    payload = {
        "num_nodes": np.array(graph.num_nodes),
        "edges": graph.edges,
        "features": graph.features,
    }
    if graph.node_labels is not None:
        payload["node_labels"] = graph.node_labels
    if graph.graph_label is not None:
        payload["graph_label"] = np.array(graph.graph_label)
    for name, idx in (splits or {}).items():
        payload[f"split_{name}"] = np.asarray(idx, dtype=np.int64)
    np.savez(path, **payload)


def load_graph_npz(path):
    """Read a graph written by :func:`save_graph_npz`; returns (graph, splits)."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"missing graph file: {path}")
    with np.load(path) as data:
        graph = Graph.build(
            int(data["num_nodes"]),
            data["edges"],
            data["features"],
            node_labels=data["node_labels"] if "node_labels" in data else None,
            graph_label=int(data["graph_label"]) if "graph_label" in data else None,
        )
        splits = {
            key[len("split_"):]: data[key]
            for key in data.files
            if key.startswith("split_")
        }
    return graph, splits


def merge_graphs(graphs):
    """Stack graphs into one block-diagonal graph for batched processing.

    Returns ``(edges, features, graph_ids, offsets)`` where ``edges`` are
    global undirected pairs, ``graph_ids`` assigns each node to its source
    graph and ``offsets[i]`` is the first node id of graph i.
    """
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edge_parts, feat_parts, gid_parts = [], [], []
    for i, g in enumerate(graphs):
        if g.num_edges:
            edge_parts.append(g.edges + offsets[i])
        feat_parts.append(g.features)
        gid_parts.append(np.full(g.num_nodes, i, dtype=np.int64))
    edges = (
        np.concatenate(edge_parts, axis=0)
        if edge_parts
        else np.zeros((0, 2), dtype=np.int64)
    )
    return edges, np.concatenate(feat_parts, axis=0), np.concatenate(gid_parts), offsets
