"""Downstream evaluation protocols and disentanglement diagnostics.

Node classification uses a gradient-trained linear probe on frozen
embeddings with best-validation model selection; graph classification uses
a stratified 10-fold SVM with an inner grid search over C, repeated over
shuffles. Diagnostics cover factor/label agreement (NMI), factor-set
overlap, representation correlation structure, and neighborhood-overlap
statistics of the factorized subgraphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.svm import SVC

DEFAULT_C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass
class EvalReport:
    """Mean/std of a metric over repeated runs, plus the protocol used."""

    task: str
    metric_name: str
    mean: float
    std: float
    per_run: list
    protocol: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, task, metric_name, per_run, protocol=None):
        arr = np.asarray(per_run, dtype=np.float64)
        return cls(
            task=task,
            metric_name=metric_name,
            mean=float(arr.mean()),
            std=float(arr.std()),
            per_run=[float(v) for v in arr],
            protocol=protocol or {},
        )

    def rows(self):
        """Key-value rows for columnar serialization."""
        out = [
            ("task", self.task),
            ("metric", self.metric_name),
            ("mean", repr(self.mean)),
            ("std", repr(self.std)),
        ]
        for i, v in enumerate(self.per_run):
            out.append((f"run_{i}", repr(v)))
        for key in sorted(self.protocol):
            out.append((f"protocol.{key}", str(self.protocol[key])))
        return out


# ---------------------------------------------------------------------------
# classification protocols
# ---------------------------------------------------------------------------


def linear_probe(
    embeddings,
    labels,
    splits,
    runs=5,
    epochs=300,
    lr=0.01,
    weight_decay=1e-4,
    seed=0,
):
    """Fit a linear classifier on frozen embeddings, ``runs`` times.

    Single-label targets use cross-entropy and report accuracy; a 2-D binary
    label matrix switches to a one-vs-rest head and reports micro-F1. The
    model from the best validation epoch is scored on the test split.
    """
    for name in ("train", "val", "test"):
        if name not in splits:
            raise ValueError(f"missing split '{name}'")
    h = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(labels))
    multilabel = y.dim() == 2
    y = y.float() if multilabel else y.long()
    idx = {k: torch.as_tensor(np.asarray(v), dtype=torch.long) for k, v in splits.items()}
    out_dim = y.shape[1] if multilabel else int(y.max()) + 1

    scores = []
    for run in range(runs):
        torch.manual_seed(seed + run)
        clf = torch.nn.Linear(h.shape[1], out_dim)
        opt = torch.optim.Adam(clf.parameters(), lr=lr, weight_decay=weight_decay)
        loss_fn = (
            torch.nn.BCEWithLogitsLoss() if multilabel else torch.nn.CrossEntropyLoss()
        )
        best_val, best_state = -1.0, None
        for _ in range(epochs):
            clf.train()
            opt.zero_grad()
            loss = loss_fn(clf(h[idx["train"]]), y[idx["train"]])
            loss.backward()
            opt.step()
            clf.eval()
            with torch.no_grad():
                val = _probe_score(clf, h, y, idx["val"], multilabel)
            # ties prefer the most-trained weights
            if val >= best_val:
                best_val = val
                best_state = {k: v.clone() for k, v in clf.state_dict().items()}
        clf.load_state_dict(best_state)
        with torch.no_grad():
            scores.append(_probe_score(clf, h, y, idx["test"], multilabel))
    return EvalReport.from_runs(
        task="node",
        metric_name="micro_f1" if multilabel else "accuracy",
        per_run=scores,
        protocol={
            "runs": runs,
            "epochs": epochs,
            "lr": lr,
            "weight_decay": weight_decay,
            "selection": "best_val",
            "split_scheme": "given",
        },
    )


def _probe_score(clf, h, y, idx, multilabel):
    logits = clf(h[idx])
    if multilabel:
        pred = (logits > 0).float()
        truth = y[idx]
        tp = (pred * truth).sum()
        denom = pred.sum() + truth.sum()
        return float(2 * tp / denom) if denom > 0 else 0.0
    return float((logits.argmax(dim=1) == y[idx]).float().mean())


def graph_classify_svm(
    pooled,
    labels,
    folds=10,
    runs=5,
    c_grid=DEFAULT_C_GRID,
    seed=0,
    inner_folds=5,
):
    """Stratified k-fold SVM accuracy over repeated shuffles.

    Within each outer fold an RBF-kernel SVM picks C from ``c_grid`` by
    inner cross-validation on the training part; per-run values are the
    mean outer-fold accuracies.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    labels = np.asarray(labels)
    if len(pooled) < folds:
        raise ValueError(f"need at least {folds} graphs for {folds}-fold CV")
    per_run = []
    for run in range(runs):
        skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed + run)
        accs = []
        for train_idx, test_idx in skf.split(pooled, labels):
            smallest_class = np.unique(labels[train_idx], return_counts=True)[1].min()
            cv = min(inner_folds, int(smallest_class))
            if cv >= 2:
                clf = GridSearchCV(SVC(kernel="rbf"), {"C": list(c_grid)}, cv=cv)
            else:
                clf = SVC(kernel="rbf", C=1.0)
            clf.fit(pooled[train_idx], labels[train_idx])
            accs.append(clf.score(pooled[test_idx], labels[test_idx]))
        per_run.append(float(np.mean(accs)))
    return EvalReport.from_runs(
        task="graph",
        metric_name="accuracy",
        per_run=per_run,
        protocol={
            "runs": runs,
            "folds": folds,
            "c_grid": list(c_grid),
            "kernel": "rbf",
            "split_scheme": "stratified_kfold",
        },
    )


# ---------------------------------------------------------------------------
# partition diagnostics
# ---------------------------------------------------------------------------


def nmi(partition_a, partition_b):
    """Normalized mutual information I(a;b)/sqrt(H(a)H(b)), natural log.

    Returns 1 for identical partitions up to relabeling (including two
    constant partitions) and 0 when exactly one side has zero entropy.
    """
    a = np.asarray(partition_a).ravel()
    b = np.asarray(partition_b).ravel()
    if len(a) != len(b):
        raise ValueError(f"partition lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("partitions must be non-empty")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = len(a)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = -np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa)))
    hb = -np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb)))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    pj = table / n
    outer = np.outer(pa, pb)
    mask = pj > 0
    mi = np.sum(pj[mask] * np.log(pj[mask] / outer[mask]))
    return float(max(0.0, min(1.0, mi / np.sqrt(ha * hb))))


def factor_label_nmi(hard_labels, node_labels):
    """Agreement between the hard factor assignment and node labels."""
    node_labels = np.asarray(node_labels)
    if node_labels.ndim != 1:
        raise ValueError("factor/label NMI needs single-label node targets")
    return nmi(np.asarray(hard_labels), node_labels)


@dataclass(frozen=True)
class OverlapScore:
    """Mean pairwise similarity between factor node sets; lower means more
    disentangled. NMI compares binary membership indicators (complement
    sets score 1 there), so the Jaccard companion is reported alongside."""

    nmi: float
    jaccard: float


def factor_overlap_score(soft_sets, num_nodes):
    """Pairwise overlap of factor node sets, averaged over factor pairs."""
    k = len(soft_sets)
    if k < 2:
        raise ValueError("overlap needs at least two factors")
    indicators = np.zeros((k, num_nodes), dtype=np.int64)
    for i, nodes in enumerate(soft_sets):
        indicators[i, np.asarray(nodes, dtype=np.int64)] = 1
    nmis, jaccards = [], []
    for i in range(k):
        for j in range(i + 1, k):
            nmis.append(nmi(indicators[i], indicators[j]))
            union = np.logical_or(indicators[i], indicators[j]).sum()
            inter = np.logical_and(indicators[i], indicators[j]).sum()
            jaccards.append(float(inter / union) if union else 0.0)
    return OverlapScore(nmi=float(np.mean(nmis)), jaccard=float(np.mean(jaccards)))


def correlation_matrix(h):
    """Absolute Pearson correlation between embedding dimensions.

    Constant columns get zero correlation everywhere (including the
    diagonal) by convention.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError("need at least two rows to correlate")
    centered = h - h.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    ok = norms > 0
    safe = np.where(ok, norms, 1.0)
    unit = centered / safe
    corr = np.abs(unit.T @ unit)
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    np.fill_diagonal(corr, np.where(ok, 1.0, 0.0))
    return np.clip(corr, 0.0, 1.0)


# ---------------------------------------------------------------------------
# subgraph overlap statistics
# ---------------------------------------------------------------------------


def _hop_balls(adj, hops):
    """Boolean reachability-within-h matrix (includes the node itself)."""
    n = adj.shape[0]
    reach = sp.identity(n, dtype=bool, format="csr")
    frontier = sp.csr_matrix(adj, dtype=bool)
    total = reach
    step = sp.identity(n, dtype=bool, format="csr")
    for _ in range(hops):
        step = (step @ frontier).astype(bool)
        total = (total + step).astype(bool)
    return total


def subgraph_overlap_stats(adjacency, factor_adjacencies, hops=1, support_eps=1e-6):
    """Neighborhood-overlap sizes of adjacent node pairs, before and after
    factorization.

    For every edge (u, v) of the original graph, counts the nodes shared by
    the two hop-balls, where the balls are taken on the original graph and
    on each factor's (thresholded) support respectively. The pair set is
    always the original edge set, so each pair's overlap can only shrink
    when the factor support is a subgraph of the original adjacency.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    adj = sp.csr_matrix(adjacency)
    pairs_coo = sp.triu(adj, k=1).tocoo()
    pairs = list(zip(pairs_coo.row, pairs_coo.col))

    def binary_support(mat):
        support = sp.csr_matrix(mat).copy()
        support.data = (np.abs(support.data) > support_eps).astype(float)
        support.eliminate_zeros()
        return support

    def mean_overlap(mat):
        if not pairs:
            return 0.0
        balls = _hop_balls(binary_support(mat), hops)
        overlaps = np.array(
            [balls[u].multiply(balls[v]).nnz for u, v in pairs], dtype=np.float64
        )
        return float(overlaps.mean())

    original_mean = mean_overlap(adj)
    factor_means = [mean_overlap(mat) for mat in factor_adjacencies]
    pooled = float(np.mean(factor_means)) if factor_means else 0.0
    return {
        "hops": hops,
        "original_mean": original_mean,
        "factor_means": factor_means,
        "factorized_mean": pooled,
        "ratio": pooled / original_mean if original_mean > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------


def export_embeddings(matrix, path, labels=None, factors=None, ids=None):
    """Write embeddings as delimited text: id, label, factor, then values.

    Rows are ordered by id; floats use repr-precision so a round trip is
    exact. Any 2-D projection tool can consume the value columns directly.
    """
    matrix = np.asarray(matrix)
    n, width = matrix.shape
    ids = np.arange(n) if ids is None else np.asarray(ids)
    labels = np.full(n, -1) if labels is None else np.asarray(labels)
    factors = np.full(n, -1) if factors is None else np.asarray(factors)
    order = np.argsort(ids, kind="stable")
    header = "id,label,factor," + ",".join(f"e{i}" for i in range(width))
    lines = [header]
    for row in order:
        values = ",".join(repr(float(v)) for v in matrix[row])
        lines.append(f"{ids[row]},{labels[row]},{factors[row]},{values}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_embeddings(path):
    """Inverse of :func:`export_embeddings`; returns (ids, labels, factors, matrix)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    rows = [ln.split(",") for ln in lines[1:]]
    ids = np.array([int(r[0]) for r in rows])
    labels = np.array([int(r[1]) for r in rows])
    factors = np.array([int(r[2]) for r in rows])
    matrix = np.array([[float(v) for v in r[3:]] for r in rows])
    return ids, labels, factors, matrix
