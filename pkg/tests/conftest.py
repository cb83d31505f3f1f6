import os
from pathlib import Path

import numpy as np
import pytest
import torch

from diggr.data import Graph


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def dataset_root():
    root = os.environ.get("DIGGR_DATA_DIR")
    return Path(root) if root else None


def require_dataset(*relative_markers):
    """Skip unless the data root holds one of the marker files/dirs."""
    root = dataset_root()
    if root is None:
        pytest.skip("DIGGR_DATA_DIR not set; benchmark datasets unavailable")
    for marker in relative_markers:
        if (root / marker).exists():
            return root
    pytest.skip(f"none of {relative_markers} found under {root}")


@pytest.fixture
def planetoid_dir():
    return require_dataset("ind.cora.x", "cora/ind.cora.x", "cora/raw/ind.cora.x")


@pytest.fixture
def tu_dir():
    return require_dataset(
        "MUTAG_A.txt", "MUTAG/MUTAG_A.txt", "IMDB-BINARY/IMDB-BINARY_A.txt"
    )


@pytest.fixture
def tiny_graph():
    """6-node graph with a triangle, a path tail, and one isolated node."""
    edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(6, 4)).astype(np.float32)
    return Graph.build(6, edges, feats, node_labels=np.array([0, 0, 0, 1, 1, 1]))


def finite_difference_gradients(fn, params, h=1e-6):
    """Compare autograd gradients of scalar fn() against central differences.

    Returns the maximum relative error across all checked entries. ``params``
    are leaf tensors (float64) that fn reads; gradients are measured at the
    current values.
    """
    for p in params:
        if p.grad is not None:
            p.grad = None
    value = fn()
    value.backward()
    worst = 0.0
    for p in params:
        grad = p.grad
        assert grad is not None, "parameter received no gradient"
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(gflat[i].item()), 1e-8)
            worst = max(worst, abs(numeric - gflat[i].item()) / denom)
    return worst
