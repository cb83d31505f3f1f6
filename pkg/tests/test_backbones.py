import numpy as np
import pytest
import torch

from diggr.backbones import (
    GNNStack,
    GraphAttention,
    GraphConv,
    GraphIsomorphism,
    batched_readout,
    make_layer,
    readout,
)

from conftest import finite_difference_gradients


@pytest.fixture(autouse=True)
def _double_precision():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def edge_tensors(pairs, weights=None):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    both = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
    idx = torch.as_tensor(both.T)
    w = None
    if weights is not None:
        w = torch.as_tensor(
            np.concatenate([weights, weights]), dtype=torch.float64
        )
    return idx, w


def path_graph(n):
    return edge_tensors([(i, i + 1) for i in range(n - 1)])[0]


class TestGraphConv:
    def test_isolated_single_node_identity(self):
        layer = GraphConv(3, 3, bias=True)
        with torch.no_grad():
            layer.linear.weight.copy_(torch.eye(3))
            layer.linear.bias.zero_()
        x = torch.tensor([[1.0, -2.0, 3.0]])
        out = layer(x, torch.zeros(2, 0, dtype=torch.long))
        assert torch.allclose(out, x)

    def test_two_node_edge_hand_computed(self):
        # unit edge, self-loops weight 1, degrees 2: out_u = (h_u + h_v) / 2
        layer = GraphConv(2, 2, bias=False)
        with torch.no_grad():
            layer.linear.weight.copy_(torch.eye(2))
        x = torch.tensor([[2.0, 0.0], [0.0, 4.0]])
        idx, _ = edge_tensors([(0, 1)])
        out = layer(x, idx)
        assert torch.allclose(out, torch.tensor([[1.0, 2.0], [1.0, 2.0]]))

    def test_uniform_weight_scaling_cancels(self):
        torch.manual_seed(0)
        layer = GraphConv(3, 2)
        x = torch.randn(4, 3)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3), (0, 3)], np.array([0.5, 2.0, 1.0, 3.0]))
        base = layer(x, idx, w)
        scaled = layer(x, idx, 7.3 * w)
        assert torch.allclose(base, scaled, atol=1e-12)

    def test_zero_weight_equals_deleted_edge(self):
        torch.manual_seed(1)
        layer = GraphConv(3, 3)
        x = torch.randn(4, 3)
        idx_full, w_full = edge_tensors(
            [(0, 1), (1, 2), (2, 3)], np.array([1.0, 0.0, 2.0])
        )
        idx_cut, w_cut = edge_tensors([(0, 1), (2, 3)], np.array([1.0, 2.0]))
        assert torch.allclose(layer(x, idx_full, w_full), layer(x, idx_cut, w_cut))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(2)
        layer = GraphConv(3, 2)
        x = torch.randn(5, 3)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3), (3, 4)], np.array([1.0, 0.5, 2.0, 1.5]))

        def fn():
            return (layer(x, idx, w) ** 2).sum()

        worst = finite_difference_gradients(fn, list(layer.parameters()))
        assert worst < 1e-4


class TestGraphAttention:
    def test_isolated_node_is_projected_self(self):
        torch.manual_seed(3)
        layer = GraphAttention(3, 4, heads=2, bias=False)
        x = torch.randn(1, 3)
        out = layer(x, torch.zeros(2, 0, dtype=torch.long))
        expected = layer.linear(x)
        assert torch.allclose(out, expected, atol=1e-12)

    def test_identical_neighbors_mean_aggregation(self):
        # star: center 0 with 4 identical leaves and identical center features
        torch.manual_seed(4)
        layer = GraphAttention(3, 4, heads=1, bias=False)
        leaf = torch.tensor([1.0, 2.0, -1.0])
        x = torch.stack([leaf, leaf, leaf, leaf, leaf])
        idx, _ = edge_tensors([(0, 1), (0, 2), (0, 3), (0, 4)])
        out = layer(x, idx)
        # all inputs identical -> attention is uniform -> output is W leaf
        assert torch.allclose(out[0], layer.linear(leaf), atol=1e-10)

    def test_zero_weight_equals_deleted_edge(self):
        torch.manual_seed(5)
        layer = GraphAttention(3, 4, heads=2)
        x = torch.randn(5, 3)
        idx_full, w_full = edge_tensors(
            [(0, 1), (1, 2), (2, 3), (3, 4)], np.array([1.0, 0.0, 1.0, 1.0])
        )
        idx_cut, w_cut = edge_tensors([(0, 1), (2, 3), (3, 4)], np.array([1.0, 1.0, 1.0]))
        assert torch.allclose(layer(x, idx_full, w_full), layer(x, idx_cut, w_cut))

    def test_unit_weights_match_unweighted(self):
        torch.manual_seed(6)
        layer = GraphAttention(3, 4, heads=2)
        x = torch.randn(4, 3)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3)], np.ones(3))
        assert torch.allclose(layer(x, idx, w), layer(x, idx, None))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(7)
        layer = GraphAttention(2, 4, heads=2)
        x = torch.randn(5, 2)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3), (3, 4)], np.array([1.0, 0.5, 2.0, 1.0]))

        def fn():
            return (layer(x, idx, w) ** 2).sum()

        worst = finite_difference_gradients(fn, list(layer.parameters()))
        assert worst < 1e-4


class TestGraphIsomorphism:
    def test_no_neighbors_is_mlp_of_self(self):
        torch.manual_seed(8)
        layer = GraphIsomorphism(3, 4)
        x = torch.randn(1, 3)
        out = layer(x, torch.zeros(2, 0, dtype=torch.long))
        assert torch.allclose(out, layer.mlp(x))

    def test_triangle_unit_features_sum(self):
        torch.manual_seed(9)
        layer = GraphIsomorphism(2, 3)
        x = torch.ones(3, 2)
        idx, _ = edge_tensors([(0, 1), (1, 2), (0, 2)])
        out = layer(x, idx)
        assert torch.allclose(out, layer.mlp(3.0 * torch.ones(3, 2)))

    def test_halving_weights_halves_neighbor_term(self):
        torch.manual_seed(10)
        layer = GraphIsomorphism(3, 3)
        x = torch.randn(4, 3)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3)], np.array([1.0, 2.0, 0.5]))
        agg_full = layer.aggregate(x, idx, w) - (1 + layer.eps) * x
        agg_half = layer.aggregate(x, idx, 0.5 * w) - (1 + layer.eps) * x
        assert torch.allclose(agg_half, 0.5 * agg_full)

    def test_zero_weight_equals_deleted_edge(self):
        torch.manual_seed(11)
        layer = GraphIsomorphism(3, 3)
        x = torch.randn(4, 3)
        idx_full, w_full = edge_tensors([(0, 1), (1, 2)], np.array([0.0, 1.0]))
        idx_cut, w_cut = edge_tensors([(1, 2)], np.array([1.0]))
        assert torch.allclose(layer(x, idx_full, w_full), layer(x, idx_cut, w_cut))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(12)
        layer = GraphIsomorphism(2, 3)
        x = torch.randn(5, 2)
        idx, w = edge_tensors([(0, 1), (1, 2), (2, 3), (3, 4)], np.array([1.0, 0.5, 2.0, 1.0]))

        def fn():
            return (layer(x, idx, w) ** 2).sum()

        worst = finite_difference_gradients(fn, list(layer.parameters()))
        assert worst < 1e-4


@pytest.mark.parametrize("kind", ["gcn", "gat", "gin"])
def test_permutation_equivariance(kind):
    torch.manual_seed(13)
    layer = make_layer(kind, 3, 4, heads=2)
    n = 10
    rng = np.random.default_rng(14)
    pairs = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (7, 8), (0, 9), (3, 9)]
    weights = rng.uniform(0.5, 2.0, len(pairs))
    x = torch.randn(n, 3)
    idx, w = edge_tensors(pairs, weights)
    out = layer(x, idx, w)

    # node i moves to position perm[i]
    perm = torch.as_tensor(rng.permutation(n))
    x_perm = torch.empty_like(x)
    x_perm[perm] = x
    idx_perm = perm[idx]
    out_perm = layer(x_perm, idx_perm, w)
    assert torch.allclose(out_perm[perm], out, atol=1e-10)


class TestReadout:
    def test_mean_of_identical_rows(self):
        h = torch.tensor([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
        assert torch.allclose(readout(h, "mean"), torch.tensor([1.0, 2.0]))

    def test_sum_equals_n_times_mean(self):
        torch.manual_seed(15)
        h = torch.randn(7, 3)
        assert torch.allclose(readout(h, "sum"), 7 * readout(h, "mean"))

    def test_max_hand_case(self):
        h = torch.tensor([[1.0, 5.0], [3.0, 2.0]])
        assert torch.allclose(readout(h, "max"), torch.tensor([3.0, 5.0]))

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            readout(torch.zeros(0, 3), "mean")

    def test_permutation_invariance(self):
        torch.manual_seed(16)
        h = torch.randn(6, 4)
        perm = torch.randperm(6)
        for kind in ("mean", "max", "sum"):
            assert torch.allclose(readout(h, kind), readout(h[perm], kind), atol=1e-12)

    def test_batched_matches_per_graph(self):
        torch.manual_seed(17)
        h = torch.randn(5, 3)
        gids = torch.tensor([0, 0, 1, 1, 1])
        for kind in ("mean", "max", "sum"):
            batched = batched_readout(h, gids, 2, kind)
            assert torch.allclose(batched[0], readout(h[:2], kind))
            assert torch.allclose(batched[1], readout(h[2:], kind))


def test_stack_shapes_and_depth():
    torch.manual_seed(18)
    stack = GNNStack("gat", 6, 8, num_layers=2, heads=4)
    x = torch.randn(5, 6)
    idx = path_graph(5)
    assert stack(x, idx).shape == (5, 8)
    assert len(stack.layers) == 2


def test_stack_rejects_bad_kind():
    with pytest.raises(ValueError, match="backbone"):
        GNNStack("mlp", 4, 4)
