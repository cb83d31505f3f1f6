"""Probabilistic latent-factor learner.

Edges are modeled as Bernoulli observations of latent Poisson counts with
rate sum_k gamma_k * z_uk * z_vk, where z has a Gamma prior and a Weibull
variational posterior parameterized by a two-layer graph-convolution
encoder. The training objective is the negative evidence lower bound:
edge reconstruction error plus the analytic Weibull-to-Gamma divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbones import GraphConv

EULER_GAMMA = 0.5772156649015329
PARAM_FLOOR = 1e-4
PARAM_CEIL = 1e4
RATE_FLOOR = 1e-8
EPS_BAND = 1e-7
# ceiling on sampled factors: a shape near the 1e-4 floor raises the inner
# term to a power of up to 1e4, which overflows without a cap; the cap is
# far beyond any realistic draw so the sampling distribution is unaffected
Z_CEIL = 1e8

# Above this node count the quadratic non-edge term switches to an
# unbiased subsample (see edge_loglik).
FULL_PAIRWISE_MAX_NODES = 5000


class NumericError(RuntimeError):
    """A loss or intermediate quantity became non-finite."""


@dataclass(frozen=True)
class FactorPrior:
    """Gamma prior on the latent factors.

    ``convention`` declares how ``beta`` is read: 'shape_rate' (default)
    or 'shape_scale' (in which case the rate is 1/beta).
    """

    alpha: float = 1.0
    beta: float = 1.0
    convention: str = "shape_rate"

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("prior alpha and beta must be positive")
        if self.convention not in ("shape_rate", "shape_scale"):
            raise ValueError("prior convention must be shape_rate or shape_scale")

    @property
    def rate(self):
        return self.beta if self.convention == "shape_rate" else 1.0 / self.beta


@dataclass
class FactorPosterior:
    """Per-node Weibull posterior parameters and the factors drawn from them."""

    shape: torch.Tensor  # (N, K), strictly positive
    scale: torch.Tensor  # (N, K), strictly positive
    z: torch.Tensor      # (N, K), sampled or mean latent factors
    gamma: torch.Tensor  # (K,), factor activation levels


class WeibullEncoder(nn.Module):
    """Two-layer graph convolution producing Weibull shape/scale per factor.

    The 2K output channels pass through softplus and are clamped to
    [1e-4, 1e4] so downstream powers and logs stay finite. ``init_gain``
    scales the initial weights: the normalized convolutions otherwise start
    with near-constant outputs across nodes, and the per-node spread is what
    lets the factors differentiate instead of stalling in a uniform
    edge-density solution.
    """

    def __init__(self, in_dim, hidden_dim, num_factors, init_gain=1.0):
        super().__init__()
        self.num_factors = num_factors
        self.conv1 = GraphConv(in_dim, hidden_dim, activation="relu")
        self.conv2 = GraphConv(hidden_dim, 2 * num_factors, activation="identity")
        self.init_gain = init_gain
        with torch.no_grad():
            if init_gain != 1.0:
                self.conv1.linear.weight.mul_(init_gain)
                self.conv2.linear.weight.mul_(init_gain)
            # center the initial posterior near shape = scale = 1
            self.conv2.linear.bias.fill_(float(np.log(np.expm1(1.0))))

    @torch.no_grad()
    def calibrate(self, x, edge_index, target_std=1.0):
        """Rescale the output layer so initial pre-activations have the
        target per-node spread on this graph.

        The per-node variation of the output channels is what seeds factor
        differentiation; left uncalibrated it is near zero on some inputs
        (factors stall in a uniform-density solution) and large enough on
        others to push Weibull shapes into numerically explosive territory.
        One deterministic forward pass makes the spread input-independent.
        """
        h = self.conv1(x, edge_index)
        pre = self.conv2(h, edge_index) - self.conv2.linear.bias
        spread = pre.std(dim=0).mean()
        if torch.isfinite(spread) and spread > 0:
            self.conv2.linear.weight.mul_(float(target_std / spread))
        return self

    def forward(self, x, edge_index, edge_weight=None):
        h = self.conv1(x, edge_index, edge_weight)
        h = self.conv2(h, edge_index, edge_weight)
        pos = nn.functional.softplus(h).clamp(PARAM_FLOOR, PARAM_CEIL)
        return pos[:, : self.num_factors], pos[:, self.num_factors:]


def sample_weibull(shape, scale, eps):
    """Reparameterized Weibull draw: scale * (-log(1 - eps))^(1/shape).

    ``eps`` are uniform variates, clamped away from {0, 1} so the inner
    logarithm stays finite; the result is differentiable in shape and scale.
    """
    if not (torch.isfinite(shape).all() and torch.isfinite(scale).all()):
        raise NumericError("non-finite Weibull parameters")
    eps = eps.clamp(EPS_BAND, 1.0 - EPS_BAND)
    inner = -torch.log1p(-eps)
    return (scale * inner ** (1.0 / shape)).clamp(max=Z_CEIL)


def weibull_mean(shape, scale):
    """Closed-form Weibull mean: scale * Gamma(1 + 1/shape)."""
    return scale * torch.exp(torch.lgamma(1.0 + 1.0 / shape))


def edge_rate(z, gamma, pairs):
    """Poisson rate sum_k gamma_k z_uk z_vk for each (u, v) in ``pairs``."""
    u, v = pairs[:, 0], pairs[:, 1]
    return (z[u] * z[v] * gamma).sum(dim=-1)


def _pairwise_rate_total(z, gamma, graph_ids=None, num_graphs=1):
    """Exact sum of edge rates over all unordered intra-graph node pairs.

    Uses the factorization sum_{u<v} rate = (1/2) sum_k gamma_k
    [(sum_u z_uk)^2 - sum_u z_uk^2], applied per graph.
    """
    if graph_ids is None:
        s1 = z.sum(dim=0)
        s2 = (z * z).sum(dim=0)
        return 0.5 * (gamma * (s1 * s1 - s2)).sum()
    k = z.shape[1]
    s1 = torch.zeros(num_graphs, k, dtype=z.dtype, device=z.device).index_add_(
        0, graph_ids, z
    )
    s2 = torch.zeros(num_graphs, k, dtype=z.dtype, device=z.device).index_add_(
        0, graph_ids, z * z
    )
    return 0.5 * (gamma * (s1 * s1 - s2)).sum()


def _sample_non_edges(num_nodes, edges, count, rng):
    """Uniform with-replacement sample of non-edge unordered pairs."""
    existing = np.sort(
        np.concatenate(
            [
                edges[:, 0] * num_nodes + edges[:, 1],
                edges[:, 1] * num_nodes + edges[:, 0],
            ]
        )
        if len(edges)
        else np.zeros(0, dtype=np.int64)
    )
    out = np.empty((0, 2), dtype=np.int64)
    while len(out) < count:
        draw = rng.integers(0, num_nodes, size=(2 * count, 2))
        keys = draw[:, 0] * num_nodes + draw[:, 1]
        ok = draw[:, 0] != draw[:, 1]
        pos = np.searchsorted(existing, keys)
        pos = np.minimum(pos, max(0, len(existing) - 1))
        if len(existing):
            ok &= existing[pos] != keys
        out = np.concatenate([out, draw[ok]], axis=0)
    return out[:count]


def edge_loglik(
    edges,
    num_nodes,
    z,
    gamma,
    graph_ids=None,
    num_graphs=1,
    negative_sampling=None,
    rng=None,
):
    """Bernoulli-Poisson log-likelihood of the undirected edge set.

    ``edges`` is an (M, 2) long tensor of unique pairs. The edge term uses
    the stable form log(-expm1(-rate)) with the rate floored at 1e-8. The
    non-edge term is exact by default; with ``negative_sampling`` (a ratio
    of sampled non-edges per edge) it is estimated from a uniform
    with-replacement subsample reweighted by the true non-edge count, which
    is unbiased in expectation. Negative sampling only supports the
    single-graph case.
    """
    lam_edges = edge_rate(z, gamma, edges) if len(edges) else z.new_zeros(0)
    if not torch.isfinite(lam_edges).all():
        raise NumericError("non-finite edge rate")
    edge_term = torch.log(-torch.expm1(-lam_edges.clamp(min=RATE_FLOOR))).sum()

    if negative_sampling is None:
        total = _pairwise_rate_total(z, gamma, graph_ids, num_graphs)
        non_edge_term = -(total - lam_edges.sum())
    else:
        if graph_ids is not None:
            raise ValueError("negative sampling supports single graphs only")
        num_pairs = num_nodes * (num_nodes - 1) // 2
        num_non = num_pairs - len(edges)
        n_samp = max(1, int(round(negative_sampling * max(1, len(edges)))))
        rng = rng if rng is not None else np.random.default_rng()
        sampled = torch.as_tensor(
            _sample_non_edges(num_nodes, edges.cpu().numpy(), n_samp, rng),
            device=z.device,
        )
        non_edge_term = -edge_rate(z, gamma, sampled).mean() * num_non
    return edge_term + non_edge_term


def kl_weibull_gamma(shape, scale, prior):
    """Analytic KL(Weibull(k, lam) || Gamma(alpha, beta)), summed over entries.

    The mean term beta * lam * Gamma(1 + 1/k) overflows for shapes near the
    clamp floor (Gamma(1 + 1/k) grows super-exponentially), so its log is
    capped at 69 (about 1e30) before exponentiation; the 1/k term keeps a
    strong gradient pushing such shapes back up, and the cap never binds for
    shapes of practical magnitude.
    """
    alpha = torch.as_tensor(prior.alpha, dtype=shape.dtype, device=shape.device)
    beta = torch.as_tensor(prior.rate, dtype=shape.dtype, device=shape.device)
    mean_term = torch.exp(
        (torch.log(beta) + torch.log(scale) + torch.lgamma(1.0 + 1.0 / shape)).clamp(
            max=69.0
        )
    )
    term = (
        EULER_GAMMA * alpha / shape
        - alpha * torch.log(scale)
        + torch.log(shape)
        + mean_term
        - EULER_GAMMA
        - 1.0
        - alpha * torch.log(beta)
        + torch.lgamma(alpha)
    )
    return term.sum()


def elbo_loss(
    edges,
    num_nodes,
    shape,
    scale,
    gamma,
    prior,
    eps,
    graph_ids=None,
    num_graphs=1,
    negative_sampling=None,
    rng=None,
):
    """Negative evidence lower bound for one reparameterized draw.

    Returns ``(loss, z)`` where ``loss = -edge_loglik + kl`` is a
    minimization target and ``z`` is the sampled factor matrix.
    """
    z = sample_weibull(shape, scale, eps)
    loglik = edge_loglik(
        edges,
        num_nodes,
        z,
        gamma,
        graph_ids=graph_ids,
        num_graphs=num_graphs,
        negative_sampling=negative_sampling,
        rng=rng,
    )
    kl = kl_weibull_gamma(shape, scale, prior)
    return -loglik + kl, z
