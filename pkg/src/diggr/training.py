"""Joint training of the factor model and both masked autoencoders.

Every step re-infers the Weibull posterior, draws factors, refreshes the
node partition and per-edge factor weights from that draw, runs the
factor-wise and graph-level masked autoencoders, and updates all
parameters together on the weighted sum of the three losses. Inference
replaces sampling by the Weibull mean and applies no masking.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import factorization, mae
from .backbones import GNNStack, batched_readout
from .data import Graph, GraphDataset, merge_graphs
from .factor_model import (
    FactorPrior,
    NumericError,
    WeibullEncoder,
    elbo_loss,
    weibull_mean,
    FULL_PAIRWISE_MAX_NODES,
)

CHECKPOINT_VERSION = 1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class ConfigError(ValueError):
    """Invalid training configuration; message lists every violation."""


@dataclass
class TrainConfig:
    mask_rate: float = 0.5
    hidden_size: int = 512
    max_epoch: int = 200
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lambda_d: float = 1.0
    lambda_g: float = 1.0
    lambda_z: float = 1.0
    factor_num: int = 2
    batch_size: int = 32
    pooling: str = "mean"
    gamma_sce: float = 2.0
    seed: int = 0
    backbone: str = "gat"
    global_mask_mode: str = "union_of_factors"
    edge_factorization: str = "weighted"
    num_layers: int = 2
    num_heads: int = 4
    decoder_layers: int = 1
    factor_hidden: int = 64
    factor_init_gain: float = 4.0
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    prior_convention: str = "shape_rate"
    train_gamma: bool = True
    soft_tau: float = 0.5
    remask: bool = False
    dtype: str = "float32"
    grad_clip: float = 5.0
    neg_sampling: str = "auto"
    neg_ratio: float = 5.0
    deterministic: bool = False

    def problems(self):
        errs = []
        if not 0.0 <= self.mask_rate < 1.0:
            errs.append("mask_rate must lie in [0, 1)")
        if self.factor_num < 1:
            errs.append("factor_num must be >= 1")
        if self.hidden_size < 1:
            errs.append("hidden_size must be >= 1")
        elif self.factor_num >= 1 and self.hidden_size % self.factor_num != 0:
            errs.append(
                f"hidden_size {self.hidden_size} not divisible by factor_num {self.factor_num}"
            )
        elif (
            self.backbone == "gat"
            and (self.hidden_size // max(self.factor_num, 1)) % self.num_heads != 0
        ):
            errs.append(
                "per-factor width hidden_size/factor_num must be divisible by num_heads"
            )
        if self.max_epoch < 1:
            errs.append("max_epoch must be >= 1")
        if self.learning_rate <= 0:
            errs.append("learning_rate must be positive")
        if min(self.lambda_d, self.lambda_g, self.lambda_z) < 0:
            errs.append("loss coefficients must be nonnegative")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.pooling not in ("mean", "max", "sum"):
            errs.append("pooling must be mean, max, or sum")
        if self.gamma_sce < 1.0:
            errs.append("gamma_sce must be >= 1")
        if self.backbone not in ("gcn", "gat", "gin"):
            errs.append("backbone must be gcn, gat, or gin")
        if self.global_mask_mode not in ("fresh_uniform", "union_of_factors"):
            errs.append("global_mask_mode must be fresh_uniform or union_of_factors")
        if self.edge_factorization not in ("weighted", "cut"):
            errs.append("edge_factorization must be weighted or cut")
        if self.num_layers < 1 or self.decoder_layers < 1:
            errs.append("layer counts must be >= 1")
        if self.prior_alpha <= 0 or self.prior_beta <= 0:
            errs.append("prior alpha/beta must be positive")
        if self.prior_convention not in ("shape_rate", "shape_scale"):
            errs.append("prior_convention must be shape_rate or shape_scale")
        if not 0.0 < self.soft_tau <= 1.0:
            errs.append("soft_tau must lie in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            errs.append("dtype must be float32 or float64")
        if self.neg_sampling not in ("auto", "full", "sampled"):
            errs.append("neg_sampling must be auto, full, or sampled")
        if self.neg_ratio <= 0:
            errs.append("neg_ratio must be positive")
        if self.factor_init_gain <= 0:
            errs.append("factor_init_gain must be positive")
        return errs

    def validate(self):
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))

    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    @property
    def factor_width(self):
        return self.hidden_size // self.factor_num

    def prior(self):
        return FactorPrior(self.prior_alpha, self.prior_beta, self.prior_convention)


class DiggrModel(nn.Module):
    """All trainable pieces: factor model, K factor encoders, global path."""

    def __init__(self, in_dim, config):
        super().__init__()
        config.validate()
        self.config = config
        self.in_dim = in_dim
        k = config.factor_num
        self.factor_encoder = WeibullEncoder(
            in_dim, config.factor_hidden, k, init_gain=config.factor_init_gain
        )
        # softplus(pre_gamma) == 1 at init
        init = float(np.log(np.expm1(1.0)))
        self.pre_gamma = nn.Parameter(torch.full((k,), init))
        self.factor_encoders = nn.ModuleList(
            GNNStack(
                config.backbone,
                in_dim,
                config.factor_width,
                num_layers=config.num_layers,
                heads=config.num_heads,
                activation="prelu",
            )
            for _ in range(k)
        )
        self.global_encoder = GNNStack(
            config.backbone,
            in_dim,
            config.hidden_size,
            num_layers=config.num_layers,
            heads=config.num_heads,
            activation="prelu",
        )
        self.factor_decoder = GNNStack(
            config.backbone,
            config.hidden_size,
            in_dim,
            num_layers=config.decoder_layers,
            heads=1,
            activation="prelu",
        )
        self.global_decoder = GNNStack(
            config.backbone,
            config.hidden_size,
            in_dim,
            num_layers=config.decoder_layers,
            heads=1,
            activation="prelu",
        )
        self.mask_token = nn.Parameter(torch.zeros(in_dim))

    def gamma(self):
        if self.config.train_gamma:
            return nn.functional.softplus(self.pre_gamma)
        return torch.ones_like(self.pre_gamma)

    # -- forward passes ----------------------------------------------------

    def posterior_params(self, batch):
        return self.factor_encoder(batch["features"], batch["edge_index"])

    def factor_edge_weights(self, batch, z, labels):
        cfg = self.config
        if cfg.edge_factorization == "weighted":
            w = factorization.edge_factor_weights(z, self.gamma(), batch["edges"])
        else:
            w = factorization.cut_edge_weights(
                labels, batch["edges"], cfg.factor_num, dtype=z.dtype
            )
        # directed edge index repeats each undirected edge both ways
        return torch.cat([w, w], dim=0)

    def training_step(self, batch, eps_generator, mask_seed):
        cfg = self.config
        x = batch["features"]
        edge_index = batch["edge_index"]

        shape, scale = self.posterior_params(batch)
        eps = torch.rand(
            shape.shape, generator=eps_generator, dtype=shape.dtype, device=shape.device
        )
        use_sampling = cfg.neg_sampling == "sampled" or (
            cfg.neg_sampling == "auto"
            and batch["graph_ids"] is None
            and batch["num_nodes"] > FULL_PAIRWISE_MAX_NODES
        )
        loss_z, z = elbo_loss(
            batch["edges"],
            batch["num_nodes"],
            shape,
            scale,
            self.gamma(),
            cfg.prior(),
            eps,
            graph_ids=batch["graph_ids"],
            num_graphs=batch["num_graphs"],
            negative_sampling=cfg.neg_ratio if use_sampling else None,
            rng=np.random.default_rng((104729,) + tuple(np.atleast_1d(mask_seed)))
            if use_sampling
            else None,
        )

        scores = factorization.affiliation_scores(
            z, self.gamma(), edge_index, batch["num_nodes"]
        )
        labels = factorization.hard_assign(scores)
        weights = self.factor_edge_weights(batch, z, labels)
        plan = _build_mask_plan(
            labels,
            batch["graph_ids"],
            cfg.factor_num,
            cfg.mask_rate,
            mask_seed,
            batch["num_nodes"],
            cfg.global_mask_mode,
        )

        h_d = mae.encode_factorwise(
            self.factor_encoders, x, edge_index, weights, plan, self.mask_token
        )
        if cfg.remask:
            h_d = _remask(h_d, plan.union())
        recon_d = mae.decode(self.factor_decoder, h_d, edge_index)

        h_g = mae.encode_graph_level(
            self.global_encoder, x, edge_index, plan.global_mask, self.mask_token
        )
        if cfg.remask:
            h_g = _remask(h_g, plan.global_mask)
        recon_g = mae.decode(self.global_decoder, h_g, edge_index)

        zero = x.new_zeros(())
        loss_d = (
            mae.factor_loss(x, recon_d, plan, cfg.gamma_sce)
            if plan.union().size
            else zero
        )
        loss_g = (
            mae.graph_loss(x, recon_g, plan.global_mask, cfg.gamma_sce)
            if plan.global_mask.size
            else zero
        )
        total = joint_loss(loss_d, loss_g, loss_z, cfg)
        return {"loss_d": loss_d, "loss_g": loss_g, "loss_z": loss_z, "total": total}

    @torch.no_grad()
    def infer_posterior(self, batch):
        """Mean-based posterior snapshot for diagnostics."""
        from .factor_model import FactorPosterior

        shape, scale = self.posterior_params(batch)
        return FactorPosterior(
            shape=shape, scale=scale, z=weibull_mean(shape, scale), gamma=self.gamma()
        )

    @torch.no_grad()
    def embed_batch(self, batch):
        """Deterministic embeddings: mean factors, no masking."""
        x = batch["features"]
        edge_index = batch["edge_index"]
        shape, scale = self.posterior_params(batch)
        z = weibull_mean(shape, scale)
        scores = factorization.affiliation_scores(
            z, self.gamma(), edge_index, batch["num_nodes"]
        )
        labels = factorization.hard_assign(scores)
        weights = self.factor_edge_weights(batch, z, labels)
        blocks = [
            enc(x, edge_index, weights[:, k])
            for k, enc in enumerate(self.factor_encoders)
        ]
        h_d = torch.cat(blocks, dim=1)
        h_g = self.global_encoder(x, edge_index)
        return h_d, h_g, z, scores, labels


def _remask(hidden, masked_nodes):
    if masked_nodes.size == 0:
        return hidden
    out = hidden.clone()
    out[torch.as_tensor(masked_nodes, device=hidden.device)] = 0.0
    return out


def _build_mask_plan(labels, graph_ids, num_factors, rate, seed, num_nodes, mode):
    """Per-factor masks, sampled per (graph, factor) cell for batched data."""
    cells, keys = [], []
    for k in range(num_factors):
        nodes_k = np.flatnonzero(labels == k)
        if graph_ids is None:
            cells.append(nodes_k)
            keys.append(k)
        else:
            gids = graph_ids.cpu().numpy() if torch.is_tensor(graph_ids) else graph_ids
            for g in np.unique(gids):
                cells.append(nodes_k[gids[nodes_k] == g])
                keys.append(k)
    raw = mae.sample_mask(cells, rate, seed, num_nodes=num_nodes, global_mode=mode)
    per_factor = []
    for k in range(num_factors):
        parts = [raw.per_factor[i] for i, key in enumerate(keys) if key == k]
        per_factor.append(
            np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
        )
    return mae.MaskPlan(tuple(per_factor), raw.global_mask, rate, seed)


def joint_loss(loss_d, loss_g, loss_z, config):
    """Weighted total loss; raises NumericError naming a non-finite part."""
    for name, value in (("loss_d", loss_d), ("loss_g", loss_g), ("loss_z", loss_z)):
        val = value if torch.is_tensor(value) else torch.as_tensor(value)
        if not torch.isfinite(val).all():
            raise NumericError(f"{name} is non-finite")
    return (
        config.lambda_d * loss_d + config.lambda_g * loss_g + config.lambda_z * loss_z
    )


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------


def graph_to_batch(graph, dtype=torch.float32, device="cpu"):
    """Tensors for a single graph."""
    edges = torch.as_tensor(graph.edges, dtype=torch.long, device=device)
    return {
        "edges": edges,
        "edge_index": torch.as_tensor(graph.directed_edges(), dtype=torch.long, device=device),
        "features": torch.as_tensor(graph.features, dtype=dtype, device=device),
        "graph_ids": None,
        "num_graphs": 1,
        "num_nodes": graph.num_nodes,
    }


def graphs_to_batch(graphs, dtype=torch.float32, device="cpu"):
    """Block-diagonal tensors for a list of graphs."""
    edges, features, gids, _ = merge_graphs(graphs)
    edge_index = (
        np.stack([np.concatenate([edges[:, 0], edges[:, 1]]),
                  np.concatenate([edges[:, 1], edges[:, 0]])])
        if len(edges)
        else np.zeros((2, 0), dtype=np.int64)
    )
    return {
        "edges": torch.as_tensor(edges, dtype=torch.long, device=device),
        "edge_index": torch.as_tensor(edge_index, dtype=torch.long, device=device),
        "features": torch.as_tensor(features, dtype=dtype, device=device),
        "graph_ids": torch.as_tensor(gids, dtype=torch.long, device=device),
        "num_graphs": len(graphs),
        "num_nodes": int(features.shape[0]),
    }


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: DiggrModel
    config: TrainConfig
    history: list = field(default_factory=list)
    in_dim: int = 0
    optimizer: torch.optim.Optimizer | None = None
    rng_state: dict | None = None


def train(data, config, device="cpu", log_every=0, log_fn=print):
    """Train on a single graph (node-level) or a dataset (graph-level).

    History carries one row per epoch with every loss component. Fully
    deterministic for a fixed config and seed.
    """
    config.validate()
    if config.deterministic:
        torch.set_num_threads(1)
    dtype = config.torch_dtype()

    if isinstance(data, Graph):
        graphs = [data]
        node_level = True
    elif isinstance(data, GraphDataset):
        graphs = data.graphs
        node_level = len(graphs) == 1
    else:
        raise TypeError("train expects a Graph or GraphDataset")
    in_dim = graphs[0].num_features
    if in_dim == 0:
        raise ConfigError(
            "graphs have zero-width features; run degree_onehot_features first"
        )

    torch.manual_seed(config.seed)
    model = DiggrModel(in_dim, config).to(device=device, dtype=dtype)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=ADAM_BETAS,
        eps=ADAM_EPS,
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.max_epoch
    )
    eps_generator = torch.Generator(device=device).manual_seed(config.seed + 1)

    if node_level:
        batches_template = [graph_to_batch(graphs[0], dtype, device)]

    history = []
    for epoch in range(config.max_epoch):
        if node_level:
            batches = batches_template
        else:
            order = np.random.default_rng((config.seed, 7919, epoch)).permutation(
                len(graphs)
            )
            batches = [
                graphs_to_batch([graphs[i] for i in chunk], dtype, device)
                for chunk in np.array_split(
                    order, max(1, int(np.ceil(len(order) / config.batch_size)))
                )
            ]
        sums = {"loss_d": 0.0, "loss_g": 0.0, "loss_z": 0.0, "total": 0.0}
        for b_idx, batch in enumerate(batches):
            optimizer.zero_grad()
            losses = model.training_step(
                batch, eps_generator, (config.seed, epoch, b_idx)
            )
            if not torch.isfinite(losses["total"]):
                raise NumericError(f"training diverged at epoch {epoch}")
            losses["total"].backward()
            if config.grad_clip > 0:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            for key in sums:
                value = losses[key]
                sums[key] += float(value.detach() if torch.is_tensor(value) else value)
        scheduler.step()
        row = {"epoch": epoch}
        row.update({k: v / len(batches) for k, v in sums.items()})
        row["lr"] = scheduler.get_last_lr()[0]
        history.append(row)
        if log_every and (epoch % log_every == 0 or epoch == config.max_epoch - 1):
            log_fn(
                f"epoch {epoch:5d}  total {row['total']:.4f}  "
                f"d {row['loss_d']:.4f}  g {row['loss_g']:.4f}  z {row['loss_z']:.4f}"
            )
    rng_state = {
        "torch": torch.get_rng_state(),
        "eps_generator": eps_generator.get_state(),
    }
    return TrainResult(
        model=model,
        config=config,
        history=history,
        in_dim=in_dim,
        optimizer=optimizer,
        rng_state=rng_state,
    )


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

EMBED_MODES = ("H_d", "H_g", "concat")


@dataclass
class EmbeddingBundle:
    """Frozen representations for downstream use.

    ``factor_embeddings`` concatenates the K factor blocks; ``pooled`` holds
    one vector per graph for graph-level datasets (None otherwise).
    """

    factor_embeddings: np.ndarray
    global_embeddings: np.ndarray
    pooled: np.ndarray | None = None
    hard_labels: np.ndarray | None = None
    factors: np.ndarray | None = None
    mode: str = "concat"

    def select(self, mode=None):
        mode = mode or self.mode
        if mode == "H_d":
            return self.factor_embeddings
        if mode == "H_g":
            return self.global_embeddings
        if mode == "concat":
            return np.concatenate([self.factor_embeddings, self.global_embeddings], axis=1)
        raise ValueError(f"unknown embedding mode '{mode}', expected {EMBED_MODES}")


def embed(data, model, mode="concat", pooling=None, device="cpu", chunk_size=256):
    """Deterministic embeddings of a graph or dataset from a trained model."""
    if mode not in EMBED_MODES:
        raise ValueError(f"unknown embedding mode '{mode}', expected {EMBED_MODES}")
    dtype = model.config.torch_dtype()
    model.eval()
    if isinstance(data, Graph):
        graphs = [data]
        single = True
    else:
        graphs = data.graphs
        single = len(graphs) == 1
    hd_parts, hg_parts, lab_parts, z_parts, pooled = [], [], [], [], []
    pooling = pooling or model.config.pooling
    for start in range(0, len(graphs), chunk_size):
        chunk = graphs[start : start + chunk_size]
        if single:
            batch = graph_to_batch(chunk[0], dtype, device)
        else:
            batch = graphs_to_batch(chunk, dtype, device)
        h_d, h_g, z, _, labels = model.embed_batch(batch)
        hd_parts.append(h_d.cpu().numpy())
        hg_parts.append(h_g.cpu().numpy())
        z_parts.append(z.cpu().numpy())
        lab_parts.append(labels)
        if not single:
            h = torch.cat([h_d, h_g], dim=1) if mode == "concat" else (
                h_d if mode == "H_d" else h_g
            )
            pooled.append(
                batched_readout(h, batch["graph_ids"], batch["num_graphs"], pooling)
                .cpu()
                .numpy()
            )
    return EmbeddingBundle(
        factor_embeddings=np.concatenate(hd_parts),
        global_embeddings=np.concatenate(hg_parts),
        pooled=np.concatenate(pooled) if pooled else None,
        hard_labels=np.concatenate(lab_parts),
        factors=np.concatenate(z_parts),
        mode=mode,
    )


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path, result, optimizer=None, extra=None):
    optimizer = optimizer or result.optimizer
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(result.config),
        "in_dim": result.in_dim,
        "model_state": result.model.state_dict(),
        "history": result.history,
        "epoch": len(result.history),
        "rng_state": result.rng_state,
    }
    if optimizer is not None:
        payload["optimizer_state"] = optimizer.state_dict()
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, device="cpu"):
    payload = torch.load(path, map_location=device, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {version!r}; "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    config = TrainConfig(**payload["config"])
    model = DiggrModel(payload["in_dim"], config).to(
        device=device, dtype=config.torch_dtype()
    )
    model.load_state_dict(payload["model_state"])
    result = TrainResult(
        model=model,
        config=config,
        history=payload.get("history", []),
        in_dim=payload["in_dim"],
    )
    return result, payload
