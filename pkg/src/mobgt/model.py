"""Full recommender: global fusion + graph transformer + dual heads.

The POI head is trained with cross-entropy; the category head with a
one-vs-rest focal "tail" loss that up-weights rare classes, added with a
fixed multiplier.  Training uses AdamW with a linearly decayed learning rate
and early stopping on held-out Acc@1.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import RunConfig
from .data import CheckIn, CorpusLabels, SplitCorpus, Trajectory, Vocab
from .encoder import EncoderTables, GraphTensors, STGraphEncoder, graph_tensors, pad_batch
from .errors import ConfigError, DataError, NumericError
from .geo import BinSpec, make_bins
from .global_graphs import ConcatFuse, GlobalEncoder, GlobalGraph, build_global_graphs, normalized_adjacency
from .local_graph import expand_prefixes, featurize, session_distances, trajectory_to_graph

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "mobgt-checkpoint"
CHECKPOINT_VERSION = 1


class MobGT(nn.Module):
    def __init__(self, cfg: RunConfig, vocab: Vocab, bins: BinSpec, graphs: dict[str, GlobalGraph]):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.bins = bins
        self.global_encoder = GlobalEncoder(
            poi_count=vocab.poi_count,
            category_count=vocab.category_count,
            poi_dim=cfg.poi_dim,
            cat_dim=cfg.cat_dim,
            gcn_layers=cfg.gcn_layers,
            use_spatial=not cfg.disable_spatial_graph,
            use_temporal=not cfg.disable_temporal_graph,
            use_gcn=not cfg.disable_global,
        )
        self.register_buffer(
            "adj_spatial", normalized_adjacency(graphs["spatial"], cfg.log_scale_edge_weights)
        )
        self.register_buffer(
            "adj_temporal", normalized_adjacency(graphs["temporal"], cfg.log_scale_edge_weights)
        )
        self.register_buffer(
            "adj_category", normalized_adjacency(graphs["category"], cfg.log_scale_edge_weights)
        )
        p2c = [vocab.poi_to_category.get(p, 0) for p in range(vocab.poi_count)]
        self.register_buffer("poi_to_category", torch.tensor(p2c, dtype=torch.int64))
        self.tables = EncoderTables(
            hidden_dim=cfg.hidden_dim,
            poi_dim=cfg.poi_dim,
            cat_dim=cfg.cat_dim,
            time_dim=cfg.time_dim,
            edge_dim=cfg.edge_dim,
            heads=cfg.heads,
            bin_count=bins.count,
            max_hops=cfg.max_hops,
            max_degree=cfg.max_degree,
            max_position=cfg.max_position,
            freq_buckets=cfg.freq_buckets,
            edge_count_buckets=cfg.edge_count_buckets,
        )
        self.encoder = STGraphEncoder(
            cfg.hidden_dim, cfg.heads, cfg.layers, cfg.ffn_mult, cfg.ffn_activation
        )
        # one reserved row past the known users for cold-start inference
        self.user_embed = nn.Embedding(vocab.user_count + 1, cfg.user_dim)
        self.user_fuse = ConcatFuse(cfg.hidden_dim, cfg.user_dim, cfg.hidden_dim)
        self.poi_head = nn.Linear(cfg.hidden_dim, vocab.poi_count)
        self.cat_head = nn.Linear(cfg.hidden_dim, vocab.category_count)
        if cfg.freeze_global:
            for p in self.global_encoder.parameters():
                p.requires_grad_(False)

    def poi_embeddings(self) -> torch.Tensor:
        """Fused global embedding per catalog POI, [poi_count, poi_dim + cat_dim]."""
        return self.global_encoder(
            self.adj_spatial, self.adj_temporal, self.adj_category, self.poi_to_category
        )

    def forward(self, batch: list[GraphTensors]) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        e_p = self.poi_embeddings()
        use_context = not cfg.disable_context
        use_structure = not cfg.disable_st_bias
        feats = []
        biases = []
        for gt in batch:
            feats.append(self.tables.assemble_nodes(gt, e_p, use_context, use_structure))
            if cfg.disable_st_bias:
                n = gt.n_total
                biases.append(feats[-1].new_zeros(cfg.heads, n, n))
            else:
                biases.append(self.tables.attention_bias(gt))
        h, bias, centers = pad_batch(feats, biases)
        out = self.encoder(h, bias)
        users = torch.tensor(
            [min(gt.user, self.vocab.user_count) for gt in batch], dtype=torch.int64
        )
        u = self.user_embed(users)
        if cfg.disable_context:
            u = torch.zeros_like(u)
        fused = self.user_fuse(out, u.unsqueeze(1).expand(-1, out.shape[1], -1))
        center_h = fused[torch.arange(len(batch)), centers]
        return self.poi_head(center_h), self.cat_head(center_h)


def tail_loss(
    logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.2, beta: float = 1.0, k: float = 1.2
) -> torch.Tensor:
    """One-vs-rest focal loss summed over classes, averaged over the batch.

    Per class x with indicator y:
        -alpha * (1 - sigmoid(x))^k * y * log(sigmoid(x))
        -beta * sigmoid(x)^k * (1 - y) * log(1 - sigmoid(x))
    Logs are clamped at 1e-12.
    """
    eps = 1e-12
    y = F.one_hot(targets, num_classes=logits.shape[-1]).to(logits.dtype)
    s = torch.sigmoid(logits)
    pos = -alpha * (1.0 - s).pow(k) * y * torch.log(s.clamp(min=eps))
    neg = -beta * s.pow(k) * (1.0 - y) * torch.log((1.0 - s).clamp(min=eps))
    return (pos + neg).sum(dim=-1).mean()


def total_loss(
    poi_logits: torch.Tensor,
    cat_logits: torch.Tensor,
    target_poi: torch.Tensor,
    target_cat: torch.Tensor,
    cfg: RunConfig,
) -> torch.Tensor:
    """Cross-entropy on the POI head plus lam * tail loss on the category head."""
    ce = F.cross_entropy(poi_logits, target_poi)
    if cfg.disable_tail_loss:
        cat_term = F.cross_entropy(cat_logits, target_cat)
    else:
        cat_term = tail_loss(cat_logits, target_cat, cfg.alpha, cfg.beta, cfg.tail_k)
    return ce + cfg.lam * cat_term


@dataclass
class Checkpoint:
    """Everything needed to rebuild the trained model and its data mappings."""

    state: dict
    vocab: Vocab
    bins: BinSpec
    config: RunConfig
    graphs: dict[str, GlobalGraph]
    history: list[dict] = field(default_factory=list)

    def build_model(self) -> MobGT:
        model = MobGT(self.config, self.vocab, self.bins, self.graphs)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        vocab = self.vocab
        payload = {
            "magic": CHECKPOINT_MAGIC,
            "version": CHECKPOINT_VERSION,
            "state": self.state,
            "config": asdict(self.config),
            "bins": self.bins.to_dict(),
            "vocab": {
                "poi_count": vocab.poi_count,
                "category_count": vocab.category_count,
                "user_count": vocab.user_count,
                "poi_to_category": dict(vocab.poi_to_category),
                "poi_coords": {p: list(c) for p, c in vocab.poi_coords.items()},
                "poi_freq": dict(vocab.poi_freq),
                "coord_conflicts": vocab.coord_conflicts,
                "labels": None
                if vocab.labels is None
                else [vocab.labels.users, vocab.labels.pois, vocab.labels.categories],
            },
            "graphs": {
                name: {
                    "node_count": g.node_count,
                    "directed": g.directed,
                    "edges": [[a, b, w] for a, b, w in g.edges],
                    "self_transitions": dict(g.self_transitions),
                }
                for name, g in self.graphs.items()
            },
            "history": self.history,
        }
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            payload = torch.load(str(path), weights_only=True)
        except Exception as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
        if payload.get("magic") != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
        v = payload["vocab"]
        labels = None
        if v.get("labels"):
            labels = CorpusLabels(users=v["labels"][0], pois=v["labels"][1], categories=v["labels"][2])
        vocab = Vocab(
            poi_count=v["poi_count"],
            category_count=v["category_count"],
            user_count=v["user_count"],
            poi_to_category={int(k): int(c) for k, c in v["poi_to_category"].items()},
            poi_coords={int(k): (float(c[0]), float(c[1])) for k, c in v["poi_coords"].items()},
            poi_freq={int(k): int(f) for k, f in v["poi_freq"].items()},
            labels=labels,
            coord_conflicts=v.get("coord_conflicts", 0),
        )
        graphs = {
            name: GlobalGraph(
                node_count=g["node_count"],
                directed=g["directed"],
                edges=[(int(a), int(b), float(w)) for a, b, w in g["edges"]],
                self_transitions={int(k): int(n) for k, n in g["self_transitions"].items()},
            )
            for name, g in payload["graphs"].items()
        }
        return cls(
            state=payload["state"],
            vocab=vocab,
            bins=BinSpec.from_dict(payload["bins"]),
            config=RunConfig(**payload["config"]),
            graphs=graphs,
            history=payload.get("history", []),
        )


def _example_tensors(
    trajectories: list[Trajectory], vocab: Vocab, bins: BinSpec, cfg: RunConfig
) -> list[GraphTensors]:
    out = []
    for traj in trajectories:
        for prefix, target in expand_prefixes(traj):
            g = featurize(trajectory_to_graph(prefix, target), bins, cfg.max_hops)
            out.append(
                graph_tensors(
                    g,
                    vocab,
                    bins.count,
                    max_hops=cfg.max_hops,
                    max_degree=cfg.max_degree,
                    max_position=cfg.max_position,
                    freq_buckets=cfg.freq_buckets,
                    edge_count_buckets=cfg.edge_count_buckets,
                )
            )
    return out


def _split_validation(
    train: list[Trajectory], fraction: float
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Hold out the chronologically last `fraction` of each user's sessions."""
    by_user: dict[int, list[Trajectory]] = {}
    for t in train:
        by_user.setdefault(t.user, []).append(t)
    fit: list[Trajectory] = []
    val: list[Trajectory] = []
    for user in sorted(by_user):
        sessions = sorted(by_user[user], key=lambda t: t.day)
        n_val = int(fraction * len(sessions))
        fit.extend(sessions[: len(sessions) - n_val])
        val.extend(sessions[len(sessions) - n_val :])
    return fit, val


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


@torch.no_grad()
def _acc1(model: MobGT, examples: list[GraphTensors], batch_size: int) -> float:
    model.eval()
    hits = 0
    for batch in _batches(examples, batch_size):
        poi_logits, _ = model(batch)
        pred = poi_logits.argmax(dim=-1)
        for j, gt in enumerate(batch):
            hits += int(pred[j]) == gt.target_poi
    return hits / len(examples)


def train_model(corpus: SplitCorpus, vocab: Vocab, cfg: RunConfig, log_every: int = 1) -> Checkpoint:
    """Fit MobGT on the training split; returns the best checkpoint seen.

    Deterministic for a fixed seed/config: seeded init, seeded shuffles, and
    single-threaded math by default.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(cfg.threads)

    if not corpus.train:
        raise DataError("training split is empty")
    dists = session_distances(corpus.train)
    bins = make_bins(dists) if dists else BinSpec()
    graphs = build_global_graphs(corpus.train, vocab, cfg.spatial_threshold_km)
    model = MobGT(cfg, vocab, bins, graphs)

    fit, val = _split_validation(corpus.train, cfg.val_fraction)
    if not fit:
        raise ConfigError("validation fraction leaves no training sessions")
    train_ex = _example_tensors(fit, vocab, bins, cfg)
    val_ex = _example_tensors(val, vocab, bins, cfg)
    monitor = val_ex
    if cfg.early_stop_on == "train" or not val_ex:
        if cfg.early_stop_on == "val" and not val_ex:
            log.warning("validation carve-out is empty; early stopping on training Acc@1")
        monitor = train_ex

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr0, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed)

    best_acc = -1.0
    best_state = copy.deepcopy(model.state_dict())
    bad_epochs = 0
    history: list[dict] = []
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr0 * (1.0 - epoch / cfg.max_epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        order = torch.randperm(len(train_ex), generator=gen).tolist()
        model.train()
        total = 0.0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            batch = [train_ex[i] for i in idx]
            poi_logits, cat_logits = model(batch)
            tp = torch.tensor([gt.target_poi for gt in batch], dtype=torch.int64)
            tc = torch.tensor([gt.target_cat for gt in batch], dtype=torch.int64)
            loss = total_loss(poi_logits, cat_logits, tp, tc, cfg)
            if not torch.isfinite(loss):
                raise NumericError(f"training loss diverged at epoch {epoch}, step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        acc = _acc1(model, monitor, max(cfg.batch_size, 8))
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / len(train_ex),
            "monitor_acc1": acc,
        }
        history.append(record)
        if log_every and epoch % log_every == 0:
            log.info(
                "epoch %d: lr=%.6f loss=%.4f acc@1=%.4f", epoch, lr, record["train_loss"], acc
            )
        if acc > best_acc:
            best_acc = acc
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                log.info("early stop at epoch %d (best acc@1=%.4f)", epoch, best_acc)
                break
    return Checkpoint(
        state=best_state, vocab=vocab, bins=bins, config=cfg, graphs=graphs, history=history
    )


def score_prefix(model: MobGT, prefix: list[CheckIn]) -> np.ndarray:
    """Raw POI logits for the next check-in after the prefix."""
    vocab = model.vocab
    for c in prefix:
        if c.poi >= vocab.poi_count:
            raise DataError(f"POI {vocab.poi_label(c.poi)} is not in the trained catalog")
    g = featurize(trajectory_to_graph(prefix), model.bins, model.cfg.max_hops)
    gt = graph_tensors(
        g,
        vocab,
        model.bins.count,
        max_hops=model.cfg.max_hops,
        max_degree=model.cfg.max_degree,
        max_position=model.cfg.max_position,
        freq_buckets=model.cfg.freq_buckets,
        edge_count_buckets=model.cfg.edge_count_buckets,
    )
    with torch.no_grad():
        poi_logits, _ = model([gt])
    return poi_logits[0].numpy()


def rank_pois(model: MobGT, prefix: list[CheckIn]) -> np.ndarray:
    """Full catalog ranking for a prefix: descending score, ties by poi id."""
    scores = score_prefix(model, prefix)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def predict_topk(model: MobGT, prefix: list[CheckIn], k: int = 10) -> list[tuple[int, float]]:
    """Top-k (poi, score) for the next check-in after the prefix."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    scores = score_prefix(model, prefix)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    k = min(k, model.vocab.poi_count)
    return [(int(p), float(scores[p])) for p in order[:k]]
