"""Graph-transformer encoder over local mobility graphs.

Node features combine the globally fused POI embedding with a half-hour
time-slot embedding (concat-fuse) plus an additive visit-frequency bucket
embedding; degree and last-position table lookups are added after projection
to the model width.  Attention gets three additive per-head biases shared by
every layer: a hop-count scalar, a distance-bin scalar, and a "trending"
term projected from the mean edge feature along the canonical shortest path
between the two nodes.  The virtual center node uses a learned token and
sentinel bias slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .data import Vocab
from .errors import ConfigError, NumericError
from .local_graph import CENTER, LocalMobilityGraph

PAD_SCORE = -1e9  # additive mask for padded keys; softmax underflows to 0

N_TIME_SLOTS = 48


@dataclass
class GraphTensors:
    """Index-tensor form of a featurized LocalMobilityGraph.

    Sizes: n real nodes, N = n + 1 with the center last, E edges.  Sentinels
    are already mapped to table slots: hop CENTER -> max_hops + 1, distance
    CENTER -> bin_count, path padding -> E.
    """

    poi: torch.Tensor  # [n]
    slot: torch.Tensor  # [n]
    freq_bucket: torch.Tensor  # [n]
    in_deg: torch.Tensor  # [N]
    out_deg: torch.Tensor  # [N]
    pos: torch.Tensor  # [N]
    hop_idx: torch.Tensor  # [N, N]
    dist_idx: torch.Tensor  # [N, N]
    edge_count_bucket: torch.Tensor  # [E]
    edge_dist_bin: torch.Tensor  # [E]
    path_idx: torch.Tensor  # [N, N, L]
    path_len: torch.Tensor  # [N, N]
    user: int
    target_poi: int
    target_cat: int

    @property
    def n_total(self) -> int:
        return int(self.in_deg.shape[0])


def freq_bucket(freq: int, buckets: int = 16) -> int:
    """Log2 visit-count bucket: 0 -> 0, 1..2 -> 1, 3..6 -> 2, ..."""
    return min(int(math.log2(freq + 1)), buckets - 1)


def graph_tensors(
    g: LocalMobilityGraph,
    vocab: Vocab,
    bin_count: int,
    max_hops: int = 16,
    max_degree: int = 32,
    max_position: int = 64,
    freq_buckets: int = 16,
    edge_count_buckets: int = 9,
) -> GraphTensors:
    """Convert a featurized graph into lookup tensors for the encoder."""
    if g.hop is None or g.dist_bin is None or g.paths is None:
        raise ValueError("graph must be featurized before tensor conversion")
    n = g.n_nodes
    slot = [g.slots[int(g.last_pos[i])] for i in range(n)]
    fb = [freq_bucket(vocab.freq(p), freq_buckets) for p in g.nodes]

    hop = torch.from_numpy(g.hop.copy())
    hop[hop == CENTER] = max_hops + 1
    dist = torch.from_numpy(g.dist_bin.copy())
    dist[dist == CENTER] = bin_count

    n_edges = len(g.edges)
    counts = torch.tensor(
        [min(c, edge_count_buckets - 1) for _, _, c in g.edges], dtype=torch.int64
    )
    ebins = torch.tensor([int(g.dist_bin[s, d]) for s, d, _ in g.edges], dtype=torch.int64)

    longest = max((len(g.paths[s][t]) for s in range(n + 1) for t in range(n + 1)), default=0)
    longest = max(longest, 1)
    path_idx = torch.full((n + 1, n + 1, longest), n_edges, dtype=torch.int64)
    path_len = torch.zeros((n + 1, n + 1), dtype=torch.int64)
    for s in range(n + 1):
        for t in range(n + 1):
            steps = g.paths[s][t]
            path_len[s, t] = len(steps)
            for k, e in enumerate(steps):
                path_idx[s, t, k] = e

    tp, tc = g.target if g.target is not None else (-1, -1)
    return GraphTensors(
        poi=torch.tensor(g.nodes, dtype=torch.int64),
        slot=torch.tensor(slot, dtype=torch.int64),
        freq_bucket=torch.tensor(fb, dtype=torch.int64),
        in_deg=torch.from_numpy(g.in_deg.copy()).clamp(max=max_degree),
        out_deg=torch.from_numpy(g.out_deg.copy()).clamp(max=max_degree),
        pos=torch.from_numpy(g.last_pos.copy()).clamp(max=max_position),
        hop_idx=hop,
        dist_idx=dist,
        edge_count_bucket=counts,
        edge_dist_bin=ebins,
        path_idx=path_idx,
        path_len=path_len,
        user=g.user,
        target_poi=tp,
        target_cat=tc,
    )


class EncoderTables(nn.Module):
    """All lookup tables and small fusions feeding the encoder."""

    def __init__(
        self,
        hidden_dim: int,
        poi_dim: int,
        cat_dim: int,
        time_dim: int,
        edge_dim: int,
        heads: int,
        bin_count: int,
        max_hops: int = 16,
        max_degree: int = 32,
        max_position: int = 64,
        freq_buckets: int = 16,
        edge_count_buckets: int = 9,
    ):
        super().__init__()
        if edge_dim % 2:
            raise ConfigError(f"edge_dim must be even, got {edge_dim}")
        from .global_graphs import ConcatFuse

        d_pc = poi_dim + cat_dim
        d_o = d_pc + time_dim
        self.time_table = nn.Embedding(N_TIME_SLOTS, time_dim)
        self.pti_fuse = ConcatFuse(d_pc, time_dim, d_o)
        self.freq_table = nn.Embedding(freq_buckets, d_o)
        self.input_proj = nn.Linear(d_o, hidden_dim)
        self.center_token = nn.Parameter(torch.zeros(hidden_dim).uniform_(-0.1, 0.1))
        self.indeg_table = nn.Embedding(max_degree + 1, hidden_dim)
        self.outdeg_table = nn.Embedding(max_degree + 1, hidden_dim)
        self.pos_table = nn.Embedding(max_position + 1, hidden_dim)
        self.hop_bias = nn.Embedding(max_hops + 2, heads)  # last row: center sentinel
        self.dist_bias = nn.Embedding(bin_count + 1, heads)  # last row: center sentinel
        self.count_emb = nn.Embedding(edge_count_buckets, edge_dim // 2)
        self.dist_emb = nn.Embedding(bin_count + 1, edge_dim // 2)
        self.trend_proj = nn.Parameter(torch.zeros(heads, edge_dim).uniform_(-0.1, 0.1))

    def assemble_nodes(
        self,
        gt: GraphTensors,
        poi_table: torch.Tensor,
        use_context: bool = True,
        use_structure: bool = True,
    ) -> torch.Tensor:
        """Node features [N, hidden] with the center token in the last row."""
        e_p = poi_table[gt.poi]
        e_ti = self.time_table(gt.slot)
        if not use_context:
            e_ti = torch.zeros_like(e_ti)
        e_pti = self.pti_fuse(e_p, e_ti)
        if use_context:
            e_o = e_pti + self.freq_table(gt.freq_bucket)
        else:
            e_o = e_pti
        h = self.input_proj(e_o)
        h = torch.cat([h, self.center_token.unsqueeze(0)], dim=0)
        if use_structure:
            h = h + self.indeg_table(gt.in_deg) + self.outdeg_table(gt.out_deg) + self.pos_table(gt.pos)
        return h

    def trending(self, gt: GraphTensors) -> torch.Tensor:
        """Mean path-edge feature projected per head: [heads, N, N].

        Edge feature = [count-bucket embedding ; distance-bin embedding].
        Empty paths (diagonal, center pairs) contribute zero.
        """
        ce = self.count_emb(gt.edge_count_bucket)
        de = self.dist_emb(gt.edge_dist_bin)
        feats = torch.cat([ce, de], dim=-1)
        feats = torch.cat([feats, feats.new_zeros(1, feats.shape[-1])], dim=0)  # pad row
        gathered = feats[gt.path_idx]  # [N, N, L, edge_dim]
        mean = gathered.sum(dim=2) / gt.path_len.clamp(min=1).unsqueeze(-1)
        return torch.einsum("xye,he->hxy", mean, self.trend_proj)

    def attention_bias(self, gt: GraphTensors, use_trending: bool = True) -> torch.Tensor:
        """Per-head additive attention bias [heads, N, N], shared by all layers."""
        bias = self.hop_bias(gt.hop_idx).permute(2, 0, 1) + self.dist_bias(gt.dist_idx).permute(2, 0, 1)
        if use_trending:
            bias = bias + self.trending(gt)
        return bias


class MultiHeadAttention(nn.Module):
    def __init__(self, hidden_dim: int, heads: int):
        super().__init__()
        if hidden_dim % heads:
            raise ConfigError(f"hidden_dim {hidden_dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = hidden_dim // heads
        self.q = nn.Linear(hidden_dim, hidden_dim)
        self.k = nn.Linear(hidden_dim, hidden_dim)
        self.v = nn.Linear(hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, hidden_dim)

    def forward(self, x: torch.Tensor, bias: torch.Tensor | None, return_weights: bool = False):
        b, n, _ = x.shape

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, n, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if bias is not None:
            scores = scores + bias
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(b, n, -1)
        out = self.out(ctx)
        if return_weights:
            return out, attn
        return out


class FeedForward(nn.Module):
    def __init__(self, hidden_dim: int, mult: int = 4, activation: str = "gelu"):
        super().__init__()
        acts = {"gelu": F.gelu, "silu": F.silu}
        if activation not in acts:
            raise ConfigError(f"unknown ffn activation {activation!r}")
        self.act = acts[activation]
        self.lin1 = nn.Linear(hidden_dim, mult * hidden_dim)
        self.lin2 = nn.Linear(mult * hidden_dim, hidden_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm residual block: x + attn(norm(x)), then x + ffn(norm(x))."""

    def __init__(self, hidden_dim: int, heads: int, ffn_mult: int = 4, activation: str = "gelu"):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden_dim)
        self.attn = MultiHeadAttention(hidden_dim, heads)
        self.norm2 = nn.LayerNorm(hidden_dim)
        self.ffn = FeedForward(hidden_dim, ffn_mult, activation)

    def forward(self, x: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), bias)
        x = x + self.ffn(self.norm2(x))
        return x


class STGraphEncoder(nn.Module):
    """Encoder stack; the same bias tensor is added in every layer."""

    def __init__(self, hidden_dim: int, heads: int, layers: int, ffn_mult: int = 4, activation: str = "gelu"):
        super().__init__()
        self.blocks = nn.ModuleList(
            EncoderLayer(hidden_dim, heads, ffn_mult, activation) for _ in range(layers)
        )

    def forward(self, x: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, bias)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after encoder layer {i}")
        return x


def pad_batch(
    feats: list[torch.Tensor], biases: list[torch.Tensor]
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack variable-size graphs: zero-padded features, masked bias, center index.

    Padded keys get PAD_SCORE for every query so their softmax weight
    underflows to zero; padded query rows stay unmasked (their output is
    never read).
    """
    b = len(feats)
    n_max = max(f.shape[0] for f in feats)
    heads = biases[0].shape[0]
    h = feats[0].new_zeros(b, n_max, feats[0].shape[1])
    bias = feats[0].new_zeros(b, heads, n_max, n_max)
    centers = torch.zeros(b, dtype=torch.int64)
    for i, (f, bi) in enumerate(zip(feats, biases)):
        n = f.shape[0]
        h[i, :n] = f
        bias[i, :, :n, :n] = bi
        if n < n_max:
            bias[i, :, :, n:] = PAD_SCORE
        centers[i] = n - 1
    return h, bias, centers
