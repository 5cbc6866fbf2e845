"""Corpus-level POI/category graphs and their GCN embeddings.

Three graphs are built from the training split: an undirected spatial graph
connecting POIs closer than a distance threshold, a directed temporal graph
weighted by consecutive-visit counts, and a directed category transition
graph.  Each is encoded with a small GCN over trainable free node embeddings;
the spatial/temporal views are mean-pooled and fused with the category view
into one embedding per POI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import Trajectory, Vocab
from .geo import haversine_matrix


@dataclass
class GlobalGraph:
    """Weighted graph over dense node ids.

    Undirected edges are stored once with src < dst.  Self-transitions are
    kept out of the edge list and tallied separately.
    """

    node_count: int
    directed: bool
    edges: list[tuple[int, int, float]]
    self_transitions: dict[int, int] = field(default_factory=dict)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def build_spatial_graph(vocab: Vocab, threshold_km: float = 2.5) -> GlobalGraph:
    """Undirected unit-weight edges between POIs strictly closer than threshold."""
    pois = sorted(vocab.poi_coords)
    edges: list[tuple[int, int, float]] = []
    if pois:
        lats = np.array([vocab.poi_coords[p][0] for p in pois])
        lons = np.array([vocab.poi_coords[p][1] for p in pois])
        dist = haversine_matrix(lats, lons)
        ii, jj = np.nonzero(dist < threshold_km)
        for i, j in zip(ii.tolist(), jj.tolist()):
            if i < j:
                edges.append((pois[i], pois[j], 1.0))
    return GlobalGraph(node_count=vocab.poi_count, directed=False, edges=edges)


def _transition_graph(trajectories: list[Trajectory], node_count: int, key) -> GlobalGraph:
    counts: dict[tuple[int, int], int] = {}
    selfs: dict[int, int] = {}
    for t in trajectories:
        ids = [key(c) for c in t.checkins]
        for a, b in zip(ids, ids[1:]):
            if a == b:
                selfs[a] = selfs.get(a, 0) + 1
            else:
                counts[(a, b)] = counts.get((a, b), 0) + 1
    edges = [(a, b, float(n)) for (a, b), n in sorted(counts.items())]
    return GlobalGraph(node_count=node_count, directed=True, edges=edges, self_transitions=selfs)


def build_temporal_graph(trajectories: list[Trajectory], vocab: Vocab) -> GlobalGraph:
    """Directed POI graph counting consecutive same-session visits."""
    return _transition_graph(trajectories, vocab.poi_count, key=lambda c: c.poi)


def build_category_graph(trajectories: list[Trajectory], vocab: Vocab) -> GlobalGraph:
    """Directed category graph counting consecutive same-session transitions."""
    return _transition_graph(trajectories, vocab.category_count, key=lambda c: c.category)


def write_edge_list(graph: GlobalGraph, path: str | Path) -> None:
    """Dump edges as "src<TAB>dst<TAB>weight" text."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# nodes={graph.node_count} directed={graph.directed}\n")
        for a, b, w in graph.edges:
            f.write(f"{a}\t{b}\t{w:g}\n")


def normalized_adjacency(graph: GlobalGraph, log_scale: bool = True) -> torch.Tensor:
    """Symmetric degree-normalized adjacency with self-loops, as dense tensor.

    Directed graphs are symmetrized by adding weights in both directions.
    With log_scale, raw weights pass through log1p before normalization;
    self-loops are added with weight 1 afterwards.
    """
    n = graph.node_count
    a = torch.zeros((n, n), dtype=torch.get_default_dtype())
    for src, dst, w in graph.edges:
        w = float(np.log1p(w)) if log_scale else float(w)
        a[src, dst] += w
        a[dst, src] += w
    a += torch.eye(n, dtype=a.dtype)
    deg = a.sum(dim=1)
    inv_sqrt = deg.pow(-0.5)
    inv_sqrt[torch.isinf(inv_sqrt)] = 0.0
    return inv_sqrt.unsqueeze(1) * a * inv_sqrt.unsqueeze(0)


class GCN(nn.Module):
    """Stack of A_hat @ H @ W layers, LeakyReLU between layers, linear last."""

    def __init__(self, dim: int, layers: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(dim, dim) for _ in range(layers))
        self.act = nn.LeakyReLU(0.01)

    def forward(self, adj: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        for i, lin in enumerate(self.layers):
            h = adj @ lin(h)
            if i + 1 < len(self.layers):
                h = self.act(h)
        return h


class ConcatFuse(nn.Module):
    """LeakyReLU(W [a ; b] + bias): the fusion block reused across the model."""

    def __init__(self, dim_a: int, dim_b: int, dim_out: int):
        super().__init__()
        self.lin = nn.Linear(dim_a + dim_b, dim_out)
        self.act = nn.LeakyReLU(0.01)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.act(self.lin(torch.cat([a, b], dim=-1)))


def fuse_poi_embeddings(
    e_s: torch.Tensor, e_t: torch.Tensor, e_c: torch.Tensor, fuse: ConcatFuse
) -> torch.Tensor:
    """Mean-pool the spatial/temporal views, then concat-fuse the category view.

    e_c must already be per-POI rows (category embedding gathered by the
    POI's category).
    """
    return fuse((e_s + e_t) / 2.0, e_c)


class GlobalEncoder(nn.Module):
    """Free embeddings + three GCNs + spatial/temporal pooling + category fusion.

    Output rows have width poi_dim + cat_dim.  Ablation switches drop the
    corresponding graph; with everything global disabled the free embeddings
    feed the fusion directly.
    """

    def __init__(
        self,
        poi_count: int,
        category_count: int,
        poi_dim: int,
        cat_dim: int,
        gcn_layers: int = 2,
        use_spatial: bool = True,
        use_temporal: bool = True,
        use_gcn: bool = True,
    ):
        super().__init__()
        self.use_spatial = use_spatial and use_gcn
        self.use_temporal = use_temporal and use_gcn
        self.use_gcn = use_gcn
        self.poi_embed = nn.Parameter(torch.empty(poi_count, poi_dim).uniform_(-0.1, 0.1))
        self.cat_embed = nn.Parameter(torch.empty(category_count, cat_dim).uniform_(-0.1, 0.1))
        self.spatial_gcn = GCN(poi_dim, gcn_layers)
        self.temporal_gcn = GCN(poi_dim, gcn_layers)
        self.category_gcn = GCN(cat_dim, gcn_layers)
        self.fuse = ConcatFuse(poi_dim, cat_dim, poi_dim + cat_dim)

    def forward(
        self,
        adj_spatial: torch.Tensor,
        adj_temporal: torch.Tensor,
        adj_category: torch.Tensor,
        poi_to_category: torch.Tensor,
    ) -> torch.Tensor:
        views = []
        if self.use_spatial:
            views.append(self.spatial_gcn(adj_spatial, self.poi_embed))
        if self.use_temporal:
            views.append(self.temporal_gcn(adj_temporal, self.poi_embed))
        if views:
            e_st = torch.stack(views).mean(dim=0)
        else:
            e_st = self.poi_embed
        if self.use_gcn:
            e_cat = self.category_gcn(adj_category, self.cat_embed)
        else:
            e_cat = self.cat_embed
        return self.fuse(e_st, e_cat[poi_to_category])


def build_global_graphs(
    train: list[Trajectory], vocab: Vocab, threshold_km: float = 2.5
) -> dict[str, GlobalGraph]:
    return {
        "spatial": build_spatial_graph(vocab, threshold_km=threshold_km),
        "temporal": build_temporal_graph(train, vocab),
        "category": build_category_graph(train, vocab),
    }
