"""Per-trajectory mobility graphs.

A check-in sequence becomes a small directed multigraph: one node per
distinct POI (first-appearance order) plus a virtual center node appended
last, linked undirectedly to every other node.  Consecutive distinct visits
become directed edges with repeat counts; immediate self-transitions are
tallied per node instead of becoming loops.  Hop distances, canonical
shortest paths, and pairwise haversine bins are precomputed here for the
attention biases.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .data import CheckIn, Trajectory
from .errors import DataError
from .geo import BinSpec, bin_index, haversine_matrix

CENTER = -1  # matrix sentinel for pairs involving the center node

SLOT_SECONDS = 1800  # 48 half-hour slots per day


def time_slot(timestamp: int) -> int:
    """Half-hour slot of day in [0, 48) for a UTC epoch timestamp."""
    return (timestamp % 86400) // SLOT_SECONDS


@dataclass
class LocalMobilityGraph:
    """Graph form of one check-in prefix.

    Matrices are (n+1) x (n+1) with the center node last; entries touching
    the center hold CENTER sentinels except the diagonal.  `edges` holds
    (src_node, dst_node, count) over node indices, excluding the implicit
    center links.
    """

    user: int
    seq: list[int]  # poi id per occurrence
    slots: list[int]  # time slot per occurrence
    nodes: list[int]  # distinct poi ids, first-appearance order (center not listed)
    coords: list[tuple[float, float]]  # per node, from its last occurrence
    edges: list[tuple[int, int, int]]
    self_counts: dict[int, int]
    target: tuple[int, int] | None = None  # (poi, category) of the next check-in
    in_deg: np.ndarray | None = None
    out_deg: np.ndarray | None = None
    last_pos: np.ndarray | None = None
    hop: np.ndarray | None = None  # int matrix, CENTER sentinel
    paths: list[list[list[int]]] | None = None  # edge-index lists per (s, t)
    dist_km: np.ndarray | None = None
    dist_bin: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        """Real nodes, center excluded."""
        return len(self.nodes)

    @property
    def poi_to_node(self) -> dict[int, int]:
        return {p: i for i, p in enumerate(self.nodes)}

    def edge_counts_by_poi(self) -> dict[tuple[int, int], int]:
        return {(self.nodes[s], self.nodes[d]): c for s, d, c in self.edges}


def trajectory_to_graph(
    checkins: list[CheckIn] | Trajectory, target: CheckIn | None = None
) -> LocalMobilityGraph:
    """Build the graph skeleton for a prefix of at least two check-ins."""
    if isinstance(checkins, Trajectory):
        checkins = checkins.checkins
    if len(checkins) < 2:
        raise DataError(f"prefix too short to form a graph: {len(checkins)} check-ins")
    seq = [c.poi for c in checkins]
    slots = [time_slot(c.timestamp) for c in checkins]
    node_of: dict[int, int] = {}
    coords: list[tuple[float, float]] = []
    for c in checkins:
        if c.poi not in node_of:
            node_of[c.poi] = len(node_of)
            coords.append((c.lat, c.lon))
        else:
            coords[node_of[c.poi]] = (c.lat, c.lon)  # last occurrence wins
    counts: dict[tuple[int, int], int] = {}
    selfs: dict[int, int] = {}
    for a, b in zip(seq, seq[1:]):
        if a == b:
            selfs[node_of[a]] = selfs.get(node_of[a], 0) + 1
        else:
            key = (node_of[a], node_of[b])
            counts[key] = counts.get(key, 0) + 1
    edges = [(s, d, c) for (s, d), c in sorted(counts.items())]
    g = LocalMobilityGraph(
        user=checkins[0].user,
        seq=seq,
        slots=slots,
        nodes=list(node_of),
        coords=coords,
        edges=edges,
        self_counts=selfs,
        target=(target.poi, target.category) if target is not None else None,
    )
    return g


def structural_features(g: LocalMobilityGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node (in_deg, out_deg, last_pos) including the center row last.

    Degrees count edge multiplicity and ignore the implicit center links; the
    center's degrees are node_count - 1 and its position is the sequence
    length.
    """
    n = g.n_nodes
    in_deg = np.zeros(n + 1, dtype=np.int64)
    out_deg = np.zeros(n + 1, dtype=np.int64)
    for s, d, c in g.edges:
        out_deg[s] += c
        in_deg[d] += c
    in_deg[n] = out_deg[n] = n
    last_pos = np.zeros(n + 1, dtype=np.int64)
    node_of = g.poi_to_node
    for pos, poi in enumerate(g.seq):
        last_pos[node_of[poi]] = pos
    last_pos[n] = len(g.seq)
    return in_deg, out_deg, last_pos


def _undirected_adjacency(g: LocalMobilityGraph) -> list[list[int]]:
    """Neighbor lists over real nodes, sorted ascending for deterministic BFS."""
    adj: list[set[int]] = [set() for _ in range(g.n_nodes)]
    for s, d, _ in g.edges:
        adj[s].add(d)
        adj[d].add(s)
    return [sorted(a) for a in adj]


def shortest_hops(g: LocalMobilityGraph, max_hops: int = 16) -> np.ndarray:
    """BFS hop counts between real nodes, clamped at max_hops.

    Center rows/columns hold the CENTER sentinel; the diagonal is zero
    everywhere.  Trajectory graphs are connected by construction, but any
    unreached pair would also clamp to max_hops.
    """
    n = g.n_nodes
    adj = _undirected_adjacency(g)
    hop = np.full((n + 1, n + 1), CENTER, dtype=np.int64)
    for s in range(n):
        dist = [-1] * n
        dist[s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        for t in range(n):
            hop[s, t] = min(dist[t], max_hops) if dist[t] >= 0 else max_hops
    np.fill_diagonal(hop, 0)
    return hop


def hop_paths(g: LocalMobilityGraph) -> list[list[list[int]]]:
    """Canonical shortest-path edge lists for every ordered real-node pair.

    BFS from each source expands neighbors in ascending node order and keeps
    the first parent found, which fixes one deterministic shortest path per
    pair.  Each undirected step (u, v) is resolved to the stored directed
    edge u->v when it exists, else v->u.  Entries are indices into g.edges;
    pairs with s == t and pairs involving the center stay empty.
    """
    n = g.n_nodes
    adj = _undirected_adjacency(g)
    edge_idx: dict[tuple[int, int], int] = {(s, d): i for i, (s, d, _) in enumerate(g.edges)}

    def resolve(u: int, v: int) -> int:
        if (u, v) in edge_idx:
            return edge_idx[(u, v)]
        return edge_idx[(v, u)]

    paths: list[list[list[int]]] = [[[] for _ in range(n + 1)] for _ in range(n + 1)]
    for s in range(n):
        parent = [-1] * n
        seen = [False] * n
        seen[s] = True
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        parent[v] = u
                        nxt.append(v)
            frontier = nxt
        for t in range(n):
            if t == s or not seen[t]:
                continue
            steps: list[int] = []
            v = t
            while v != s:
                u = parent[v]
                steps.append(resolve(u, v))
                v = u
            paths[s][t] = steps[::-1]
    return paths


def pairwise_distances(g: LocalMobilityGraph, bins: BinSpec) -> tuple[np.ndarray, np.ndarray]:
    """Haversine km and bin ids for all node pairs.

    Center rows/columns get 0 km and the CENTER bin sentinel (diagonal
    excepted); downstream lookups map the sentinel to a dedicated slot.
    """
    n = g.n_nodes
    km = np.zeros((n + 1, n + 1), dtype=np.float64)
    if n:
        lats = np.array([c[0] for c in g.coords])
        lons = np.array([c[1] for c in g.coords])
        km[:n, :n] = haversine_matrix(lats, lons)
    idx = np.full((n + 1, n + 1), CENTER, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            idx[i, j] = bin_index(km[i, j], bins)
    idx[n, n] = 0
    return km, idx


def featurize(g: LocalMobilityGraph, bins: BinSpec, max_hops: int = 16) -> LocalMobilityGraph:
    """Fill in the derived matrices; returns the same graph for chaining."""
    g.in_deg, g.out_deg, g.last_pos = structural_features(g)
    g.hop = shortest_hops(g, max_hops=max_hops)
    g.paths = hop_paths(g)
    g.dist_km, g.dist_bin = pairwise_distances(g, bins)
    return g


def expand_prefixes(traj: Trajectory) -> list[tuple[list[CheckIn], CheckIn]]:
    """Teacher-forced (prefix, next check-in) pairs: lengths 2 .. len-1."""
    cs = traj.checkins
    return [(cs[:k], cs[k]) for k in range(2, len(cs))]


def session_distances(trajectories: list[Trajectory]) -> list[float]:
    """Distinct-node pair distances from each session's longest prefix.

    This is the training sample the distance bins are fitted on; the longest
    prefix covers every node pair any shorter prefix can produce.
    """
    out: list[float] = []
    for t in trajectories:
        g = trajectory_to_graph(t.checkins[:-1]) if len(t) > 2 else trajectory_to_graph(t.checkins)
        n = g.n_nodes
        if n < 2:
            continue
        lats = np.array([c[0] for c in g.coords])
        lons = np.array([c[1] for c in g.coords])
        km = haversine_matrix(lats, lons)
        for i in range(n):
            for j in range(i + 1, n):
                out.append(float(km[i, j]))
    return out


def dump_text(g: LocalMobilityGraph) -> str:
    """Readable dump: node table, edge list, and derived matrices."""
    lines = [f"nodes={g.n_nodes}+center user={g.user} seq_len={len(g.seq)}"]
    for i, poi in enumerate(g.nodes):
        extra = f" self={g.self_counts[i]}" if i in g.self_counts else ""
        lines.append(f"node {i}: poi={poi} lat={g.coords[i][0]:.5f} lon={g.coords[i][1]:.5f}{extra}")
    lines.append("edges (src\tdst\tcount):")
    for s, d, c in g.edges:
        lines.append(f"{s}\t{d}\t{c}")
    for name in ("in_deg", "out_deg", "last_pos"):
        v = getattr(g, name)
        if v is not None:
            lines.append(f"{name}: {v.tolist()}")
    for name in ("hop", "dist_bin"):
        m = getattr(g, name)
        if m is not None:
            lines.append(f"{name}:")
            for row in m.tolist():
                lines.append(" ".join(str(x) for x in row))
    return "\n".join(lines) + "\n"
