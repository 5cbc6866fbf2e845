"""Geospatial helpers: great-circle distance and equal-frequency distance bins.

Distances are haversine kilometres on a sphere of radius 6371.0 km.  Bin
boundaries for pairwise distances are chosen once from training data with the
Freedman-Diaconis rule and equal-frequency quantile cuts, then frozen.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees.

    >>> round(haversine((0.0, 0.0), (0.0, 1.0)), 2)
    111.19
    """
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    # rounding can push h a hair past 1 for antipodal points
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """All-pairs haversine distances (km) for parallel lat/lon arrays."""
    lat = np.radians(np.asarray(lats, dtype=np.float64))
    lon = np.radians(np.asarray(lons, dtype=np.float64))
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass
class BinSpec:
    """Frozen distance-bin boundaries.

    edges are strictly ascending interior cut points; bin i covers
    [edges[i-1], edges[i]) with the first bin open below and the last open
    above, so every distance maps to some bin in [0, count).
    """

    edges: list[float] = field(default_factory=list)
    count: int = 1

    def to_dict(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "count": int(self.count)}

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        return cls(edges=[float(e) for e in d["edges"]], count=int(d["count"]))


def fd_bin_count(dists) -> int:
    """Freedman-Diaconis bin count: ceil((max - min) / (2 * IQR / cbrt(n))).

    Degenerate samples (n < 4, zero spread, or zero IQR) give one bin.
    Quartiles use linear interpolation on the sorted sample.
    """
    xs = np.asarray(list(dists), dtype=np.float64)
    if xs.size == 0:
        raise ValueError("fd_bin_count: empty sample")
    if xs.size < 4:
        return 1
    spread = float(xs.max() - xs.min())
    q75, q25 = np.percentile(xs, [75.0, 25.0])
    iqr = float(q75 - q25)
    if spread <= 0.0 or iqr <= 0.0:
        return 1
    width = 2.0 * iqr / float(xs.size) ** (1.0 / 3.0)
    return max(1, math.ceil(spread / width))


def make_bins(dists) -> BinSpec:
    """Equal-frequency bins with the bin count picked by fd_bin_count.

    Interior edges sit at the j/b quantiles (linear interpolation).  Duplicate
    edges produced by heavy ties are collapsed, so count can come out below
    the Freedman-Diaconis target; edges stay strictly ascending.
    """
    xs = np.sort(np.asarray(list(dists), dtype=np.float64))
    b = fd_bin_count(xs)
    if b == 1:
        return BinSpec(edges=[], count=1)
    qs = [j / b for j in range(1, b)]
    raw = np.quantile(xs, qs)
    edges: list[float] = []
    for e in raw:
        e = float(e)
        if not edges or e > edges[-1]:
            edges.append(e)
    return BinSpec(edges=edges, count=len(edges) + 1)


def bin_index(d: float, spec: BinSpec) -> int:
    """Bin id for distance d: half-open intervals, clamped at both ends."""
    if spec.count <= 1 or not spec.edges:
        return 0
    return min(spec.count - 1, bisect.bisect_right(spec.edges, d))
