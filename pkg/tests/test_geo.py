"""Distance and binning tests against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobgt.geo import EARTH_RADIUS_KM, BinSpec, bin_index, fd_bin_count, haversine, haversine_matrix, make_bins

# --- independent great-circle oracle (high-precision arctan form) ----------


def great_circle_oracle(a, b):
    import mpmath

    mpmath.mp.dps = 50
    lat1, lon1 = mpmath.radians(a[0]), mpmath.radians(a[1])
    lat2, lon2 = mpmath.radians(b[0]), mpmath.radians(b[1])
    dlon = lon2 - lon1
    num = mpmath.sqrt(
        (mpmath.cos(lat2) * mpmath.sin(dlon)) ** 2
        + (mpmath.cos(lat1) * mpmath.sin(lat2) - mpmath.sin(lat1) * mpmath.cos(lat2) * mpmath.cos(dlon)) ** 2
    )
    den = mpmath.sin(lat1) * mpmath.sin(lat2) + mpmath.cos(lat1) * mpmath.cos(lat2) * mpmath.cos(dlon)
    return float(EARTH_RADIUS_KM * mpmath.atan2(num, den))


def test_haversine_zero():
    assert haversine((35.0, 139.0), (35.0, 139.0)) == 0.0


def test_haversine_one_degree_longitude_at_equator():
    # one degree of arc on the sphere: R * pi / 180
    expected = EARTH_RADIUS_KM * math.pi / 180.0
    assert haversine((0.0, 0.0), (0.0, 1.0)) == pytest.approx(expected, rel=1e-12)
    assert round(haversine((0.0, 0.0), (0.0, 1.0)), 2) == 111.19


def test_haversine_tokyo_kyoto():
    a, b = (35.6895, 139.6917), (35.0116, 135.7681)
    d = haversine(a, b)
    assert d == pytest.approx(great_circle_oracle(a, b), rel=1e-9)
    assert 360.0 < d < 370.0


def test_haversine_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(200):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        want = great_circle_oracle(a, b)
        got = haversine(a, b)
        assert abs(got - want) <= max(1e-9, 1e-3 * want)


def test_haversine_matrix_matches_scalar():
    rng = np.random.default_rng(3)
    lats = rng.uniform(-80, 80, size=6)
    lons = rng.uniform(-170, 170, size=6)
    m = haversine_matrix(lats, lons)
    for i in range(6):
        for j in range(6):
            assert m[i, j] == pytest.approx(haversine((lats[i], lons[i]), (lats[j], lons[j])), abs=1e-9)


@given(
    st.floats(-90, 90), st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180)
)
@settings(max_examples=200, deadline=None)
def test_haversine_symmetric_nonnegative(lat1, lon1, lat2, lon2):
    d = haversine((lat1, lon1), (lat2, lon2))
    assert d >= 0.0
    assert d == pytest.approx(haversine((lat2, lon2), (lat1, lon1)), abs=1e-9)
    assert d <= EARTH_RADIUS_KM * math.pi + 1e-6  # no distance beyond half the sphere


def test_haversine_triangle_inequality():
    rng = np.random.default_rng(11)
    for _ in range(200):
        p = [(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3)]
        ab = haversine(p[0], p[1])
        bc = haversine(p[1], p[2])
        ac = haversine(p[0], p[2])
        assert ac <= ab + bc + 1e-6


# --- Freedman-Diaconis bin count -------------------------------------------


def brute_quantile(sorted_xs, q):
    """Type-7 (linear interpolation) quantile, written out by hand."""
    pos = q * (len(sorted_xs) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    frac = pos - lo
    return sorted_xs[lo] * (1.0 - frac) + sorted_xs[hi] * frac


def test_fd_bin_count_worked_example():
    xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    # oracle quartiles by hand: positions 1.75 and 5.25 in the sorted sample
    q25 = brute_quantile(xs, 0.25)
    q75 = brute_quantile(xs, 0.75)
    assert q75 - q25 == pytest.approx(3.5)
    width = 2.0 * (q75 - q25) / 8.0 ** (1.0 / 3.0)
    assert math.ceil((7.0 - 0.0) / width) == 2
    assert fd_bin_count(xs) == 2


def test_fd_bin_count_degenerate():
    assert fd_bin_count([1.0, 2.0, 3.0]) == 1  # n < 4
    assert fd_bin_count([5.0] * 10) == 1  # zero spread
    assert fd_bin_count([0.0, 0.0, 0.0, 0.0, 100.0]) >= 1
    with pytest.raises(ValueError):
        fd_bin_count([])


def test_fd_bin_count_zero_iqr():
    # spread is positive but the middle half is constant
    xs = [0.0] + [5.0] * 10 + [10.0]
    assert fd_bin_count(xs) == 1


def test_make_bins_worked_example():
    spec = make_bins([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    assert spec.count == 2
    assert spec.edges == [pytest.approx(3.5)]


def test_bin_index_boundaries():
    spec = BinSpec(edges=[3.5], count=2)
    assert bin_index(1.0, spec) == 0
    assert bin_index(3.5, spec) == 1  # boundary belongs to the right bin
    assert bin_index(1e6, spec) == 1
    assert bin_index(-4.0, spec) == 0
    assert bin_index(7.0, BinSpec()) == 0  # single-bin spec


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=50), st.floats(-10, 1e5))
@settings(max_examples=200, deadline=None)
def test_bin_index_monotone_and_in_range(xs, probe):
    spec = make_bins(xs)
    idx = bin_index(probe, spec)
    assert 0 <= idx < spec.count
    assert bin_index(probe + 1.0, spec) >= idx


def test_make_bins_matches_brute_force_oracle():
    rng = np.random.default_rng(123)
    for trial in range(100):
        n = int(rng.integers(8, 400))
        xs = rng.uniform(0, 1000, size=n)
        xs = np.unique(xs)  # distinct values: oracle edges are exact
        if xs.size < 8:
            continue
        spec = make_bins(xs)
        b = fd_bin_count(xs)
        s = sorted(float(x) for x in xs)
        oracle_edges = [brute_quantile(s, j / b) for j in range(1, b)]
        assert len(spec.edges) == len(oracle_edges)
        for got, want in zip(spec.edges, oracle_edges):
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
        # brute-force linear-scan assignment must agree with bisect
        for d in rng.choice(xs, size=min(50, xs.size), replace=False):
            scan = sum(1 for e in spec.edges if d >= e)
            assert bin_index(float(d), spec) == min(spec.count - 1, scan)
        # equal-frequency: per-bin counts within one of each other
        counts = np.bincount([bin_index(float(x), spec) for x in xs], minlength=spec.count)
        assert counts.max() - counts.min() <= max(1, math.ceil(xs.size / b) - math.floor(xs.size / b) + 1)


def test_make_bins_equal_frequency_within_one():
    rng = np.random.default_rng(7)
    xs = np.unique(rng.normal(0, 100, size=1000))
    spec = make_bins(xs)
    counts = np.bincount([bin_index(float(x), spec) for x in xs], minlength=spec.count)
    assert counts.max() - counts.min() <= 1


def test_binspec_roundtrip():
    spec = make_bins(np.linspace(0, 50, 64))
    again = BinSpec.from_dict(spec.to_dict())
    assert again.edges == spec.edges and again.count == spec.count
