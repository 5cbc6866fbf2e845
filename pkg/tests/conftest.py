"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

import datetime as dt

import pytest

from mobgt.data import CheckIn, Trajectory, Vocab

# verdict lines recorded by the acceptance suite, replayed after capture ends
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

DAY = 86400
# midnight-aligned base timestamp (2020-09-13T00:00:00Z)
BASE = 1_600_000_000 - (1_600_000_000 % DAY)


def ci(user=0, poi=0, cat=0, lat=0.0, lon=0.0, ts=BASE + 3600) -> CheckIn:
    return CheckIn(user=user, poi=poi, category=cat, lat=lat, lon=lon, timestamp=ts)


def make_traj(pois, user=0, cats=None, coords=None, day_offset=0, step=600) -> Trajectory:
    """Trajectory over one UTC day with the given POI id sequence."""
    start = BASE + day_offset * DAY + 3600
    cs = []
    for i, p in enumerate(pois):
        cat = cats[i] if cats else p % 3
        lat, lon = coords[p] if coords else (0.0, 0.01 * p)
        cs.append(CheckIn(user=user, poi=p, category=cat, lat=lat, lon=lon, timestamp=start + i * step))
    day = dt.datetime.fromtimestamp(start, tz=dt.timezone.utc).date()
    return Trajectory(user=user, day=day, checkins=cs)


@pytest.fixture
def worked_traj() -> Trajectory:
    """The 7-visit sequence 1,2,3,4,2,3,1 used for frozen graph structure."""
    return make_traj([1, 2, 3, 4, 2, 3, 1])


def toy_vocab(poi_count=5, cat_count=3, user_count=2, freq=None) -> Vocab:
    freq = freq or {p: p + 1 for p in range(poi_count)}
    return Vocab(
        poi_count=poi_count,
        category_count=cat_count,
        user_count=user_count,
        poi_to_category={p: p % cat_count for p in range(poi_count)},
        poi_coords={p: (0.0, 0.01 * p) for p in range(poi_count)},
        poi_freq=dict(freq),
    )
