"""Check-in parsing, session segmentation, splitting, vocab, synthetic data.

The input format is tab-separated text, one check-in per line:

    user_raw  poi_raw  category_raw  lat  lon  timestamp

Timestamps are ISO-8601 or integer epoch seconds, interpreted as UTC.  Raw
string ids are mapped to dense integers in order of first appearance.  A
session is one user's check-ins on one UTC calendar day; sessions shorter
than min_len are dropped before splitting.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .geo import haversine

log = logging.getLogger(__name__)

CACHE_MAGIC = "mobgt-corpus"
CACHE_VERSION = 1

_DAY = 86400


@dataclass(frozen=True)
class CheckIn:
    user: int
    poi: int
    category: int
    lat: float
    lon: float
    timestamp: int  # UTC epoch seconds, > 0


@dataclass
class Trajectory:
    """One user's check-ins for one UTC calendar day, time-ordered."""

    user: int
    day: dt.date
    checkins: list[CheckIn]

    def __len__(self) -> int:
        return len(self.checkins)


@dataclass
class CorpusLabels:
    """Raw string ids indexed by dense id, for round-tripping CLI input."""

    users: list[str] = field(default_factory=list)
    pois: list[str] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)


@dataclass
class Vocab:
    """Training-side catalog: sizes, per-POI category/coords/frequency.

    Dense ids are expected to be catalog-first (see reindex_split), so ids
    >= poi_count belong to POIs never seen in training.
    """

    poi_count: int
    category_count: int
    user_count: int
    poi_to_category: dict[int, int]
    poi_coords: dict[int, tuple[float, float]]
    poi_freq: dict[int, int]
    labels: CorpusLabels | None = None
    coord_conflicts: int = 0

    def freq(self, poi: int) -> int:
        return self.poi_freq.get(poi, 0)

    def poi_label(self, poi: int) -> str:
        if self.labels and poi < len(self.labels.pois):
            return self.labels.pois[poi]
        return str(poi)


@dataclass
class SplitCorpus:
    train: list[Trajectory]
    test: list[Trajectory]
    discarded_sessions: int = 0


def parse_timestamp(text: str, lineno: int = 0) -> int:
    text = text.strip()
    try:
        ts = int(text)
    except ValueError:
        try:
            d = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
        except ValueError as exc:
            raise DataError(f"line {lineno}: bad timestamp {text!r}") from exc
        if d.tzinfo is None:
            d = d.replace(tzinfo=dt.timezone.utc)
        ts = int(d.timestamp())
    if ts <= 0:
        raise DataError(f"line {lineno}: timestamp must be positive, got {ts}")
    return ts


def parse_checkins(lines) -> tuple[list[CheckIn], CorpusLabels]:
    """Parse TSV check-in lines into dense-id records.

    Returns the check-ins sorted by (user, timestamp) with input order kept
    for ties, plus the raw-id tables.  Lines starting with '#' and blank
    lines are skipped.
    """
    labels = CorpusLabels()
    maps: tuple[dict[str, int], ...] = ({}, {}, {})
    tables = (labels.users, labels.pois, labels.categories)

    def intern(kind: int, raw: str) -> int:
        m = maps[kind]
        if raw not in m:
            m[raw] = len(m)
            tables[kind].append(raw)
        return m[raw]

    out: list[CheckIn] = []
    for lineno, line in enumerate(lines, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataError(f"line {lineno}: expected 6 tab-separated fields, got {len(parts)}")
        user_raw, poi_raw, cat_raw, lat_s, lon_s, ts_s = (p.strip() for p in parts)
        try:
            lat = float(lat_s)
            lon = float(lon_s)
        except ValueError as exc:
            raise DataError(f"line {lineno}: bad coordinate {lat_s!r}/{lon_s!r}") from exc
        if not -90.0 <= lat <= 90.0:
            raise DataError(f"line {lineno}: lat out of range: {lat}")
        if not -180.0 <= lon <= 180.0:
            raise DataError(f"line {lineno}: lon out of range: {lon}")
        out.append(
            CheckIn(
                user=intern(0, user_raw),
                poi=intern(1, poi_raw),
                category=intern(2, cat_raw),
                lat=lat,
                lon=lon,
                timestamp=parse_timestamp(ts_s, lineno),
            )
        )
    out.sort(key=lambda c: (c.user, c.timestamp))
    return out, labels


def segment_trajectories(checkins: list[CheckIn], min_len: int = 3) -> tuple[list[Trajectory], int]:
    """Group check-ins into per-user UTC-day sessions of at least min_len.

    Returns (sessions, discarded_count); short sessions are dropped silently.
    """
    groups: dict[tuple[int, dt.date], list[CheckIn]] = {}
    for c in checkins:
        day = dt.datetime.fromtimestamp(c.timestamp, tz=dt.timezone.utc).date()
        groups.setdefault((c.user, day), []).append(c)
    sessions: list[Trajectory] = []
    discarded = 0
    for (user, day), cs in sorted(groups.items()):
        if len(cs) < min_len:
            discarded += 1
            continue
        sessions.append(Trajectory(user=user, day=day, checkins=cs))
    if discarded:
        log.info("segment_trajectories: discarded %d short sessions", discarded)
    return sessions, discarded


def chronological_split(trajectories: list[Trajectory], ratio: float = 0.8) -> SplitCorpus:
    """Per-user chronological split: earliest ceil(ratio*n) sessions to train.

    Users with a single session contribute to train only.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    by_user: dict[int, list[Trajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user, []).append(t)
    train: list[Trajectory] = []
    test: list[Trajectory] = []
    for user in sorted(by_user):
        sessions = sorted(by_user[user], key=lambda t: t.day)
        cut = math.ceil(ratio * len(sessions))
        train.extend(sessions[:cut])
        test.extend(sessions[cut:])
    return SplitCorpus(train=train, test=test)


def reindex_split(corpus: SplitCorpus, labels: CorpusLabels | None = None) -> tuple[SplitCorpus, CorpusLabels | None]:
    """Remap user/poi/category ids so train-seen ids come first and are dense.

    Test-only POIs and categories get ids past the training counts, which
    lets downstream code treat id >= count as "outside the catalog".
    """
    maps: list[dict[int, int]] = [{}, {}, {}]

    def remap(kind: int, old: int) -> int:
        m = maps[kind]
        if old not in m:
            m[old] = len(m)
        return m[old]

    def rewrite(t: Trajectory) -> Trajectory:
        cs = [
            CheckIn(
                user=remap(0, c.user),
                poi=remap(1, c.poi),
                category=remap(2, c.category),
                lat=c.lat,
                lon=c.lon,
                timestamp=c.timestamp,
            )
            for c in t.checkins
        ]
        return Trajectory(user=cs[0].user, day=t.day, checkins=cs)

    train = [rewrite(t) for t in corpus.train]
    test = [rewrite(t) for t in corpus.test]
    new_labels = None
    if labels is not None:
        new_labels = CorpusLabels(
            users=_permute_labels(labels.users, maps[0]),
            pois=_permute_labels(labels.pois, maps[1]),
            categories=_permute_labels(labels.categories, maps[2]),
        )
    return SplitCorpus(train=train, test=test, discarded_sessions=corpus.discarded_sessions), new_labels


def _permute_labels(old: list[str], mapping: dict[int, int]) -> list[str]:
    out = [""] * len(mapping)
    for old_id, new_id in mapping.items():
        out[new_id] = old[old_id] if old_id < len(old) else str(old_id)
    return out


def build_vocab(train: list[Trajectory], labels: CorpusLabels | None = None) -> Vocab:
    """Catalog tables from the training split.

    Coordinates and category follow the last record seen per POI; differing
    coordinates only bump a warning counter.
    """
    poi_to_category: dict[int, int] = {}
    poi_coords: dict[int, tuple[float, float]] = {}
    poi_freq: dict[int, int] = {}
    conflicts = 0
    max_user = -1
    max_cat = -1
    for t in train:
        for c in t.checkins:
            max_user = max(max_user, c.user)
            max_cat = max(max_cat, c.category)
            poi_freq[c.poi] = poi_freq.get(c.poi, 0) + 1
            prev = poi_coords.get(c.poi)
            if prev is not None and prev != (c.lat, c.lon):
                conflicts += 1
            poi_coords[c.poi] = (c.lat, c.lon)
            poi_to_category[c.poi] = c.category
    poi_count = max(poi_freq) + 1 if poi_freq else 0
    if conflicts:
        log.warning("build_vocab: %d check-ins moved a POI's coordinates", conflicts)
    return Vocab(
        poi_count=poi_count,
        category_count=max_cat + 1,
        user_count=max_user + 1,
        poi_to_category=poi_to_category,
        poi_coords=poi_coords,
        poi_freq=poi_freq,
        labels=labels,
        coord_conflicts=conflicts,
    )


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass
class SynthConfig:
    users: int = 10
    pois: int = 50
    categories: int = 8
    bbox: tuple[float, float, float, float] = (35.5, 35.9, 139.4, 139.9)  # lat_min, lat_max, lon_min, lon_max
    days: int = 7
    loop_len: int = 4
    regularity: float = 0.7
    clusters: int = 0  # 0 = uniform POI placement, else gaussian blobs
    seed: int = 0


def generate_synthetic(cfg: SynthConfig) -> tuple[list[CheckIn], CorpusLabels]:
    """Deterministic synthetic check-in stream with tunable routine strength.

    Each user owns a short loop of spatially nearby POIs (home, work, food,
    ...) visited on a fixed daily schedule.  Each emission follows the loop
    with probability `regularity` and jumps to a uniformly random POI
    otherwise, so regularity 1 gives perfectly repeating cycles and
    regularity 0 gives uniform transitions.
    """
    lat_min, lat_max, lon_min, lon_max = cfg.bbox
    if not (-90.0 <= lat_min < lat_max <= 90.0 and -180.0 <= lon_min < lon_max <= 180.0):
        raise ConfigError(f"invalid bounding box {cfg.bbox}")
    if not 0.0 <= cfg.regularity <= 1.0:
        raise ConfigError(f"regularity must be in [0, 1], got {cfg.regularity}")
    if cfg.users < 1 or cfg.pois < max(2, cfg.loop_len) or cfg.categories < 1 or cfg.days < 1:
        raise ConfigError("synthetic corpus needs at least 1 user/day and loop_len POIs")
    if cfg.loop_len < 3:
        raise ConfigError("loop_len below 3 produces sessions too short to keep")

    rng = np.random.default_rng(cfg.seed)
    if cfg.clusters > 0:
        centers_lat = rng.uniform(lat_min, lat_max, size=cfg.clusters)
        centers_lon = rng.uniform(lon_min, lon_max, size=cfg.clusters)
        which = rng.integers(0, cfg.clusters, size=cfg.pois)
        lat_span = lat_max - lat_min
        lon_span = lon_max - lon_min
        lats = np.clip(centers_lat[which] + rng.normal(0.0, 0.02 * lat_span, cfg.pois), lat_min, lat_max)
        lons = np.clip(centers_lon[which] + rng.normal(0.0, 0.02 * lon_span, cfg.pois), lon_min, lon_max)
    else:
        lats = rng.uniform(lat_min, lat_max, size=cfg.pois)
        lons = rng.uniform(lon_min, lon_max, size=cfg.pois)
    cats = rng.integers(0, cfg.categories, size=cfg.pois)

    # midnight-aligned base so every check-in lands inside a known UTC day
    base = 1_600_000_000 - (1_600_000_000 % _DAY)
    hours = [6.0 + i * (16.0 / cfg.loop_len) for i in range(cfg.loop_len)]

    out: list[CheckIn] = []
    for user in range(cfg.users):
        anchor = int(rng.integers(0, cfg.pois))
        d = np.array([haversine((lats[anchor], lons[anchor]), (lats[p], lons[p])) for p in range(cfg.pois)])
        d[anchor] = -1.0  # anchor always leads the loop
        order = np.lexsort((np.arange(cfg.pois), d))
        loop = [int(p) for p in order[: cfg.loop_len]]
        for day in range(cfg.days):
            day_start = base + day * _DAY
            for slot in range(cfg.loop_len):
                if rng.random() < cfg.regularity:
                    poi = loop[slot]
                else:
                    poi = int(rng.integers(0, cfg.pois))
                ts = day_start + int(hours[slot] * 3600)
                out.append(
                    CheckIn(
                        user=user,
                        poi=poi,
                        category=int(cats[poi]),
                        lat=float(lats[poi]),
                        lon=float(lons[poi]),
                        timestamp=ts,
                    )
                )
    labels = CorpusLabels(
        users=[f"u{i}" for i in range(cfg.users)],
        pois=[f"p{i}" for i in range(cfg.pois)],
        categories=[f"c{i}" for i in range(cfg.categories)],
    )
    return out, labels


def write_checkins_tsv(checkins: list[CheckIn], labels: CorpusLabels, path: str | Path) -> None:
    """Write check-ins back out in the TSV input format."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# user\tpoi\tcategory\tlat\tlon\ttimestamp\n")
        for c in checkins:
            f.write(
                f"{labels.users[c.user]}\t{labels.pois[c.poi]}\t{labels.categories[c.category]}"
                f"\t{c.lat:.6f}\t{c.lon:.6f}\t{c.timestamp}\n"
            )


# ---------------------------------------------------------------------------
# corpus cache

# Layout: a directory holding meta.json (magic, version, counts), vocab.json,
# and train.jsonl/test.jsonl with one JSON trajectory per line.  All JSON is
# written with sorted keys so a rerun on identical input is byte-identical.


def _traj_to_json(t: Trajectory) -> str:
    rec = {
        "user": t.user,
        "day": t.day.isoformat(),
        "checkins": [[c.poi, c.category, c.lat, c.lon, c.timestamp] for c in t.checkins],
    }
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _traj_from_json(line: str) -> Trajectory:
    rec = json.loads(line)
    user = int(rec["user"])
    cs = [
        CheckIn(user=user, poi=int(p), category=int(cat), lat=float(lat), lon=float(lon), timestamp=int(ts))
        for p, cat, lat, lon, ts in rec["checkins"]
    ]
    return Trajectory(user=user, day=dt.date.fromisoformat(rec["day"]), checkins=cs)


def save_corpus(corpus: SplitCorpus, vocab: Vocab, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "magic": CACHE_MAGIC,
        "version": CACHE_VERSION,
        "n_train": len(corpus.train),
        "n_test": len(corpus.test),
        "discarded_sessions": corpus.discarded_sessions,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    vdict = {
        "poi_count": vocab.poi_count,
        "category_count": vocab.category_count,
        "user_count": vocab.user_count,
        "coord_conflicts": vocab.coord_conflicts,
        "pois": [
            [p, vocab.poi_to_category[p], vocab.poi_coords[p][0], vocab.poi_coords[p][1], vocab.poi_freq[p]]
            for p in sorted(vocab.poi_freq)
        ],
        "labels": None
        if vocab.labels is None
        else {"users": vocab.labels.users, "pois": vocab.labels.pois, "categories": vocab.labels.categories},
    }
    (out / "vocab.json").write_text(json.dumps(vdict, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for name, trajs in (("train.jsonl", corpus.train), ("test.jsonl", corpus.test)):
        with open(out / name, "w", encoding="utf-8") as f:
            for t in trajs:
                f.write(_traj_to_json(t) + "\n")


def load_corpus(cache_dir: str | Path) -> tuple[SplitCorpus, Vocab]:
    cache = Path(cache_dir)
    meta_path = cache / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no corpus cache at {cache}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("magic") != CACHE_MAGIC:
        raise DataError(f"{meta_path}: not a corpus cache (magic={meta.get('magic')!r})")
    if meta.get("version") != CACHE_VERSION:
        raise DataError(f"{meta_path}: unsupported cache version {meta.get('version')!r}")
    vdict = json.loads((cache / "vocab.json").read_text(encoding="utf-8"))
    labels = None
    if vdict.get("labels"):
        labels = CorpusLabels(
            users=list(vdict["labels"]["users"]),
            pois=list(vdict["labels"]["pois"]),
            categories=list(vdict["labels"]["categories"]),
        )
    vocab = Vocab(
        poi_count=int(vdict["poi_count"]),
        category_count=int(vdict["category_count"]),
        user_count=int(vdict["user_count"]),
        poi_to_category={int(p): int(c) for p, c, _, _, _ in vdict["pois"]},
        poi_coords={int(p): (float(lat), float(lon)) for p, _, lat, lon, _ in vdict["pois"]},
        poi_freq={int(p): int(f) for p, _, _, _, f in vdict["pois"]},
        labels=labels,
        coord_conflicts=int(vdict.get("coord_conflicts", 0)),
    )
    trains = [_traj_from_json(line) for line in (cache / "train.jsonl").read_text(encoding="utf-8").splitlines()]
    tests = [_traj_from_json(line) for line in (cache / "test.jsonl").read_text(encoding="utf-8").splitlines()]
    corpus = SplitCorpus(train=trains, test=tests, discarded_sessions=int(meta.get("discarded_sessions", 0)))
    return corpus, vocab


def prepare_corpus(lines, min_len: int = 3, ratio: float = 0.8) -> tuple[SplitCorpus, Vocab]:
    """Full pipeline from raw TSV lines to a reindexed split plus vocab."""
    checkins, labels = parse_checkins(lines)
    sessions, discarded = segment_trajectories(checkins, min_len=min_len)
    split = chronological_split(sessions, ratio=ratio)
    split.discarded_sessions = discarded
    split, labels = reindex_split(split, labels)
    vocab = build_vocab(split.train, labels=labels)
    return split, vocab
