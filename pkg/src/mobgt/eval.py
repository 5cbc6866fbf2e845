"""Ranking metrics, the evaluation loop, and a first-order Markov baseline.

Examples are teacher-forced prefixes of test sessions: every prefix of
length >= 2 predicts the following check-in ("prefix" mode), or only the
longest prefix per session ("last" mode).  Rankings cover the training
catalog; targets outside it can never be ranked and score zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .data import CheckIn, Trajectory, Vocab
from .errors import DataError

METRIC_NAMES = ("acc1", "acc5", "acc10", "ndcg5", "ndcg10", "mrr")


@dataclass
class MetricsReport:
    acc1: float = 0.0
    acc5: float = 0.0
    acc10: float = 0.0
    ndcg5: float = 0.0
    ndcg10: float = 0.0
    mrr: float = 0.0
    n_examples: int = 0
    n_unreachable: int = 0
    config_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "acc1": self.acc1,
                "acc5": self.acc5,
                "acc10": self.acc10,
                "ndcg5": self.ndcg5,
                "ndcg10": self.ndcg10,
                "mrr": self.mrr,
                "n_examples": self.n_examples,
                "n_unreachable": self.n_unreachable,
                "config_digest": self.config_digest,
            },
            sort_keys=True,
        )

    def to_table(self) -> str:
        rows = [f"{name:>8}  {getattr(self, name):.4f}" for name in METRIC_NAMES]
        rows.append(f"examples  {self.n_examples} ({self.n_unreachable} unreachable)")
        return "\n".join(rows)


def hit_and_ndcg(rank: int, k: int) -> tuple[float, float]:
    """Acc@k indicator and single-relevant NDCG@k for a 1-based rank."""
    if rank <= k:
        return 1.0, 1.0 / math.log2(rank + 1)
    return 0.0, 0.0


def metrics_from_rank(rank: int) -> dict[str, float]:
    acc1, _ = hit_and_ndcg(rank, 1)
    acc5, ndcg5 = hit_and_ndcg(rank, 5)
    acc10, ndcg10 = hit_and_ndcg(rank, 10)
    return {
        "acc1": acc1,
        "acc5": acc5,
        "acc10": acc10,
        "ndcg5": ndcg5,
        "ndcg10": ndcg10,
        "mrr": 1.0 / rank,
    }


def metrics_for_example(ranking, target: int) -> dict[str, float]:
    """Per-example metrics from a full catalog ranking.

    A target absent from the ranking scores zero everywhere (unreachable).
    """
    for pos, poi in enumerate(ranking):
        if poi == target:
            return metrics_from_rank(pos + 1)
    return {name: 0.0 for name in METRIC_NAMES}


def iter_examples(test: list[Trajectory], eval_mode: str = "prefix"):
    """(prefix, target) pairs per the evaluation mode."""
    for traj in test:
        cs = traj.checkins
        if eval_mode == "last":
            yield cs[:-1], cs[-1]
        else:
            for k in range(2, len(cs)):
                yield cs[:k], cs[k]


def evaluate(
    rank_fn,
    test: list[Trajectory],
    vocab: Vocab,
    eval_mode: str = "prefix",
    config_digest: str = "",
) -> MetricsReport:
    """Aggregate ranking metrics over all test examples.

    rank_fn maps a prefix (list of CheckIn) to a full catalog ranking.
    Examples whose target lies outside the catalog count as unreachable and
    score zero; examples whose prefix contains an out-of-catalog POI cannot
    be encoded and also score zero (the model is not consulted).
    """
    totals = {name: 0.0 for name in METRIC_NAMES}
    n_examples = 0
    n_unreachable = 0
    for prefix, target in iter_examples(test, eval_mode):
        n_examples += 1
        if target.poi >= vocab.poi_count:
            n_unreachable += 1
            continue
        if any(c.poi >= vocab.poi_count for c in prefix):
            continue
        ranking = rank_fn(prefix)
        m = metrics_for_example(ranking, target.poi)
        for name in METRIC_NAMES:
            totals[name] += m[name]
    if n_examples == 0:
        raise DataError("no evaluation examples in the test split")
    return MetricsReport(
        **{name: totals[name] / n_examples for name in METRIC_NAMES},
        n_examples=n_examples,
        n_unreachable=n_unreachable,
        config_digest=config_digest,
    )


# ---------------------------------------------------------------------------
# first-order Markov baseline


@dataclass
class MarkovModel:
    """Transition frequencies plus a popularity fallback over the catalog."""

    poi_count: int
    transitions: dict[int, dict[int, float]] = field(default_factory=dict)
    popularity: list[int] = field(default_factory=list)  # catalog sorted by train count desc


def mc_train(train: list[Trajectory], vocab: Vocab) -> MarkovModel:
    """Count consecutive-visit transitions (self-transitions included)."""
    counts: dict[int, dict[int, int]] = {}
    for t in train:
        ids = [c.poi for c in t.checkins]
        for a, b in zip(ids, ids[1:]):
            row = counts.setdefault(a, {})
            row[b] = row.get(b, 0) + 1
    transitions = {
        a: {b: n / sum(row.values()) for b, n in row.items()} for a, row in counts.items()
    }
    popularity = sorted(range(vocab.poi_count), key=lambda p: (-vocab.freq(p), p))
    return MarkovModel(poi_count=vocab.poi_count, transitions=transitions, popularity=popularity)


def mc_predict(model: MarkovModel, last_poi: int, k: int) -> list[int]:
    """Successors by probability, padded with popularity, never repeating.

    Ties break by popularity rank then poi id; an unseen last POI falls back
    to pure popularity.
    """
    k = min(k, model.poi_count)
    pop_rank = {p: i for i, p in enumerate(model.popularity)}
    row = model.transitions.get(last_poi, {})
    ranked = sorted(row, key=lambda p: (-row[p], pop_rank.get(p, model.poi_count), p))
    out = ranked[:k]
    if len(out) < k:
        seen = set(out)
        for p in model.popularity:
            if p not in seen:
                out.append(p)
                if len(out) == k:
                    break
    return out


def mc_rank_fn(model: MarkovModel):
    def rank(prefix: list[CheckIn]) -> list[int]:
        return mc_predict(model, prefix[-1].poi, model.poi_count)

    return rank
