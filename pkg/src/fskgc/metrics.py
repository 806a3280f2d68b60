"""Filtered ranking metrics: MRR and Hits@N."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HITS_AT = (1, 5, 10)


def gold_rank(scores: np.ndarray, candidate_ids: np.ndarray, gold: int) -> int:
    """1 + #strictly higher scores + #equal scores held by a smaller candidate id."""
    scores = np.asarray(scores)
    candidate_ids = np.asarray(candidate_ids)
    hit = np.flatnonzero(candidate_ids == gold)
    if hit.size == 0:
        raise KeyError(f"gold tail {gold} is not among the candidates")
    s = scores[hit[0]]
    higher = int(np.count_nonzero(scores > s))
    tied_before = int(np.count_nonzero((scores == s) & (candidate_ids < gold)))
    return 1 + higher + tied_before


def filter_candidates(candidate_ids, gold: int, filtered_truths) -> np.ndarray:
    """Drop known-true tails other than the gold."""
    cands = np.asarray(candidate_ids)
    drop = [t for t in filtered_truths if t != gold]
    if not drop:
        return cands
    return cands[~np.isin(cands, drop)]


@dataclass
class EvalReport:
    mrr: float
    hits_at: dict
    n_queries: int
    per_relation: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @classmethod
    def from_ranks(cls, ranks, per_relation: dict | None = None, wall_time: float = 0.0) -> "EvalReport":
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size == 0:
            return cls(0.0, {n: 0.0 for n in HITS_AT}, 0, per_relation or {}, wall_time)
        hits = {n: float(np.mean(ranks <= n)) for n in HITS_AT}
        return cls(float(np.mean(1.0 / ranks)), hits, int(ranks.size), per_relation or {}, wall_time)

    def summary(self) -> dict:
        return {"mrr": self.mrr, "hits1": self.hits_at[1], "hits5": self.hits_at[5], "hits10": self.hits_at[10],
                "queries": self.n_queries}

    def to_json(self) -> str:
        payload = {
            "MRR": self.mrr,
            "Hits@1": self.hits_at[1],
            "Hits@5": self.hits_at[5],
            "Hits@10": self.hits_at[10],
            "queries": self.n_queries,
            "wall_time": round(self.wall_time, 3),
            "per_relation": self.per_relation,
        }
        return json.dumps(payload, indent=2)
