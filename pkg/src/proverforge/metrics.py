"""Ranking evaluation under the corruption-filtered protocol: MRR, HITS@m,
AUC-PR (average precision), and (weighted) MAP.

All metrics depend only on score order, so raw model scores feed them
directly.  Exact score ties in ranking use the mean rank of the tie group,
which removes seed-order luck; AUC-PR is average precision with ties broken
by stable input order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RankingResult:
    ranks: list = field(default_factory=list)  # 1-based, possibly fractional on ties
    per_fact: list = field(default_factory=list)  # (triple key, score, rank, n candidates)

    @property
    def mrr(self):
        return float(np.mean([1.0 / r for r in self.ranks])) if self.ranks else 0.0

    def hits(self, m):
        if not self.ranks:
            return 0.0
        return float(np.mean([r <= m for r in self.ranks]))

    def summary(self):
        return {
            "MRR": self.mrr,
            "HITS@1": self.hits(1),
            "HITS@3": self.hits(3),
            "HITS@10": self.hits(10),
        }


def corruption_candidates(fact, kb, n_constants=None):
    """The fact plus every single-argument corruption that is not in the KB.
    The true fact is always candidate 0."""
    s, i, j = fact
    n = n_constants if n_constants is not None else kb.symbols.n_constants
    cands = [(s, i, j)]
    for c in range(n):
        if c != i and not kb.has_fact_key(s, c, j):
            cands.append((s, c, j))
    for c in range(n):
        if c != j and not kb.has_fact_key(s, i, c):
            cands.append((s, i, c))
    return cands


def rank_of_first(scores):
    """1-based rank of candidate 0 among `scores`: one plus the number of
    strictly higher candidates plus half the exact ties."""
    target = scores[0]
    rest = scores[1:]
    higher = int(np.sum(rest > target))
    ties = int(np.sum(rest == target))
    return 1.0 + higher + 0.5 * ties


def rank_fact(score_fn, fact, kb):
    """Filtered rank of one test fact.  `score_fn` maps an (N, 3) int array
    of candidate triples to an (N,) score array."""
    cands = corruption_candidates(fact, kb)
    scores = np.asarray(score_fn(np.array(cands, dtype=np.int64)), dtype=np.float64)
    return rank_of_first(scores), len(cands), float(scores[0])


def rank_all(score_fn, facts, kb):
    result = RankingResult()
    for fact in facts:
        rank, n_cands, score = rank_fact(score_fn, fact, kb)
        result.ranks.append(rank)
        result.per_fact.append((fact, score, rank, n_cands))
    return result


def mrr_hits(ranks):
    """(MRR, HITS@1, HITS@3, HITS@10) from a list of 1-based ranks."""
    if not ranks:
        raise ValueError("empty rank list")
    ranks = np.asarray(ranks, dtype=np.float64)
    mrr = float(np.mean(1.0 / ranks))
    return mrr, *(float(np.mean(ranks <= m)) for m in (1, 3, 10))


# --------------------------------------------------------------------------
# Precision/recall
# --------------------------------------------------------------------------

@dataclass
class PRCurve:
    points: list  # (recall, precision) after each prediction, score-sorted
    auc: float  # step integral of precision over recall

    @classmethod
    def from_predictions(cls, scored, positives):
        order = _score_order(scored)
        n_pos = len(positives)
        if n_pos == 0:
            raise ValueError("no positives")
        tp = 0
        points = []
        auc = 0.0
        prev_recall = 0.0
        for rank, idx in enumerate(order, start=1):
            hit = scored[idx][1] in positives
            if hit:
                tp += 1
            recall = tp / n_pos
            precision = tp / rank
            points.append((recall, precision))
            if hit:
                auc += (recall - prev_recall) * precision
                prev_recall = recall
        return cls(points, auc)


def _score_order(scored):
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    return np.argsort(-scores, kind="stable")


def auc_pr(scored, positives):
    """Average precision: the mean over positives of the precision at their
    rank, with ties broken by stable input order.  Positives missing from
    the prediction list contribute zero."""
    if not positives:
        raise ValueError("no positives")
    order = _score_order(scored)
    tp = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if scored[idx][1] in positives:
            tp += 1
            total += tp / rank
    return total / len(positives)


def average_precision_at_facts(scored, positives):
    return auc_pr(scored, positives)


def map_weighted(per_relation):
    """MAP and weighted MAP over {relation: (scored predictions, positive
    set)}.  MAP averages each relation's average precision; weighted MAP
    weights it by the relation's number of true facts.  Relations with zero
    test facts are skipped with a warning."""
    aps = []
    weights = []
    for rel, (scored, positives) in per_relation.items():
        if not positives:
            log.warning("relation %s has zero test facts; skipped", rel)
            continue
        aps.append(auc_pr(scored, positives))
        weights.append(len(positives))
    if not aps:
        raise ValueError("no relation with test facts")
    aps = np.asarray(aps)
    weights = np.asarray(weights, dtype=np.float64)
    return float(aps.mean()), float((aps * weights).sum() / weights.sum())


# --------------------------------------------------------------------------
# Output formats
# --------------------------------------------------------------------------

def metrics_tsv(values):
    return "".join(f"{k}\t{v:.6f}\n" for k, v in values.items())


def metrics_json(values, extra=None):
    out = dict(values)
    if extra:
        out.update(extra)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def ranks_dump(result, kb):
    """Per-fact ranks for regression diffing."""
    lines = []
    for (s, i, j), score, rank, n_cands in result.per_fact:
        name = f"{kb.symbols.predicates[s]}({kb.symbols.constants[i]}, {kb.symbols.constants[j]})"
        lines.append(f"{name}\t{score:.6f}\t{rank:g}\t{n_cands}\n")
    return "".join(lines)
