"""Local neural link prediction: matrix factorization over entity pairs,
DistMult, ComplEx, and TransE scorers; BPR and negative log-likelihood
training losses; negative/corruption sampling.

Scorers come in two flavors with identical semantics: tape-node builders
(`*_raw`) used inside losses and gradient checks, and vectorized numpy
scorers (`*_scores`) used by ranking evaluation, which needs no gradients.

Raw scores feed ranking directly (metrics are rank-based, so any monotone
transform is irrelevant); probabilities are sigmoid(raw) for the dot-product
family and sigmoid(pivot - distance) for TransE, which is only ever a scorer
here, never the headline model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .kb import PairSpace

log = logging.getLogger(__name__)

TRANSE_PIVOT = 1.0


@dataclass(frozen=True)
class GroundTriple:
    s: int  # predicate index
    i: int  # subject constant index
    j: int  # object constant index

    def key(self):
        return (self.s, self.i, self.j)


@dataclass(frozen=True)
class ScoredTriple:
    triple: GroundTriple
    score: float
    probability: float


class EntityVocab:
    """Row layout for entity-level stores: predicates first, then constants."""

    def __init__(self, symbols):
        self.symbols = symbols
        self.n_predicates = symbols.n_predicates
        self.n_constants = symbols.n_constants

    def pred_row(self, p):
        if not 0 <= p < self.n_predicates:
            raise KeyError(f"unknown predicate index {p}")
        return p

    def const_row(self, c):
        if not 0 <= c < self.n_constants:
            raise KeyError(f"unknown constant index {c}")
        return self.n_predicates + c

    def names(self):
        return [f"p:{n}" for n in self.symbols.predicates] + [
            f"c:{n}" for n in self.symbols.constants
        ]

    def __len__(self):
        return self.n_predicates + self.n_constants


class PairVocab:
    """Row layout for pair-level stores: predicates first, then observed
    constant pairs (the derived pair index space)."""

    def __init__(self, symbols, pairs):
        self.symbols = symbols
        self.pairs = pairs
        self.n_predicates = symbols.n_predicates

    def pred_row(self, p):
        if not 0 <= p < self.n_predicates:
            raise KeyError(f"unknown predicate index {p}")
        return p

    def pair_row(self, pair_idx):
        if not 0 <= pair_idx < len(self.pairs):
            raise KeyError(f"unknown pair index {pair_idx}")
        return self.n_predicates + pair_idx

    def names(self):
        return [f"p:{n}" for n in self.symbols.predicates] + [
            f"pp:{n}" for n in self.pairs.names(self.symbols)
        ]

    def __len__(self):
        return self.n_predicates + len(self.pairs)


# --------------------------------------------------------------------------
# Tape-node scorers
# --------------------------------------------------------------------------

def mf_raw(tape, store, vocab, s, pair_idx, restrict=False):
    """v_s . v_ij (matrix factorization); with `restrict`, the pair vector
    passes through an elementwise sigmoid first (model FS)."""
    vs = store.lookup(tape, vocab.pred_row(s))
    vp = store.lookup(tape, vocab.pair_row(pair_idx))
    if restrict:
        vp = dc.sigmoid(vp)
    return dc.dot(vs, vp)


def score_mf(tape, store, vocab, s, pair_idx, restrict=False):
    """Truth estimate sigmoid(v_s . v_ij)."""
    return dc.sigmoid(mf_raw(tape, store, vocab, s, pair_idx, restrict))


def distmult_raw(tape, store, vocab, s, i, j):
    """Trilinear dot product sum_k v_sk v_ik v_jk (raw; caller squashes)."""
    vs = store.lookup(tape, vocab.pred_row(s))
    vi = store.lookup(tape, vocab.const_row(i))
    vj = store.lookup(tape, vocab.const_row(j))
    return dc.total(dc.mul(dc.mul(vs, vi), vj))


def complex_raw(tape, store, vocab, s, i, j):
    """The four-term real expression of the complex trilinear score, over
    (real, imaginary) parts stored as two real vectors."""
    rs = store.lookup(tape, vocab.pred_row(s))
    ri = store.lookup(tape, vocab.const_row(i))
    rj = store.lookup(tape, vocab.const_row(j))
    ms = store.lookup_imag(tape, vocab.pred_row(s))
    mi = store.lookup_imag(tape, vocab.const_row(i))
    mj = store.lookup_imag(tape, vocab.const_row(j))
    t1 = dc.total(dc.mul(dc.mul(rs, ri), rj))
    t2 = dc.total(dc.mul(dc.mul(rs, mi), mj))
    t3 = dc.total(dc.mul(dc.mul(ms, ri), mj))
    t4 = dc.total(dc.mul(dc.mul(ms, mi), rj))
    return dc.add(dc.add(t1, t2), dc.sub(t3, t4))


def transe_raw(tape, store, vocab, s, i, j):
    """||v_i + v_s - v_j||_1: a distance, smaller is better."""
    vs = store.lookup(tape, vocab.pred_row(s))
    vi = store.lookup(tape, vocab.const_row(i))
    vj = store.lookup(tape, vocab.const_row(j))
    return dc.l1norm(dc.sub(dc.add(vi, vs), vj))


def transe_probability(tape, store, vocab, s, i, j, pivot=TRANSE_PIVOT):
    return dc.sigmoid(dc.sub(tape.constant(pivot), transe_raw(tape, store, vocab, s, i, j)))


# Raw-score surfaces under their interface names: the trilinear, complex,
# and translation scorers hand back raw values (ranking is order-based;
# callers squash when a probability is needed).
score_distmult = distmult_raw
score_complex = complex_raw
score_transe = transe_raw


def renormalize_entities(store, vocab):
    """Project entity rows back to unit L2 norm (TransE constraint, applied
    after each optimizer step)."""
    rows = store.real[vocab.n_predicates :]
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    np.maximum(norms, 1e-12, out=norms)
    rows /= norms


# Batched node builders (training paths: one tape op chain per mini-batch).

def _batch_rows(tape, store, vocab, triples, part="real"):
    S = np.array([t.s for t in triples])
    I = np.array([vocab.n_predicates + t.i for t in triples])
    J = np.array([vocab.n_predicates + t.j for t in triples])
    look = store.lookup if part == "real" else store.lookup_imag
    return look(tape, S), look(tape, I), look(tape, J)


def distmult_batch(tape, store, vocab, triples):
    P, Ci, Cj = _batch_rows(tape, store, vocab, triples)
    return dc.row_total(dc.mul(dc.mul(P, Ci), Cj))


def complex_batch(tape, store, vocab, triples):
    P, Ci, Cj = _batch_rows(tape, store, vocab, triples)
    Pm, Cim, Cjm = _batch_rows(tape, store, vocab, triples, part="imag")
    t1 = dc.row_total(dc.mul(dc.mul(P, Ci), Cj))
    t2 = dc.row_total(dc.mul(dc.mul(P, Cim), Cjm))
    t3 = dc.row_total(dc.mul(dc.mul(Pm, Ci), Cjm))
    t4 = dc.row_total(dc.mul(dc.mul(Pm, Cim), Cj))
    return dc.add(dc.add(t1, t2), dc.sub(t3, t4))


def transe_batch(tape, store, vocab, triples):
    """Rowwise l1 distances ||v_i + v_s - v_j||_1."""
    P, Ci, Cj = _batch_rows(tape, store, vocab, triples)
    return dc.row_total(dc.absolute(dc.sub(dc.add(Ci, P), Cj)))


# --------------------------------------------------------------------------
# Vectorized numpy scorers (evaluation paths; no gradients)
# --------------------------------------------------------------------------

def _rows(store, vocab, S, I, J):
    P = store.real[np.asarray(S)]
    Ci = store.real[vocab.n_predicates + np.asarray(I)]
    Cj = store.real[vocab.n_predicates + np.asarray(J)]
    return P, Ci, Cj


def distmult_scores(store, vocab, S, I, J):
    P, Ci, Cj = _rows(store, vocab, S, I, J)
    return (P * Ci * Cj).sum(axis=1)


def complex_scores(store, vocab, S, I, J):
    P, Ci, Cj = _rows(store, vocab, S, I, J)
    Pm = store.imag[np.asarray(S)]
    Cim = store.imag[vocab.n_predicates + np.asarray(I)]
    Cjm = store.imag[vocab.n_predicates + np.asarray(J)]
    return (
        (P * Ci * Cj).sum(axis=1)
        + (P * Cim * Cjm).sum(axis=1)
        + (Pm * Ci * Cjm).sum(axis=1)
        - (Pm * Cim * Cj).sum(axis=1)
    )


def transe_scores(store, vocab, S, I, J):
    """Negated distance, so that higher is better for ranking."""
    P, Ci, Cj = _rows(store, vocab, S, I, J)
    return -np.abs(Ci + P - Cj).sum(axis=1)


def mf_scores(store, vocab, S, pair_indices, restrict=False):
    P = store.real[np.asarray(S)]
    Q = store.real[vocab.n_predicates + np.asarray(pair_indices)]
    if restrict:
        Q = 1.0 / (1.0 + np.exp(-Q))
    return (P * Q).sum(axis=1)


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def nll_loss(prob_node, target):
    """-target log p - (1 - target) log(1 - p), with p clamped away from the
    endpoints before the log."""
    one = prob_node.tape.constant(1.0)
    if target == 1:
        return dc.neg(dc.clamped_log(prob_node))
    if target == 0:
        return dc.neg(dc.clamped_log(dc.sub(one, prob_node)))
    t = float(target)
    return dc.neg(
        dc.add(
            dc.scale(dc.clamped_log(prob_node), t),
            dc.scale(dc.clamped_log(dc.sub(one, prob_node)), 1.0 - t),
        )
    )


def bpr_loss(tape, store, vocab, known_pair_idx, neg_pair_idx, s, lam_p, lam_c, restrict=False):
    """-log sigmoid(raw(known) - raw(negative)) plus l2 penalties on the
    relation and both pair representations.  The relation-frequency weight
    w_s is implicit: negatives are resampled per epoch, so relations with
    more facts draw proportionally more samples."""
    raw_known = mf_raw(tape, store, vocab, s, known_pair_idx, restrict)
    raw_neg = mf_raw(tape, store, vocab, s, neg_pair_idx, restrict)
    loss = dc.neg(dc.clamped_log(dc.sigmoid(dc.sub(raw_known, raw_neg))))
    vs = store.lookup(tape, vocab.pred_row(s))
    vij = store.lookup(tape, vocab.pair_row(known_pair_idx))
    vmn = store.lookup(tape, vocab.pair_row(neg_pair_idx))
    reg = dc.add(
        dc.scale(dc.sq_norm(vs), lam_p),
        dc.scale(dc.add(dc.sq_norm(vij), dc.sq_norm(vmn)), lam_c),
    )
    return dc.add(loss, reg)


def bpr_batch(tape, store, vocab, S, known_pairs, neg_pairs, lam_p, lam_c, restrict=False):
    """Vectorized BPR over a batch: sum of -log sigmoid(raw+ - raw-) plus
    the l2 terms of eq-style regularization (penalties act on the raw pair
    vectors even under the sigmoid restriction)."""
    vs = store.lookup(tape, np.asarray(S))
    vij = store.lookup(tape, vocab.n_predicates + np.asarray(known_pairs))
    vmn = store.lookup(tape, vocab.n_predicates + np.asarray(neg_pairs))
    tij, tmn = (dc.sigmoid(vij), dc.sigmoid(vmn)) if restrict else (vij, vmn)
    diff = dc.sub(dc.row_total(dc.mul(vs, tij)), dc.row_total(dc.mul(vs, tmn)))
    loss = dc.neg(dc.total(dc.clamped_log(dc.sigmoid(diff))))
    reg = dc.add(
        dc.scale(dc.sq_norm(vs), lam_p),
        dc.scale(dc.add(dc.sq_norm(vij), dc.sq_norm(vmn)), lam_c),
    )
    return dc.add(loss, reg)


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def sample_bpr_negative(kb, pairs, triple, rng, budget=200):
    """An entity pair (e_m, e_n) with r_s(e_m, e_n) unobserved, drawn from
    the observed pair set; None when every pair is observed for the relation
    (caller skips the fact)."""
    n = len(pairs)
    s = triple.s
    for _ in range(budget):
        idx = int(rng.integers(0, n))
        m, nn = pairs.pairs[idx]
        if not kb.has_fact_key(s, m, nn):
            return idx
    for idx in rng.permutation(n):
        m, nn = pairs.pairs[int(idx)]
        if not kb.has_fact_key(s, m, nn):
            return int(idx)
    return None


def sample_ntp_corruptions(kb, triple, rng, budget=100):
    """Up to three corrupted ground atoms per known fact: corrupted subject,
    corrupted object, and corrupted both, each absent from the KB.  A slot
    whose retry budget is exhausted is skipped with a warning."""
    n = kb.symbols.n_constants
    out = []

    def draw(fix_i, fix_j):
        both = not fix_i and not fix_j
        for _ in range(budget):
            i = triple.i if fix_i else int(rng.integers(0, n))
            j = triple.j if fix_j else int(rng.integers(0, n))
            if both and (i == triple.i or j == triple.j):
                continue
            if not kb.has_fact_key(triple.s, i, j):
                return GroundTriple(triple.s, i, j)
        log.warning(
            "corruption sampling exhausted for %s (fix_i=%s fix_j=%s)", triple, fix_i, fix_j
        )
        return None

    for fix_i, fix_j in ((False, True), (True, False), (False, False)):
        cand = draw(fix_i, fix_j)
        if cand is not None:
            out.append(cand)
    return out


def observed_pairspace(kb):
    return PairSpace(kb)
