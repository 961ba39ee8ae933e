"""Model construction, training loops, and evaluation glue shared by the
CLI, the demos, and the acceptance suite.

Every model is trained with the shared Adam optimizer; models whose loss
carries its own l2 terms (the BPR family) run Adam with l2 disabled so the
penalty is not applied twice.  All loops are deterministic given the seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from . import linkpred as lp
from . import ntp as ntp_mod
from . import rulereg
from .diffcore import EmbeddingStore, TrainConfig, adam_step
from .kb import PairSpace, instantiate_templates
from .metrics import auc_pr
from .ntp import NTPConfig, Prover

log = logging.getLogger(__name__)

MODELS = ("mf", "distmult", "complex", "transe", "joint-rules", "fs", "fsl", "ntp", "ntp-lambda")
PAIR_MODELS = ("mf", "fs", "fsl", "joint-rules")
NTP_MODELS = ("ntp", "ntp-lambda")


class NumericFailure(RuntimeError):
    """Training produced a non-finite loss."""


def binary_fact_triples(kb):
    """(GroundTriple, kb rule index) for every binary fact."""
    out = []
    for ri, r in enumerate(kb.rules):
        if r.is_fact() and r.head.arity == 2:
            i, j = (t.index for t in r.head.args)
            out.append((lp.GroundTriple(r.head.pred, i, j), ri))
    return out


@dataclass
class ModelBundle:
    model: str
    kb: object  # the working KB (templates already instantiated for NTP models)
    store: EmbeddingStore
    vocab: object
    k: int
    pairs: PairSpace | None = None
    param_rules: list = field(default_factory=list)
    implications: list = field(default_factory=list)
    injected_rules: list = field(default_factory=list)
    prover: Prover | None = None
    ntp_config: NTPConfig | None = None

    def score_fn(self):
        """Batch scorer: (N, 3) int triples -> (N,) scores, for ranking."""
        if self.model in NTP_MODELS:
            return ntp_score_fn(self.prover)
        if self.model == "distmult":
            return lambda T: lp.distmult_scores(self.store, self.vocab, T[:, 0], T[:, 1], T[:, 2])
        if self.model == "complex":
            return lambda T: lp.complex_scores(self.store, self.vocab, T[:, 0], T[:, 1], T[:, 2])
        if self.model == "transe":
            return lambda T: lp.transe_scores(self.store, self.vocab, T[:, 0], T[:, 1], T[:, 2])
        return pair_score_fn(self)

    def pair_prob(self, s, i, j):
        """Probability of a pair-model atom; unobserved pairs score by the
        sigmoid of a zero dot product (0.5) only when the pair exists."""
        idx = self.pairs.get(i, j)
        if idx is None:
            return None
        raw = lp.mf_scores(self.store, self.vocab, [s], [idx], restrict=self.model in ("fs", "fsl"))[0]
        return 1.0 / (1.0 + np.exp(-raw))


def pair_score_fn(bundle):
    restrict = bundle.model in ("fs", "fsl")

    def fn(T):
        out = np.full(len(T), -np.inf)
        rows = []
        keep = []
        for n, (s, i, j) in enumerate(np.asarray(T)):
            idx = bundle.pairs.get(int(i), int(j))
            if idx is not None:
                rows.append((int(s), idx))
                keep.append(n)
        if rows:
            S = np.array([r[0] for r in rows])
            P = np.array([r[1] for r in rows])
            out[np.array(keep)] = lp.mf_scores(bundle.store, bundle.vocab, S, P, restrict=restrict)
        return out

    return fn


def ntp_score_fn(prover, chunk=1024, depth=None):
    vocab = prover.vocab

    def fn(T):
        T = np.asarray(T, dtype=np.int64)
        goals = np.column_stack([T[:, 0], vocab.n_predicates + T[:, 1], vocab.n_predicates + T[:, 2]])
        out = np.empty(len(T))
        for lo in range(0, len(T), chunk):
            tape = dc.Tape()
            scores, _ = prover.goal_scores(tape, goals[lo : lo + chunk], depth=depth)
            out[lo : lo + chunk] = scores.value
        return out

    return fn


def build_bundle(model, kb, k, templates=(), injected_rules=(), ntp_config=None, train_config=None):
    """Assemble the trainable state for one model over one KB."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    cfg = train_config if train_config is not None else TrainConfig()
    ntp_cfg = ntp_config if ntp_config is not None else NTPConfig()
    if templates and model not in NTP_MODELS:
        raise ValueError("rule templates are only valid with ntp/ntp-lambda")
    if injected_rules and model not in ("joint-rules", "fs", "fsl"):
        raise ValueError("injected rules are only valid with joint-rules/fs/fsl")

    init_kwargs = dict(init=cfg.init, seed=cfg.seed, init_range=cfg.init_range)
    if model in PAIR_MODELS:
        pairs = PairSpace(kb)
        vocab = lp.PairVocab(kb.symbols, pairs)
        store = EmbeddingStore(vocab.names(), k, **init_kwargs)
        bundle = ModelBundle(model, kb, store, vocab, k, pairs=pairs)
        if model in ("fs", "fsl", "joint-rules"):
            bundle.injected_rules = list(injected_rules)
        if model == "fsl":
            bundle.implications = rulereg.implications_from_rules(kb, injected_rules)
            rng = np.random.default_rng(cfg.seed + 1)
            rulereg.zero_shot_init(store, vocab, kb, bundle.implications, rng)
        return bundle
    if model in NTP_MODELS:
        param_rules = instantiate_templates(templates, kb.symbols)
        working = kb.with_rules([pr.rule for pr in param_rules])
        vocab = lp.EntityVocab(working.symbols)
        store = EmbeddingStore(vocab.names(), k, complex_pairs=model == "ntp-lambda", **init_kwargs)
        prover = Prover(working, store, ntp_cfg)
        return ModelBundle(
            model, working, store, vocab, k,
            param_rules=param_rules, prover=prover, ntp_config=ntp_cfg,
        )
    vocab = lp.EntityVocab(kb.symbols)
    store = EmbeddingStore(vocab.names(), k, complex_pairs=model == "complex", **init_kwargs)
    return ModelBundle(model, kb, store, vocab, k)


def _batches(items, size, rng):
    order = rng.permutation(len(items))
    for lo in range(0, len(items), size):
        yield [items[i] for i in order[lo : lo + size]]


def train_bundle(bundle, cfg, on_epoch=None):
    """Run the model's training loop for cfg.epochs; returns per-epoch mean
    losses.  Raises NumericFailure on a non-finite loss."""
    rng = np.random.default_rng(cfg.seed)
    facts = binary_fact_triples(bundle.kb)
    history = []
    step = 0
    adam_cfg = replace(cfg, l2_weight=0.0) if bundle.model in PAIR_MODELS else cfg

    for epoch in range(cfg.epochs):
        total_loss = 0.0
        n_terms = 0
        if bundle.model in PAIR_MODELS and bundle.model != "joint-rules":
            step, loss, n = _epoch_bpr(bundle, cfg, adam_cfg, facts, rng, step)
        elif bundle.model == "joint-rules":
            step, loss, n = _epoch_joint(bundle, cfg, adam_cfg, facts, rng, step)
        elif bundle.model in NTP_MODELS:
            step, loss, n = _epoch_ntp(bundle, cfg, facts, rng, step)
        else:
            step, loss, n = _epoch_nll(bundle, cfg, facts, rng, step)
        total_loss += loss
        n_terms += n
        mean = total_loss / max(1, n_terms)
        if not np.isfinite(mean):
            raise NumericFailure(f"non-finite loss at epoch {epoch}: {mean}")
        history.append(mean)
        if on_epoch:
            on_epoch(epoch, mean)
    return history


def _epoch_bpr(bundle, cfg, adam_cfg, facts, rng, step):
    lam = cfg.l2_weight
    restrict = bundle.model in ("fs", "fsl")
    compiled = (rulereg.compile_implications(bundle.vocab, bundle.implications)
                if bundle.model == "fsl" and bundle.implications else None)
    total_loss, n = 0.0, 0
    for batch in _batches(facts, cfg.batch_size, rng):
        rows = []
        for triple, _ in batch:
            neg = lp.sample_bpr_negative(bundle.kb, bundle.pairs, triple, rng)
            if neg is None:
                continue
            rows.append((triple.s, bundle.pairs.index(triple.i, triple.j), neg))
        if not rows:
            continue
        tape = dc.Tape()
        loss = lp.bpr_batch(
            tape, bundle.store, bundle.vocab,
            [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
            lam, lam, restrict=restrict,
        )
        if compiled is not None:
            loss = dc.add(loss, rulereg.lifted_implication_losses(
                tape, bundle.store, bundle.vocab, bundle.implications, compiled=compiled))
        tape.backward(loss)
        step += 1
        adam_step(bundle.store, adam_cfg, step)
        total_loss += float(loss.value)
        n += len(rows)
    return step, total_loss, n


def _epoch_joint(bundle, cfg, adam_cfg, facts, rng, step):
    tape = dc.Tape()

    def score(t):
        return lp.score_mf(tape, bundle.store, bundle.vocab, t.s, bundle.pairs.index(t.i, t.j))

    loss = rulereg.joint_loss(
        tape, bundle.kb, bundle.injected_rules, score, bundle.pairs, rng,
        l2=cfg.l2_weight, store=bundle.store,
    )
    tape.backward(loss)
    step += 1
    adam_step(bundle.store, adam_cfg, step)
    return step, float(loss.value), max(1, len(facts))


def _epoch_nll(bundle, cfg, facts, rng, step):
    batch_known = max(1, cfg.batch_size // 4)
    total_loss, n = 0.0, 0
    for batch in _batches(facts, batch_known, rng):
        triples, targets = [], []
        for triple, _ in batch:
            triples.append(triple)
            targets.append(1.0)
            for corr in lp.sample_ntp_corruptions(bundle.kb, triple, rng):
                triples.append(corr)
                targets.append(0.0)
        tape = dc.Tape()
        y = np.array(targets)
        if bundle.model == "distmult":
            probs = dc.sigmoid(lp.distmult_batch(tape, bundle.store, bundle.vocab, triples))
        elif bundle.model == "complex":
            probs = dc.sigmoid(lp.complex_batch(tape, bundle.store, bundle.vocab, triples))
        else:  # transe: sigmoid(pivot - distance)
            dist = lp.transe_batch(tape, bundle.store, bundle.vocab, triples)
            probs = dc.sigmoid(dc.sub(tape.constant(lp.TRANSE_PIVOT), dist))
        loss = ntp_mod._nll_vector(probs, y)
        tape.backward(loss)
        step += 1
        adam_step(bundle.store, cfg, step)
        if bundle.model == "transe":
            lp.renormalize_entities(bundle.store, bundle.vocab)
        total_loss += float(loss.value)
        n += len(triples)
    return step, total_loss, n


def _epoch_ntp(bundle, cfg, facts, rng, step):
    batch_known = max(1, cfg.batch_size // 5)
    aux = bundle.model == "ntp-lambda" and bundle.ntp_config.aux_weight != 0.0
    total_loss, n = 0.0, 0
    for batch in _batches(facts, batch_known, rng):
        loss, n_atoms = ntp_mod.ntp_batch_loss(
            bundle.prover, batch, rng,
            complex_aux=aux, aux_weight=bundle.ntp_config.aux_weight,
        )
        loss.tape.backward(loss)
        step += 1
        adam_step(bundle.store, cfg, step)
        total_loss += float(loss.value)
        n += n_atoms
    return step, total_loss, n


def centroid_init_params(bundle, rng, noise=0.05):
    """Re-initialize parameterized-predicate rows at the centroid of the
    known predicate embeddings plus noise.

    Xavier places a fresh rule predicate far from the predicate cluster, so
    every proof through it starts with a low kernel and loses the max-pool
    argmax race before it can receive gradient; starting at the centroid
    keeps template paths competitive without preferring any predicate."""
    syms = bundle.kb.symbols
    known = syms.known_predicates()
    params = [p for p in range(syms.n_predicates) if syms.is_parameterized(p)]
    if not params or not known:
        return
    for matrix in (bundle.store.real, bundle.store.imag):
        if matrix is None:
            continue
        centroid = matrix[known].mean(axis=0)
        for p in params:
            matrix[p] = centroid + rng.normal(scale=noise, size=bundle.k)


# --------------------------------------------------------------------------
# Evaluation helpers
# --------------------------------------------------------------------------

def countries_auc(bundle, task, split="test"):
    """AUC-PR over the (held-out country x region) target grid."""
    countries = task.test if split == "test" else task.dev
    queries = task.queries(countries)
    positives = task.positives(countries)
    T = np.array([(task.train.symbols.predicate_index("locatedIn"), c, r) for c, r in queries])
    scores = bundle.score_fn()(T)
    scored = [(float(s), q) for s, q in zip(scores, queries)]
    return auc_pr(scored, positives)


def filtered_ranking(bundle, test_facts, filter_kb):
    """MRR/HITS ranking of test facts against single-argument corruptions
    absent from the (train + dev + test) filter KB."""
    from .metrics import rank_all

    return rank_all(bundle.score_fn(), [t.key() for t, _ in test_facts], filter_kb)


def relation_map(bundle, train_kb, test_facts):
    """Per-relation average-precision inputs for MAP/wMAP: candidates are
    all observed pairs not already train facts of the relation."""
    per_relation = {}
    rels = sorted({t.s for t, _ in test_facts})
    for s in rels:
        positives = {(t.i, t.j) for t, _ in test_facts if t.s == s}
        cands = [
            (i, j)
            for (i, j) in bundle.pairs.pairs
            if not train_kb.has_fact_key(s, i, j)
        ]
        T = np.array([(s, i, j) for i, j in cands], dtype=np.int64)
        scores = bundle.score_fn()(T)
        per_relation[s] = ([(float(sc), pair) for sc, pair in zip(scores, cands)], positives)
    return per_relation
