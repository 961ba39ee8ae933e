"""Miniature fixtures for the gradcheck command: every loss in the package,
built small enough that exhaustive finite differences stay fast.

Each fixture returns a fresh tape per call and reseeds its sampler, so the
loss is a deterministic function of the store parameters.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from . import linkpred as lp
from . import ntp as ntp_mod
from . import rulereg
from .diffcore import EmbeddingStore
from .kb import PairSpace, parse_kb, parse_templates, instantiate_templates
from .ntp import NTPConfig, Prover
from .training import binary_fact_triples, build_bundle


def _pair_fixture(seed=0):
    kb = parse_kb(
        "works(anna, acme).\n"
        "works(ben, acme).\n"
        "leads(anna, acme).\n"
        "knows(ben, anna).\n"
        "knows(cora, ben).\n"
        "works(cora, beta).\n"
    )
    pairs = PairSpace(kb)
    vocab = lp.PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 3, seed=seed)
    return kb, pairs, vocab, store


def _ntp_fixture(model, seed=3):
    kb = parse_kb(
        "fatherOf(abe, homer).\n"
        "parentOf(homer, bart).\n"
        "parentOf(homer, lisa).\n"
        "grandpaOf(abe, bart).\n"
    )
    templates = parse_templates("1 #1(X, Y) :- #2(X, Z), #3(Z, Y).")
    from .diffcore import TrainConfig

    bundle = build_bundle(model, kb, 3, templates=templates,
                          ntp_config=NTPConfig(depth=2, k_max=64),
                          train_config=TrainConfig(seed=seed))
    return bundle


def fixtures(negative_control=False):
    """(name, store, loss_fn, tol) tuples for grad_check."""
    out = []

    # plain dot-product loss: effectively exact under central differences
    store0 = EmbeddingStore(["a", "b"], 5, seed=1)

    def dot_loss():
        tape = dc.Tape()
        return dc.dot(store0.lookup(tape, 0), store0.lookup(tape, 1))

    out.append(("dot", store0, dot_loss, 1e-6))

    kb, pairs, vocab, store1 = _pair_fixture()
    facts = [t for t, _ in binary_fact_triples(kb)]

    def nll_fn():
        tape = dc.Tape()
        t = facts[0]
        prob = lp.score_mf(tape, store1, vocab, t.s, pairs.index(t.i, t.j))
        loss = lp.nll_loss(prob, 1)
        other = lp.score_mf(tape, store1, vocab, facts[1].s, pairs.index(facts[1].i, facts[1].j))
        return dc.add(loss, lp.nll_loss(other, 0))

    out.append(("nll", store1, nll_fn, 1e-4))

    def bpr_fn():
        tape = dc.Tape()
        rng = np.random.default_rng(7)
        t = facts[0]
        neg = lp.sample_bpr_negative(kb, pairs, t, rng)
        return lp.bpr_loss(tape, store1, vocab, pairs.index(t.i, t.j), neg, t.s, 0.01, 0.01)

    out.append(("bpr", store1, bpr_fn, 1e-4))

    rules_kb = parse_kb("leads(X, Y) :- works(X, Y).", symbols=kb.symbols)

    def joint_fn():
        tape = dc.Tape()
        rng = np.random.default_rng(11)

        def score(t):
            return lp.score_mf(tape, store1, vocab, t.s, pairs.index(t.i, t.j))

        return rulereg.joint_loss(tape, kb, rules_kb.rules, score, pairs, rng,
                                  l2=0.01, store=store1)

    out.append(("joint-rules", store1, joint_fn, 1e-4))

    store_fs = EmbeddingStore(vocab.names(), 3, seed=5)

    def fs_fn():
        tape = dc.Tape()
        rng = np.random.default_rng(13)
        t = facts[2]
        neg = lp.sample_bpr_negative(kb, pairs, t, rng)
        return lp.bpr_loss(tape, store_fs, vocab, pairs.index(t.i, t.j), neg, t.s,
                           0.01, 0.01, restrict=True)

    out.append(("fs", store_fs, fs_fn, 1e-4))

    works = kb.symbols.predicate_index("works")
    leads = kb.symbols.predicate_index("leads")

    def fsl_fn():
        tape = dc.Tape()
        imp = rulereg.LiftedImplication(works, leads, margin=0.05)
        hinge = rulereg.lifted_implication_loss(tape, store_fs, vocab, imp)
        return dc.add(hinge, fs_fn_on(tape))

    def fs_fn_on(tape):
        rng = np.random.default_rng(13)
        t = facts[2]
        neg = lp.sample_bpr_negative(kb, pairs, t, rng)
        return lp.bpr_loss(tape, store_fs, vocab, pairs.index(t.i, t.j), neg, t.s,
                           0.01, 0.01, restrict=True)

    out.append(("fsl", store_fs, fsl_fn, 1e-4))

    bundle_ntp = _ntp_fixture("ntp")

    def ntp_fn():
        rng = np.random.default_rng(17)
        batch = binary_fact_triples(bundle_ntp.kb)[:2]
        loss, _ = ntp_mod.ntp_batch_loss(bundle_ntp.prover, batch, rng)
        return loss

    out.append(("ntp", bundle_ntp.store, ntp_fn, 1e-4))

    bundle_lam = _ntp_fixture("ntp-lambda", seed=9)

    def ntp_lambda_fn():
        rng = np.random.default_rng(19)
        batch = binary_fact_triples(bundle_lam.kb)[:2]
        loss, _ = ntp_mod.ntp_batch_loss(bundle_lam.prover, batch, rng,
                                         complex_aux=True, aux_weight=1.0)
        return loss

    out.append(("ntp-lambda", bundle_lam.store, ntp_lambda_fn, 1e-4))

    if negative_control:
        store_bad = EmbeddingStore(["x"], 4, seed=21)

        def broken_loss():
            tape = dc.Tape()
            v = store_bad.lookup(tape, 0)
            sq = dc.mul(v, v)
            # deliberately wrong vjp: sign-flipped upstream
            bad = tape._record(sq.value.sum(), (sq,), lambda g: (-np.full(sq.value.shape, float(g)),))
            return bad

        out.append(("sign-flip-control", store_bad, broken_loss, 1e-4))
    return out
