import itertools
import math

import numpy as np
import pytest

from proverforge import diffcore as dc
from proverforge import linkpred as lp
from proverforge import rulereg as rr
from proverforge.diffcore import EmbeddingStore, TrainConfig, adam_step, grad_check
from proverforge.kb import PairSpace, parse_kb
from proverforge.linkpred import GroundTriple, PairVocab
from proverforge.rulereg import And, GroundAtom, Implies, LiftedImplication, Not, Or, prob_formula


def _leaf_scorer(tape, values):
    """score_fn mapping triple s-index to a fixed leaf probability."""

    def fn(triple):
        return tape.constant(values[triple.s])

    return fn


def _eval(formula, values):
    tape = dc.Tape()
    return prob_formula(_leaf_scorer(tape, values), formula).item()


A0, A1, A2 = (GroundAtom(GroundTriple(s, 0, 1)) for s in range(3))


def test_connective_boolean_corners_exhaustive():
    """Product t-norm connectives reproduce two-valued logic on every
    formula with at most three leaves."""

    def shapes():
        yield Not(A0), lambda v: 1 - v[0]
        yield And(A0, A1), lambda v: v[0] and v[1]
        yield Or(A0, A1), lambda v: v[0] or v[1]
        yield Implies(A0, A1), lambda v: (not v[0]) or v[1]
        yield And(A0, And(A1, A2)), lambda v: v[0] and v[1] and v[2]
        yield Or(A0, Or(A1, A2)), lambda v: v[0] or v[1] or v[2]
        yield Implies(And(A0, A1), A2), lambda v: (not (v[0] and v[1])) or v[2]
        yield Or(Not(A0), And(A1, A2)), lambda v: (not v[0]) or (v[1] and v[2])
        yield Implies(Or(A0, A1), Not(A2)), lambda v: (not (v[0] or v[1])) or (not v[2])

    for formula, truth in shapes():
        for corner in itertools.product([0.0, 1.0], repeat=3):
            got = _eval(formula, corner)
            assert got == pytest.approx(float(truth(corner)), abs=1e-12), (formula, corner)


def test_implication_hand_value():
    # [b] = 0.8, [h] = 0.3: 0.8 * (0.3 - 1) + 1 = 0.44, exact
    assert _eval(Implies(A0, A1), (0.8, 0.3)) == pytest.approx(0.44, abs=1e-12)


def test_double_negation_identity():
    for v in np.linspace(0, 1, 7):
        assert _eval(Not(Not(A0)), (v,)) == pytest.approx(v)


def test_de_morgan_or_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.random(2)
        got = _eval(Or(A0, A1), (a, b))
        assert got == pytest.approx(1 - (1 - a) * (1 - b), abs=1e-14)


def test_conjunction_independence_caveat():
    # documented behavior, not a bug: [f and f] < [f] strictly inside (0,1)
    for v in (0.2, 0.5, 0.9):
        assert _eval(And(A0, A0), (v,)) < v


# -- grounding ---------------------------------------------------------------------

def _ground_setup():
    kb = parse_kb("p(a, b).\np(c, d).\nq(e, f).\n")
    rule = parse_kb("t(X, Y) :- p(X, Y).", symbols=kb.symbols).rules[0]
    return kb, rule


def test_ground_rule_one_formula_per_pair():
    kb, rule = _ground_setup()
    pairs = [(0, 1), (2, 3), (4, 5)]
    formulas = rr.ground_rule(rule, pairs)
    assert len(formulas) == 3
    assert all(isinstance(f, Implies) for f in formulas)


def test_ground_rule_matches_hand_substitution():
    kb, rule = _ground_setup()
    (f,) = rr.ground_rule(rule, [(2, 3)])
    t = kb.symbols.predicate_index("t")
    p = kb.symbols.predicate_index("p")
    assert f.head.triple == GroundTriple(t, 2, 3)
    assert f.body.triple == GroundTriple(p, 2, 3)


def test_ground_rule_empty_pairs():
    kb, rule = _ground_setup()
    assert rr.ground_rule(rule, []) == []
    tape = dc.Tape()
    assert rr.grounding_loss(lambda tr: tape.constant(0.5), []) is None


def test_ground_rule_rejects_three_variables():
    kb = parse_kb("p(a, b).")
    rule = parse_kb("t(X, Y) :- p(X, Z), p(Z, Y).", symbols=kb.symbols).rules[0]
    with pytest.raises(ValueError, match="variables"):
        rr.ground_rule(rule, [(0, 1)])


def test_stochastic_grounding_enumeration():
    kb = parse_kb("p(a, b).\np(c, d).\nq(e, f).\nq(g, h).\n")
    pairs = PairSpace(kb)
    rule = parse_kb("t(X, Y) :- p(X, Y).", symbols=kb.symbols).rules[0]
    rng = np.random.default_rng(0)
    got = rr.stochastic_grounding(rule, kb, pairs, rng)
    syms = kb.symbols
    ab = (syms.constant_index("a"), syms.constant_index("b"))
    cd = (syms.constant_index("c"), syms.constant_index("d"))
    assert got[:2] == [ab, cd]  # matched pairs, in pair order
    assert len(got) == 4  # plus an equal number of all-unknown pairs
    assert set(got[2:]).isdisjoint({ab, cd})


def test_stochastic_grounding_exhaustion_and_determinism():
    kb = parse_kb("p(a, b).\np(c, d).\n")
    pairs = PairSpace(kb)
    rule = parse_kb("t(X, Y) :- p(X, Y).", symbols=kb.symbols).rules[0]
    got = rr.stochastic_grounding(rule, kb, pairs, np.random.default_rng(0))
    assert len(got) == 2  # every pair satisfies an atom: no unknown pool
    kb2 = parse_kb("p(a, b).\nq(c, d).\nq(e, f).\nq(g, h).\n")
    pairs2 = PairSpace(kb2)
    rule2 = parse_kb("t(X, Y) :- p(X, Y).", symbols=kb2.symbols).rules[0]
    a = rr.stochastic_grounding(rule2, kb2, pairs2, np.random.default_rng(1))
    b = rr.stochastic_grounding(rule2, kb2, pairs2, np.random.default_rng(1))
    assert a == b


# -- joint loss -------------------------------------------------------------------

def test_joint_loss_without_rules_reduces_to_fact_objective():
    kb = parse_kb("p(a, b).\np(c, d).\nq(a, b).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 3, seed=0)

    def build(rules, seed):
        tape = dc.Tape()

        def score(t):
            return lp.score_mf(tape, store, vocab, t.s, pairs.index(t.i, t.j))

        return rr.joint_loss(tape, kb, rules, score, pairs, np.random.default_rng(seed)).item()

    assert build([], 5) == pytest.approx(build([], 5))
    fact_only = build([], 5)
    # reference: NLL over known facts plus matched negatives, built by hand
    tape = dc.Tape()
    rng = np.random.default_rng(5)
    terms = 0.0
    for r in kb.facts():
        t = GroundTriple(r.head.pred, r.head.args[0].index, r.head.args[1].index)
        prob = lp.score_mf(tape, store, vocab, t.s, pairs.index(t.i, t.j))
        terms += lp.nll_loss(prob, 1).item()
        neg = lp.sample_bpr_negative(kb, pairs, t, rng)
        if neg is not None:
            m, n = pairs.pairs[neg]
            terms += lp.nll_loss(
                lp.score_mf(tape, store, vocab, t.s, pairs.index(m, n)), 0).item()
    assert fact_only == pytest.approx(terms)


def test_joint_loss_gradcheck_two_rules_six_facts():
    kb = parse_kb("p(a, b).\np(c, d).\nq(a, b).\nq(e, f).\nr(c, d).\nr(e, f).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 3, seed=1)
    rules = parse_kb("q(X, Y) :- p(X, Y).\nr(X, Y) :- q(X, Y).\n", symbols=kb.symbols).rules

    def loss():
        tape = dc.Tape()

        def score(t):
            return lp.score_mf(tape, store, vocab, t.s, pairs.index(t.i, t.j))

        return rr.joint_loss(tape, kb, rules, score, pairs, np.random.default_rng(3),
                             l2=0.01, store=store)

    assert grad_check(loss, store, tol=1e-4).passed


# -- FS / FSL ------------------------------------------------------------------------

def test_restricted_pairs_live_in_unit_cube():
    kb = parse_kb("p(a, b).\nq(c, d).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 4, seed=2)
    store.real[vocab.pair_row(0)] = [-20.0, 20.0, 0.0, 3.0]
    transformed = 1 / (1 + np.exp(-store.real[vocab.pair_row(0)]))
    assert np.all((transformed > 0) & (transformed < 1))
    store.real[vocab.pair_row(1)] = 0.0
    fs = rr.restrict_pairs_sigmoid(store, vocab)
    t = dc.Tape()
    raw_zero = fs.raw(t, 0, 1).item()
    # all-0.5 transformed pair: raw = 0.5 * sum(v_s)
    assert raw_zero == pytest.approx(0.5 * store.real[vocab.pred_row(0)].sum())


def test_fs_gradcheck_through_nested_sigmoid():
    kb = parse_kb("p(a, b).\nq(c, d).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 3, seed=3)

    def loss():
        tape = dc.Tape()
        return lp.bpr_loss(tape, store, vocab, 0, 1, 0, 0.01, 0.01, restrict=True)

    assert grad_check(loss, store, tol=1e-4).passed


def test_lifted_loss_hand_arithmetic():
    kb = parse_kb("b(a, c).\nh(a, c).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 2, seed=4)
    b, h = kb.symbols.predicate_index("b"), kb.symbols.predicate_index("h")
    store.real[vocab.pred_row(b)] = [0.5, 0.2]
    store.real[vocab.pred_row(h)] = [0.6, 0.1]
    t = dc.Tape()
    loss = rr.lifted_implication_loss(t, store, vocab, LiftedImplication(b, h, margin=0.01))
    assert loss.item() == pytest.approx(0.11)


def test_lifted_loss_zero_when_satisfied():
    kb = parse_kb("b(a, c).\nh(a, c).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 3, seed=5)
    b, h = 0, 1
    store.real[vocab.pred_row(b)] = [0.1, 0.2, 0.3]
    store.real[vocab.pred_row(h)] = [0.5, 0.6, 0.7]
    t = dc.Tape()
    loss = rr.lifted_implication_loss(t, store, vocab, LiftedImplication(b, h))
    assert loss.item() == 0.0
    t.backward(loss)
    assert np.all(store.g_real == 0.0)


def test_lifted_losses_vectorized_matches_sum():
    kb = parse_kb("b(a, c).\nh(a, c).\nm(a, c).\n")
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 4, seed=6)
    imps = [LiftedImplication(0, 1), LiftedImplication(1, 2), LiftedImplication(0, 2)]
    t = dc.Tape()
    vec = rr.lifted_implication_losses(t, store, vocab, imps).item()
    singles = sum(rr.lifted_implication_loss(t, store, vocab, im).item() for im in imps)
    assert vec == pytest.approx(singles)


def test_implication_validation():
    kb = parse_kb("p(a, b).\nq(a, b).\nu(a).\n")
    good = parse_kb("q(X, Y) :- p(X, Y).", symbols=kb.symbols).rules
    assert rr.implications_from_rules(kb, good)[0].body == kb.symbols.predicate_index("p")
    with pytest.raises(ValueError, match="single-atom"):
        rr.implications_from_rules(
            kb, parse_kb("q(X, Y) :- p(X, Y), p(Y, X).", symbols=kb.symbols).rules)
    with pytest.raises(ValueError, match="align"):
        rr.implications_from_rules(
            kb, parse_kb("q(X, Y) :- p(Y, X).", symbols=kb.symbols).rules)


def test_fsl_training_reaches_monotone_ordering():
    """After the hinge hits zero, head scores dominate body scores for any
    non-negative pair representation (the lifted guarantee)."""
    kb = parse_kb("\n".join(f"b(x{i}, y{i})." for i in range(8)))
    rules = parse_kb("h(X, Y) :- b(X, Y).", symbols=kb.symbols).rules
    pairs = PairSpace(kb)
    vocab = PairVocab(kb.symbols, pairs)
    store = EmbeddingStore(vocab.names(), 5, seed=7)
    imps = rr.implications_from_rules(kb, rules)
    cfg = TrainConfig(learning_rate=0.05, l2_weight=0.0, epochs=120, seed=0)
    rng = np.random.default_rng(0)
    facts = [(r.head.pred, pairs.index(r.head.args[0].index, r.head.args[1].index))
             for r in kb.facts()]
    for step in range(1, cfg.epochs + 1):
        t = dc.Tape()
        S, KP, NP = [], [], []
        for s, pidx in facts:
            i, j = pairs.pairs[pidx]
            neg = lp.sample_bpr_negative(kb, pairs, GroundTriple(s, i, j), rng)
            if neg is not None:
                S.append(s), KP.append(pidx), NP.append(neg)
        loss = rr.lifted_implication_losses(t, store, vocab, imps)
        if S:
            loss = dc.add(loss, lp.bpr_batch(t, store, vocab, S, KP, NP, 0.01, 0.01, restrict=True))
        t.backward(loss)
        adam_step(store, cfg, step)
    b, h = (kb.symbols.predicate_index(x) for x in "bh")
    vb = store.real[vocab.pred_row(b)]
    vh = store.real[vocab.pred_row(h)]
    t = dc.Tape()
    assert rr.lifted_implication_loss(t, store, vocab, imps[0]).item() == 0.0
    assert np.all(vh >= vb)  # componentwise ordering achieved
    rng = np.random.default_rng(42)
    for _ in range(1000):
        ep = 1 / (1 + np.exp(-rng.normal(size=5)))  # any sigmoid-restricted pair
        assert vh @ ep >= vb @ ep
