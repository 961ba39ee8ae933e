"""Differentiable propositional-rule losses with stochastic grounding, and
lifted implication injection over predicate representations.

Connective semantics (product t-norm family), over ground-atom probabilities
in [0, 1]:

    [not g]   = 1 - [g]
    [a and b] = [a] [b]
    [a or b]  = [a] + [b] - [a] [b]
    [b => h]  = [b]([h] - 1) + 1

The conjunction carries the usual conditional-independence caveat:
[f and f] = [f]^2 < [f] for 0 < [f] < 1.  That is accepted behavior, not a
bug; the lifted path below avoids it for plain implications.

Lifted injection (models FS/FSL): constant-pair vectors pass through an
elementwise sigmoid so they live in (0,1)^k, and an implication body => head
becomes a hinge on the componentwise ordering of the two predicate vectors:
sum_i max(0, v_body_i - v_head_i + eps).  Once head >= body + eps holds
componentwise the gradient is zero, and the implication then holds for every
non-negative pair representation -- cost independent of the constant domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .kb import Var
from .linkpred import GroundTriple, mf_raw, mf_scores, nll_loss, sample_bpr_negative

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.01


# --------------------------------------------------------------------------
# Propositional formulas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundAtom:
    triple: GroundTriple


@dataclass(frozen=True)
class Not:
    f: object


@dataclass(frozen=True)
class And:
    a: object
    b: object


@dataclass(frozen=True)
class Or:
    a: object
    b: object


@dataclass(frozen=True)
class Implies:
    body: object
    head: object


def prob_formula(score_fn, formula):
    """Differentiable probability of a propositional formula whose leaves are
    ground atoms; `score_fn(triple)` must yield a [0,1]-valued node."""
    if isinstance(formula, GroundAtom):
        return score_fn(formula.triple)
    if isinstance(formula, Not):
        g = prob_formula(score_fn, formula.f)
        return dc.sub(g.tape.constant(1.0), g)
    if isinstance(formula, And):
        return dc.mul(prob_formula(score_fn, formula.a), prob_formula(score_fn, formula.b))
    if isinstance(formula, Or):
        a = prob_formula(score_fn, formula.a)
        b = prob_formula(score_fn, formula.b)
        return dc.sub(dc.add(a, b), dc.mul(a, b))
    if isinstance(formula, Implies):
        b = prob_formula(score_fn, formula.body)
        h = prob_formula(score_fn, formula.head)
        return dc.add(dc.mul(b, dc.sub(h, h.tape.constant(1.0))), h.tape.constant(1.0))
    raise TypeError(f"not a formula: {formula!r}")


# --------------------------------------------------------------------------
# First-order grounding
# --------------------------------------------------------------------------

def _rule_vars(rule):
    names = rule.variables()
    if len(names) > 2:
        raise ValueError(f"rule has {len(names)} free variables; grounding is over constant pairs")
    return names


def _ground_atom(atom, binding):
    args = []
    for t in atom.args:
        if isinstance(t, Var):
            args.append(binding[t.name])
        else:
            args.append(t.index)
    if len(args) == 1:
        args = args * 2  # unary atoms score as reflexive pairs
    return GroundTriple(atom.pred, args[0], args[1])


def ground_rule(rule, pairs):
    """One propositional formula per constant pair, free variables bound
    positionally (first variable to the first pair element).  The loss
    contribution of the grounded set is sum of -log [F_ij]."""
    names = _rule_vars(rule)
    out = []
    for ci, cj in pairs:
        binding = dict(zip(names, (ci, cj)))
        head = GroundAtom(_ground_atom(rule.head, binding))
        if not rule.body:
            out.append(head)
            continue
        body = GroundAtom(_ground_atom(rule.body[0], binding))
        for atom in rule.body[1:]:
            body = And(body, GroundAtom(_ground_atom(atom, binding)))
        out.append(Implies(body, head))
    return out


def grounding_loss(score_fn, formulas):
    terms = [dc.neg(dc.clamped_log(prob_formula(score_fn, f))) for f in formulas]
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = dc.add(acc, t)
    return acc


def _atom_known(kb, atom, binding):
    t = _ground_atom(atom, binding)
    return kb.has_fact_key(t.s, t.i, t.j)


def stochastic_grounding(rule, kb, pairs, rng):
    """Grounding pairs for one rule: every observed-co-occurring pair for
    which at least one atom is a known fact under substitution, plus an
    equal number of sampled pairs (without replacement) for which all atoms
    are unknown.  Degenerate KBs may exhaust the unknown pool and return
    fewer samples."""
    names = _rule_vars(rule)
    matched = []
    unknown = []
    for ci, cj in pairs.pairs:
        binding = dict(zip(names, (ci, cj)))
        if any(_atom_known(kb, a, binding) for a in rule.atoms()):
            matched.append((ci, cj))
        else:
            unknown.append((ci, cj))
    take = min(len(matched), len(unknown))
    sampled = []
    if take:
        sel = rng.choice(len(unknown), size=take, replace=False)
        sampled = [unknown[int(i)] for i in sel]
    return matched + sampled


def joint_loss(tape, kb, rules, score_fn, pairs, rng, rule_weight=1.0, l2=0.0, store=None):
    """The Joint objective: NLL over known facts (target 1), one sampled
    unobserved fact per known fact (target 0), and stochastically grounded
    rule formulas (target 1), plus optional l2 over the whole store."""
    terms = []
    for fact in kb.facts():
        if fact.head.arity != 2:
            continue
        i, j = (t.index for t in fact.head.args)
        t = GroundTriple(fact.head.pred, i, j)
        terms.append(nll_loss(score_fn(t), 1))
        neg_idx = sample_bpr_negative(kb, pairs, t, rng)
        if neg_idx is not None:
            m, n = pairs.pairs[neg_idx]
            terms.append(nll_loss(score_fn(GroundTriple(t.s, m, n)), 0))
    for rule in rules:
        grounded = ground_rule(rule, stochastic_grounding(rule, kb, pairs, rng))
        gl = grounding_loss(score_fn, grounded)
        if gl is not None:
            terms.append(dc.scale(gl, rule_weight))
    acc = terms[0]
    for t in terms[1:]:
        acc = dc.add(acc, t)
    if l2 > 0.0 and store is not None:
        reg = dc.sq_norm(store.lookup(tape, np.arange(store.n_symbols)))
        if store.complex_pairs:
            reg = dc.add(reg, dc.sq_norm(store.lookup_imag(tape, np.arange(store.n_symbols))))
        acc = dc.add(acc, dc.scale(reg, l2))
    return acc


# --------------------------------------------------------------------------
# Lifted implication injection (FS / FSL)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedImplication:
    body: int  # predicate index
    head: int  # predicate index
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")


def implications_from_rules(kb, rules):
    """Validate injectable clauses for the lifted path: single-atom body,
    binary atoms, argument variables aligned positionally."""
    out = []
    for r in rules:
        if len(r.body) != 1:
            raise ValueError(f"lifted injection needs single-atom bodies: {kb.rule_str(r)}")
        if r.head.arity != 2 or r.body[0].arity != 2:
            raise ValueError(f"lifted injection needs binary atoms: {kb.rule_str(r)}")
        if r.head.args != r.body[0].args:
            raise ValueError(
                f"head and body arguments must align positionally: {kb.rule_str(r)}"
            )
        out.append(LiftedImplication(r.body[0].pred, r.head.pred))
    return out


def restrict_pairs_sigmoid(store, vocab):
    """Scoring wrapper for model FS: pair embeddings pass through an
    elementwise sigmoid before the dot product."""

    class _FS:
        def raw(self, tape, s, pair_idx):
            return mf_raw(tape, store, vocab, s, pair_idx, restrict=True)

        def prob(self, tape, s, pair_idx):
            return dc.sigmoid(self.raw(tape, s, pair_idx))

        def batch(self, S, pair_indices):
            return mf_scores(store, vocab, S, pair_indices, restrict=True)

    return _FS()


def lifted_implication_loss(tape, store, vocab, imp):
    """Hinge sum_i max(0, v_body_i - v_head_i + eps); zero loss and zero
    gradient once the componentwise ordering holds with margin."""
    vb = store.lookup(tape, vocab.pred_row(imp.body))
    vh = store.lookup(tape, vocab.pred_row(imp.head))
    return dc.total(dc.relu(dc.add(dc.sub(vb, vh), tape.constant(imp.margin))))


def compile_implications(vocab, imps):
    """Row/margin arrays for the vectorized hinge, built once per run."""
    body_rows = np.array([vocab.pred_row(im.body) for im in imps], dtype=np.int64)
    head_rows = np.array([vocab.pred_row(im.head) for im in imps], dtype=np.int64)
    margins = np.array([im.margin for im in imps])[:, None]
    return body_rows, head_rows, margins


def lifted_implication_losses(tape, store, vocab, imps, compiled=None):
    """All hinge losses in one vectorized term, so per-epoch cost is flat in
    the number of rules."""
    if not imps:
        return tape.constant(0.0)
    body_rows, head_rows, margins = compiled if compiled is not None else compile_implications(vocab, imps)
    vb = store.lookup(tape, body_rows)
    vh = store.lookup(tape, head_rows)
    return dc.total(dc.relu(dc.add(dc.sub(vb, vh), tape.constant(margins))))


def zero_shot_init(store, vocab, kb, imps, rng, low=-8.1, high=-7.9):
    """Predicates that appear only as implication heads and have no training
    facts start from strongly negative vectors: with no negative facts their
    components can only rise through the hinge, so a high start would freeze
    the ordering."""
    with_facts = {r.head.pred for r in kb.facts()}
    bodies = {im.body for im in imps}
    for im in imps:
        if im.head not in with_facts and im.head not in bodies:
            row = vocab.pred_row(im.head)
            store.real[row] = rng.uniform(low, high, size=store.k)
