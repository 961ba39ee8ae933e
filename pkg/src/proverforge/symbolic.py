"""Discrete backward-chaining prover plus forward-closure inference.

The prover is a depth-first OR/AND search.  OR unifies a goal with every rule
head (facts are body-less rules) and recurses into the body via AND; the
depth counter decrements on each OR call issued from AND, and AND fails at
depth 0.  Proofs are kept cycle-free by never applying the same
variable-bearing rule twice on one proof path; the used-rule set threads
through the whole proof, so a rule consumed while proving one body atom is
unavailable to its siblings.

FAIL is a value (None), not an error: unprovable queries simply yield no
substitutions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .kb import Atom, Const, KnowledgeBase, Rule, Var

FAIL = None


def walk(term, subst):
    """Resolve a term through the substitution until a non-variable or an
    unbound variable is reached."""
    while isinstance(term, Var):
        nxt = subst.get(term.name)
        if nxt is None:
            return term
        term = nxt
    return term


def unify(h, g, subst):
    """Unify two atoms under a substitution; returns the extended
    substitution or FAIL.  FAIL input propagates.  Variables on the first
    atom bind first, mirroring unify(head, goal) in the OR step."""
    if subst is FAIL:
        return FAIL
    if h.pred != g.pred or h.arity != g.arity:
        return FAIL
    out = dict(subst)
    for th, tg in zip(h.args, g.args):
        th = walk(th, out)
        tg = walk(tg, out)
        if isinstance(th, Var):
            if not (isinstance(tg, Var) and tg.name == th.name):
                out[th.name] = tg
        elif isinstance(tg, Var):
            out[tg.name] = th
        elif th != tg:
            return FAIL
    return out


# The head-first unification entry point under its interface name.
unify_symbolic = unify


def substitute(atom, subst):
    """Replace bound variables in an atom, resolving bindings transitively;
    unbound variables pass through."""
    return Atom(atom.pred, tuple(walk(t, subst) for t in atom.args))


@dataclass
class Proof:
    substitution: dict  # query variable name -> Const (only grounding proofs)
    rule_sequence: tuple  # 0-based indices into kb.rules, in application order
    full_substitution: dict


@dataclass
class ProofResult:
    substitutions: list  # distinct grounding substitutions, discovery order
    proofs: list  # every successful proof, with its rule-application trace

    def __bool__(self):
        return bool(self.proofs)


def prove(kb, query, max_depth):
    """All proofs of `query` up to `max_depth`, in rule-order/fact-order
    sequence (deterministic).  Returns the distinct substitutions that ground
    the query variables, plus the per-proof rule-application traces."""
    restricted = [r.has_vars() for r in kb.rules]
    qvars = [t.name for t in query.args if isinstance(t, Var)]

    def _or(goal, depth, subst, used, trace):
        if depth <= 0:
            return
        for ri, rule in enumerate(kb.rules):
            if restricted[ri] and ri in used:
                continue
            s2 = unify(rule.head, goal, subst)
            if s2 is FAIL:
                continue
            used2 = used | {ri} if restricted[ri] else used
            yield from _and(rule.body, depth, s2, used2, trace + (ri,))

    def _and(subgoals, depth, subst, used, trace):
        if depth <= 0:
            return
        if not subgoals:
            yield subst, used, trace
            return
        first = substitute(subgoals[0], subst)
        for s2, u2, t2 in _or(first, depth - 1, subst, used, trace):
            yield from _and(subgoals[1:], depth, s2, u2, t2)

    proofs = []
    substitutions = []
    seen = set()
    for subst, _, trace in _or(query, max_depth, {}, frozenset(), ()):
        grounding = {}
        ground = True
        for v in qvars:
            val = walk(Var(v), subst)
            if isinstance(val, Const):
                grounding[v] = val
            else:
                ground = False
                break
        proofs.append(Proof(grounding if ground else {}, trace, subst))
        if ground:
            key = tuple(grounding[v].index for v in qvars)
            if key not in seen:
                seen.add(key)
                substitutions.append(grounding)
    return ProofResult(substitutions, proofs)


def format_substitution(kb, grounding):
    """Render a grounding like ``{Q1/abe, Q2/lisa}``."""
    items = ", ".join(f"{v}/{kb.symbols.constants[c.index]}" for v, c in grounding.items())
    return "{" + items + "}"


# --------------------------------------------------------------------------
# Forward inference
# --------------------------------------------------------------------------

def _match_body(atoms, subst, fact_sets, symbols):
    """Yield substitutions grounding `atoms` against the current fact sets."""
    if not atoms:
        yield subst
        return
    atom = substitute(atoms[0], subst)
    for args in fact_sets.get(atom.pred, ()):
        s2 = dict(subst)
        ok = True
        for t, c in zip(atom.args, args):
            t = walk(t, s2)
            if isinstance(t, Var):
                s2[t.name] = Const(c)
            elif t.index != c:
                ok = False
                break
        if ok:
            yield from _match_body(atoms[1:], s2, fact_sets, symbols)


def forward_closure(kb, rules=None):
    """Repeatedly add head facts whose bodies are satisfied by the current
    facts until fixpoint; returns the extended KB.  Terminates because the
    Herbrand base is finite and the operator is monotone."""
    if rules is None:
        rules = [r for r in kb.rules if r.body]
    fact_sets = {}
    for r in kb.facts():
        fact_sets.setdefault(r.head.pred, set()).add(tuple(t.index for t in r.head.args))
    n_constants = kb.symbols.n_constants
    changed = True
    new_facts = []
    while changed:
        changed = False
        for rule in rules:
            for subst in list(_match_body(rule.body, {}, fact_sets, kb.symbols)):
                head = substitute(rule.head, subst)
                free = [i for i, t in enumerate(head.args) if isinstance(t, Var)]
                if free:
                    combos = itertools.product(range(n_constants), repeat=len(free))
                else:
                    combos = [()]
                for combo in combos:
                    args = list(head.args)
                    for pos, c in zip(free, combo):
                        args[pos] = Const(c)
                    key = tuple(t.index for t in args)
                    bucket = fact_sets.setdefault(head.pred, set())
                    if key not in bucket:
                        bucket.add(key)
                        new_facts.append(Rule(Atom(head.pred, tuple(args))))
                        changed = True
    return kb.with_rules(new_facts)


def post_inference(score_fn, kb, rules, threshold, candidates=None):
    """Score-thresholded forward inference over known and predicted facts.

    Atoms scoring >= threshold count as true; rules fire over the true set
    and a derived head receives max(own score, min of its body scores).  The
    min rule is this artifact's documented propagation choice (the source
    protocol specifies only that inference runs over predicted facts).
    Returns the score overlay as {(pred, arg indices...): score}.
    """
    if candidates is None:
        pairs = sorted(
            {tuple(t.index for t in r.head.args) for r in kb.facts() if r.head.arity == 2}
        )
        candidates = [
            Atom(p, tuple(Const(c) for c in pair))
            for p in range(kb.symbols.n_predicates)
            if kb.symbols.pred_arity[p] == 2
            for pair in pairs
        ]
    overlay = {}
    for atom in candidates:
        overlay[KnowledgeBase._key(atom)] = float(score_fn(atom))
    true_sets = {}
    for key, score in overlay.items():
        if score >= threshold:
            true_sets.setdefault(key[0], set()).add(key[1:])
    changed = True
    while changed:
        changed = False
        for rule in rules:
            for subst in list(_match_body(rule.body, {}, true_sets, kb.symbols)):
                head = substitute(rule.head, subst)
                if not head.is_ground():
                    continue
                body_score = min(
                    overlay[KnowledgeBase._key(substitute(a, subst))] for a in rule.body
                )
                key = KnowledgeBase._key(head)
                if body_score > overlay.get(key, 0.0):
                    overlay[key] = body_score
                    if body_score >= threshold:
                        bucket = true_sets.setdefault(head.pred, set())
                        if key[1:] not in bucket:
                            bucket.add(key[1:])
                    changed = True
    return overlay
