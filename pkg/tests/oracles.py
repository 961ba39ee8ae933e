"""Independent brute-force oracles used by the test suite.

These deliberately avoid the production code paths: the derivation oracle
enumerates fully ground rule instances and recurses over derivation trees
with explicit depth and used-rule bookkeeping (no unification machinery),
and the closure oracle iterates ground instances to convergence.
"""

from __future__ import annotations

import itertools

import numpy as np

from proverforge.kb import Atom, Const, KnowledgeBase, Rule, Var


def atom_key(atom):
    return (atom.pred,) + tuple(t.index for t in atom.args)


def ground_instances(kb):
    """Fully ground every variable-bearing rule over all constants."""
    n = kb.symbols.n_constants
    out = []
    for ri, rule in enumerate(kb.rules):
        if rule.is_fact():
            continue
        names = rule.variables()
        for combo in itertools.product(range(n), repeat=len(names)):
            binding = dict(zip(names, combo))

            def g(atom):
                return (atom.pred,) + tuple(
                    binding[t.name] if isinstance(t, Var) else t.index for t in atom.args
                )

            out.append((g(rule.head), [g(a) for a in rule.body], ri, rule.has_vars()))
    return out


class DerivationOracle:
    """Depth-bounded provability with the same path semantics as the
    backward chainer: facts need depth >= 1, a rule application proves its
    body atoms sequentially at depth - 1, the used-rule set threads through
    the whole derivation, and a variable-bearing rule appears at most once
    per derivation."""

    def __init__(self, kb):
        self.n_constants = kb.symbols.n_constants
        self.facts = {atom_key(r.head) for r in kb.facts()}
        self.instances = ground_instances(kb)
        self.by_head = {}
        for inst in self.instances:
            self.by_head.setdefault(inst[0], []).append(inst)
        self._memo = {}

    def _prove_atom(self, key, d, used):
        mk = (key, d, used)
        if mk in self._memo:
            return self._memo[mk]
        self._memo[mk] = set()  # cycle guard during recursion
        results = set()
        if d >= 1 and key in self.facts:
            results.add(used)
        if d >= 2:
            for head, body, ri, restricted in self.by_head.get(key, ()):
                if restricted and ri in used:
                    continue
                used2 = used | {ri} if restricted else used
                results |= self._prove_seq(tuple(body), d - 1, used2)
        self._memo[mk] = results
        return results

    def _prove_seq(self, keys, d, used):
        if not keys:
            return {used}
        out = set()
        for u in self._prove_atom(keys[0], d, used):
            out |= self._prove_seq(keys[1:], d, u)
        return out

    def provable(self, atom, depth):
        return bool(self._prove_atom(atom_key(atom), depth, frozenset()))

    def answers(self, query, depth):
        """All groundings of the query's variables that are provable."""
        names = [t.name for t in query.args if isinstance(t, Var)]
        uniq = list(dict.fromkeys(names))
        out = set()
        for combo in itertools.product(range(self.n_constants), repeat=len(uniq)):
            binding = dict(zip(uniq, combo))
            args = tuple(
                Const(binding[t.name]) if isinstance(t, Var) else t for t in query.args
            )
            if self.provable(Atom(query.pred, args), depth):
                out.add(tuple(binding[v] for v in uniq))
        return out


def naive_closure(kb):
    """Iterate ground rule instances to convergence; returns fact keys."""
    facts = {atom_key(r.head) for r in kb.facts()}
    instances = ground_instances(kb)
    changed = True
    while changed:
        changed = False
        for head, body, _, _ in instances:
            if head not in facts and all(b in facts for b in body):
                facts.add(head)
                changed = True
    return facts


# --------------------------------------------------------------------------
# Random KB generation
# --------------------------------------------------------------------------

_BODY_SHAPES = [
    [("B0", "X", "Y")],
    [("B0", "Y", "X")],
    [("B0", "X", "Z"), ("B1", "Z", "Y")],
    [("B0", "X", "Y"), ("B1", "X", "Y")],
    [("B0", "X", "Z"), ("B1", "Y", "Z")],
]


def random_kb(rng, max_facts=30, max_rules=5, n_preds=4, n_consts=5):
    """A random binary-predicate KB in the benchmark style: ground facts
    plus definite rules drawn from common variable patterns."""
    kb = KnowledgeBase()
    syms = kb.symbols
    preds = [syms.intern_predicate(f"r{i}", 2) for i in range(n_preds)]
    consts = [syms.intern_constant(f"e{i}") for i in range(n_consts)]
    rules = []
    seen = set()
    for _ in range(int(rng.integers(1, max_facts + 1))):
        key = (int(rng.choice(preds)), int(rng.choice(consts)), int(rng.choice(consts)))
        if key in seen:
            continue
        seen.add(key)
        rules.append(Rule(Atom(key[0], (Const(key[1]), Const(key[2])))))
    for ri in range(int(rng.integers(0, max_rules + 1))):
        shape = _BODY_SHAPES[int(rng.integers(0, len(_BODY_SHAPES)))]
        head_pred = int(rng.choice(preds))
        body_preds = {f"B{i}": int(rng.choice(preds)) for i in range(2)}
        suffix = f"_{ri}"

        def mk(slot, a, b):
            return Atom(body_preds[slot] if slot.startswith("B") else slot,
                        (Var(a + suffix), Var(b + suffix)))

        head = Atom(head_pred, (Var("X" + suffix), Var("Y" + suffix)))
        body = tuple(mk(s, a, b) for s, a, b in shape)
        rules.append(Rule(head, body))
    return KnowledgeBase(syms, rules)


def random_queries(kb, rng, n=5):
    """Ground query atoms, biased toward derivable ones."""
    closure = list(naive_closure(kb))
    syms = kb.symbols
    out = []
    for _ in range(n):
        if closure and rng.random() < 0.6:
            key = closure[int(rng.integers(0, len(closure)))]
        else:
            key = (
                int(rng.integers(0, syms.n_predicates)),
                int(rng.integers(0, syms.n_constants)),
                int(rng.integers(0, syms.n_constants)),
            )
        out.append(Atom(key[0], (Const(key[1]), Const(key[2]))))
    return out


def fd_gradient(f, x, step=1e-5):
    """Central finite differences of a scalar function over a flat array."""
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        up = f()
        x.flat[i] = orig - step
        down = f()
        x.flat[i] = orig
        g.flat[i] = (up - down) / (2 * step)
    return g
