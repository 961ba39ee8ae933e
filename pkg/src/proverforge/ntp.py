"""End-to-end differentiable prover.

The discrete backward chainer's control flow is kept, but symbol equality is
replaced by an RBF kernel over symbol representations: unification extends a
substitution set symbolically while min-chaining kernel values into a
differentiable success score.  OR unifies a goal with every rule head (facts
form per-arity blocks that unify in one batched matrix operation), AND walks
rule bodies with the depth counter decrementing on each nested OR, and the
overall proof success is the max over all non-failing proof states.

Goals are proven in batches: a proof state carries a `rows` array mapping
its entries back to the original goals, substitutions bind variables either
to single symbols or to per-row index vectors, and per-goal reductions
(Kmax truncation, the final max aggregation) operate along `rows`.

Training-time fact masking zeroes the unification-success entries of each
goal's own row in the fact blocks (identified by fact index, never by value
equality); rule-head unifications are never masked.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import batch_unify  # re-exported: pairwise unification success
from .kb import Const, Var
from .linkpred import EntityVocab, GroundTriple, nll_loss, sample_ntp_corruptions

log = logging.getLogger(__name__)

FAIL = None
DEFAULT_MU = 1.0 / math.sqrt(2.0)


@dataclass
class NTPConfig:
    depth: int = 2
    k_max: int = 10
    mu: float = DEFAULT_MU
    one_hot_scale: float = 10.0  # test-only discrete-limit construction
    aux_weight: float = 1.0
    # Exact-mode accelerator: merge state rows of one goal whose bindings
    # coincide, keeping the max success.  Score-preserving (min-chains are
    # monotone in upstream success) but collapses the proof-state multiset,
    # so it stays off unless a caller only needs scores.
    merge_paths: bool = False

    def __post_init__(self):
        if self.depth < 1 or self.k_max < 1:
            raise ValueError("depth and k_max must be >= 1")


# Runtime terms: variables stay symbolic; non-variables are embedding rows,
# either one shared row or a per-state-row index vector.
@dataclass(frozen=True)
class NVar:
    name: str


@dataclass(frozen=True)
class NSym:
    row: int


class NBatch:
    __slots__ = ("rows",)

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=np.int64)


@dataclass
class ProofState:
    rows: np.ndarray  # (R,) original-goal index per state row
    subst: dict  # var name -> NVar | NSym | NBatch
    success: object  # diffcore Node, shape (R,)
    used: frozenset = frozenset()  # rule indices consumed on this path

    @property
    def size(self):
        return len(self.rows)


def walk_term(term, subst):
    while isinstance(term, NVar):
        nxt = subst.get(term.name)
        if nxt is None:
            return term
        term = nxt
    return term


def _repeat_term(term, f):
    if isinstance(term, NBatch):
        return NBatch(np.repeat(term.rows, f))
    return term


def _take_term(term, sel):
    if isinstance(term, NBatch):
        return NBatch(term.rows[sel])
    return term


@dataclass
class _FactBlock:
    arity: int
    rule_idx: np.ndarray  # (F,) indices into kb.rules
    cols: np.ndarray  # (F, arity + 1) embedding rows: predicate then args


@dataclass
class _CompiledRule:
    index: int
    head: tuple  # terms (NSym/NVar)
    body: tuple  # tuple of term tuples
    restricted: bool  # variable-bearing rules may be used once per path


class Prover:
    """Proof-graph builder over one KB and one embedding store.

    The compiled structure (fact blocks, rule terms) is built once and
    reused for every goal batch; the operation tape is fresh per call.
    """

    def __init__(self, kb, store, config=None):
        self.kb = kb
        self.store = store
        self.config = config if config is not None else NTPConfig()
        self.vocab = EntityVocab(kb.symbols)
        self._compile()

    def emb_row(self, term):
        if isinstance(term, Const):
            return self.vocab.const_row(term.index)
        raise TypeError(f"cannot embed {term!r}")

    def _compile(self):
        per_arity = {}
        rules = []
        for ri, rule in enumerate(self.kb.rules):
            if rule.is_fact():
                per_arity.setdefault(rule.head.arity, []).append((ri, rule.head))
                continue
            rules.append(
                _CompiledRule(
                    ri,
                    self._terms(rule.head),
                    tuple(self._terms(a) for a in rule.body),
                    rule.has_vars(),
                )
            )
        self.fact_blocks = {}
        for arity, items in per_arity.items():
            idx = np.array([ri for ri, _ in items], dtype=np.int64)
            cols = np.array(
                [[self.vocab.pred_row(a.pred)] + [self.emb_row(t) for t in a.args] for _, a in items],
                dtype=np.int64,
            )
            self.fact_blocks[arity] = _FactBlock(arity, idx, cols)
        self.rules = rules

    def _terms(self, atom):
        out = [NSym(self.vocab.pred_row(atom.pred))]
        for t in atom.args:
            out.append(NVar(t.name) if isinstance(t, Var) else NSym(self.emb_row(t)))
        return tuple(out)

    # -- public entry points ------------------------------------------------

    def goal_scores(self, tape, goals, mask=None, depth=None, k_max=None):
        """Proof success for a (G, arity+1) array of ground goals given as
        embedding rows; returns a (G,) node.  `mask` is an optional (G,)
        array of kb fact indices to hide per goal (-1 for none).  Goals with
        no non-failing proof score exactly 0 and receive no gradient."""
        goals = np.asarray(goals, dtype=np.int64)
        run = _Run(self, tape, mask, k_max or self.config.k_max)
        goal = tuple(NBatch(goals[:, p]) for p in range(goals.shape[1]))
        init = ProofState(
            rows=np.arange(len(goals)), subst={}, success=tape.constant(np.ones(len(goals)))
        )
        states = run.or_module(goal, depth or self.config.depth, init)
        return self._aggregate(tape, states, len(goals)), states

    def prove(self, tape, goal_terms, depth=None, k_max=None):
        """Proof states for a single goal whose terms may include variables;
        returns the list of final states (rows index the single goal)."""
        run = _Run(self, tape, None, k_max or self.config.k_max)
        init = ProofState(rows=np.zeros(1, dtype=np.int64), subst={}, success=tape.constant(np.ones(1)))
        return run.or_module(tuple(goal_terms), depth or self.config.depth, init)

    def _aggregate(self, tape, states, n_goals):
        if not states:
            return tape.constant(np.zeros(n_goals))
        successes = dc.concat([s.success for s in states])
        rows = np.concatenate([s.rows for s in states])
        return dc.segment_max(successes, rows, n_goals, default=0.0)


class _Run:
    """One proving invocation: shared tape, optional per-goal fact mask."""

    def __init__(self, prover, tape, mask, k_max):
        self.p = prover
        self.tape = tape
        self.mask = None if mask is None else np.asarray(mask, dtype=np.int64)
        self.k_max = k_max
        self.mu = prover.config.mu
        self._lookup_cache = {}

    def _rows_lookup(self, rows):
        """Embedding lookup keyed by the index array, so repeated
        unifications against the same columns share one node (and one
        scatter-add on the backward pass)."""
        key = rows.tobytes()
        node = self._lookup_cache.get(key)
        if node is None:
            node = self.p.store.lookup_unify(self.tape, rows)
            self._lookup_cache[key] = node
        return node

    def _lookup(self, term):
        if isinstance(term, NSym):
            return self._rows_lookup(np.array([term.row]))
        return self._rows_lookup(term.rows)

    def _pair_kernel(self, a, b, n_rows):
        """Kernel node between two walked non-variable terms, shaped to
        broadcast against an (R, F) or (R,) success block."""
        if isinstance(a, NSym) and isinstance(b, NSym):
            if a.row == b.row:
                return None  # exp(0) == 1 exactly; min with 1 is the identity
            k = dc.batch_unify(self._lookup(a), self._lookup(b), self.mu)
            return dc.reshape(k, (1,))
        if isinstance(a, NBatch) and isinstance(b, NBatch):
            return dc.rowwise_rbf(self._lookup(a), self._lookup(b), self.mu)
        if isinstance(a, NBatch):
            k = dc.batch_unify(self._lookup(a), self._lookup(b), self.mu)
            return dc.reshape(k, (n_rows,))
        k = dc.batch_unify(self._lookup(b), self._lookup(a), self.mu)
        return dc.reshape(k, (n_rows,))

    # -- modules -------------------------------------------------------------

    def or_module(self, goal, depth, state):
        """Apply every KB rule to the goal: the fact blocks in one batched
        unification, then each remaining rule via unify + AND over its body."""
        if depth < 1:
            return []
        goal = tuple(walk_term(t, state.subst) for t in goal)
        out = []
        block = self.p.fact_blocks.get(len(goal) - 1)
        if block is not None:
            st = self.unify_facts(goal, block, state)
            if st is not None:
                out.append(st)
        for rule in self.p.rules:
            if rule.restricted and rule.index in state.used:
                continue
            if rule.body and depth < 2:
                continue  # the body's OR calls at depth-1 could not finish
            unified = self.unify_rule(goal, rule, state)
            if unified is FAIL:
                continue
            out.extend(self.and_module(rule.body, depth, unified))
        return out

    def and_module(self, subgoals, depth, state):
        if depth < 1:
            return []
        if not subgoals:
            return [state]
        first, rest = subgoals[0], subgoals[1:]
        out = []
        for st in self.or_module(first, depth - 1, state):
            out.extend(self.and_module(rest, depth, st))
        return out

    def unify_rule(self, goal, rule, state):
        """Unify the goal with a rule head: variables on either side bind,
        non-variable pairs min-chain their kernel into the success score.
        The rule joins the state's used set when it bears variables."""
        head = rule.head
        if len(head) != len(goal):
            return FAIL
        subst = dict(state.subst)
        kernels = []
        n = state.size
        for h, g in zip(head, goal):
            h = walk_term(h, subst)
            g = walk_term(g, subst)
            if isinstance(h, NVar):
                if not (isinstance(g, NVar) and g.name == h.name):
                    subst[h.name] = g
            elif isinstance(g, NVar):
                subst[g.name] = h
            else:
                k = self._pair_kernel(g, h, n)
                if k is not None:
                    kernels.append(k)
        success = state.success
        for k in kernels:
            success = dc.minimum(success, k)
        used = state.used | {rule.index} if rule.restricted else state.used
        return ProofState(state.rows, subst, success, used)

    def unify_facts(self, goal, block, state):
        """Unify every state row against every fact of matching arity in one
        batched kernel computation; goal variables bind to per-candidate
        index vectors.  Fans R rows out to R * F candidates, then keeps the
        top k_max per row."""
        R, F = state.size, len(block.rule_idx)
        kernels = []
        col_of = {}
        new_bindings = {}
        for pos, g in enumerate(goal):
            col_rows = block.cols[:, pos]
            if isinstance(g, NVar):
                if g.name in col_of:
                    # same variable twice in one atom: candidate-aligned kernel
                    prev = block.cols[:, col_of[g.name]]
                    k = dc.rowwise_rbf(
                        self._rows_lookup(prev), self._rows_lookup(col_rows), self.mu
                    )
                    kernels.append(dc.reshape(k, (1, F)))
                else:
                    col_of[g.name] = pos
                    new_bindings[g.name] = col_rows
                continue
            B = self._rows_lookup(col_rows)
            A = self._lookup(g)
            kernels.append(dc.batch_unify(A, B, self.mu))  # (1, F) or (R, F)
        success = dc.reshape(state.success, (R, 1))
        for k in kernels:
            success = dc.minimum(success, k)
        if self.mask is not None:
            hide = self.mask[state.rows][:, None] == block.rule_idx[None, :]
            if hide.any():
                success = dc.mul(success, (~hide).astype(np.float64))
        if success.value.shape != (R, F):
            success = dc.minimum(success, self.tape.constant(np.ones((R, F))))
        flat = dc.reshape(success, (R * F,))
        rows = np.repeat(state.rows, F)
        if self.k_max < F:
            sel = _topk_flat(success.value, self.k_max)
            flat = dc.take(flat, sel)
            rows = rows[sel]
            subst = {v: _take_term(_repeat_term(t, F), sel) for v, t in state.subst.items()}
            for v, col in new_bindings.items():
                subst[v] = NBatch(np.tile(col, R)[sel])
            return ProofState(rows, subst, flat, state.used)
        subst = {v: _repeat_term(t, F) for v, t in state.subst.items()}
        for v, col in new_bindings.items():
            subst[v] = NBatch(np.tile(col, R))
        if self.p.config.merge_paths:
            # Rows of one goal with identical bindings are interchangeable
            # downstream (success min-chains are monotone in the upstream
            # value), so keeping only each group's max preserves the
            # aggregated score bit-for-bit while bounding the fanout.
            keep = _dedup_rows(rows, subst, flat.value)
            if keep is not None:
                flat = dc.take(flat, keep)
                rows = rows[keep]
                subst = {v: _take_term(t, keep) for v, t in subst.items()}
        return ProofState(rows, subst, flat, state.used)


def _dedup_rows(rows, subst, values):
    """Indices keeping, per (goal row, substitution values) group, the entry
    with the highest success (lowest index on ties); None when nothing can
    be merged."""
    cols = [rows] + [t.rows for t in subst.values() if isinstance(t, NBatch)]
    n = len(rows)
    idx = np.arange(n)
    order = np.lexsort((idx, -values, *reversed(cols)))
    key = np.stack(cols, axis=1)[order]
    heads = np.ones(n, dtype=bool)
    heads[1:] = (key[1:] != key[:-1]).any(axis=1)
    keep = np.sort(order[heads])
    if len(keep) == n:
        return None
    return keep


def _topk_flat(values, k):
    """Flat indices of the top-k entries per row of an (R, F) value matrix,
    ties broken to the lowest candidate index."""
    R, F = values.shape
    order = np.argsort(-values, axis=1, kind="stable")[:, :k]
    return (order + np.arange(R)[:, None] * F).reshape(-1)


# --------------------------------------------------------------------------
# One-shot operation surfaces
# --------------------------------------------------------------------------

def unify_diff(h_terms, g_terms, state, store, mu=DEFAULT_MU):
    """Differentiable unification of two single atoms under a (scalar) proof
    state: variables bind, non-variable pairs contribute their kernel to a
    running min with the upstream success.  Arity mismatch is FAIL."""
    if len(h_terms) != len(g_terms):
        return FAIL
    tape = state.success.tape
    subst = dict(state.subst)
    success = state.success
    for h, g in zip(h_terms, g_terms):
        h = walk_term(h, subst)
        g = walk_term(g, subst)
        if isinstance(h, NVar):
            if not (isinstance(g, NVar) and g.name == h.name):
                subst[h.name] = g
        elif isinstance(g, NVar):
            subst[g.name] = h
        else:
            a = store.lookup_unify(tape, np.array([h.row]))
            b = store.lookup_unify(tape, np.array([g.row]))
            success = dc.minimum(success, dc.reshape(dc.batch_unify(a, b, mu), (1,)))
    return ProofState(state.rows, subst, success, state.used)


def kmax_filter(states, k):
    """Keep the K highest-success candidate states (ties by lowest index);
    with K >= candidate count this is the identity, so the downstream score
    is bit-identical to exact max-pooling."""
    if k >= len(states):
        return list(states)
    values = np.array([float(s.success.value) for s in states])
    order = np.argsort(-values, kind="stable")[:k]
    return [states[i] for i in sorted(order)]


def ntp_prove(kb, goal, config, store):
    """Proof success of one ground goal: max over all non-failing proof
    states; 0 with no gradient when nothing unifies."""
    prover = Prover(kb, store, config)
    tape = dc.Tape()
    vocab = prover.vocab
    rows = [vocab.pred_row(goal.pred)] + [prover.emb_row(t) for t in goal.args]
    scores, _ = prover.goal_scores(tape, np.array([rows]))
    return dc.take(scores, np.array([0]))


# --------------------------------------------------------------------------
# Training losses
# --------------------------------------------------------------------------

def _goal_rows(vocab, triples):
    return np.array([[t.s, vocab.n_predicates + t.i, vocab.n_predicates + t.j] for t in triples])


def ntp_batch_loss(prover, known, rng, complex_aux=False, aux_weight=1.0):
    """Negative log-likelihood of proof successes over a mini-batch: each
    known fact at target 1 with its own row masked out of fact unification,
    plus its sampled corruptions at target 0.  With `complex_aux`, the
    complex bilinear scorer adds an auxiliary NLL over the same atoms and
    the same (shared) representations.

    `known` holds (GroundTriple, kb fact index) pairs.  Returns (loss node,
    number of atoms in the batch).
    """
    kb, vocab = prover.kb, prover.vocab
    triples = []
    targets = []
    mask = []
    for triple, fact_idx in known:
        triples.append(triple)
        targets.append(1.0)
        mask.append(fact_idx)
        for corr in sample_ntp_corruptions(kb, triple, rng):
            triples.append(corr)
            targets.append(0.0)
            mask.append(-1)
    tape = dc.Tape()
    goals = _goal_rows(vocab, triples)
    y = np.array(targets)
    scores, _ = prover.goal_scores(tape, goals, mask=np.array(mask))
    loss = _nll_vector(scores, y)
    if complex_aux:
        probs = dc.sigmoid(_complex_batch(tape, prover.store, vocab, triples))
        loss = dc.add(loss, dc.scale(_nll_vector(probs, y), aux_weight))
    return loss, len(triples)


def _nll_vector(p, y):
    pos = dc.mul(dc.clamped_log(p), y)
    neg = dc.mul(dc.clamped_log(dc.sub(p.tape.constant(1.0), p)), 1.0 - y)
    return dc.neg(dc.total(dc.add(pos, neg)))


def _complex_batch(tape, store, vocab, triples):
    S = np.array([t.s for t in triples])
    I = np.array([vocab.n_predicates + t.i for t in triples])
    J = np.array([vocab.n_predicates + t.j for t in triples])
    rs, ri, rj = (store.lookup(tape, x) for x in (S, I, J))
    ms, mi, mj = (store.lookup_imag(tape, x) for x in (S, I, J))
    t1 = dc.row_total(dc.mul(dc.mul(rs, ri), rj))
    t2 = dc.row_total(dc.mul(dc.mul(rs, mi), mj))
    t3 = dc.row_total(dc.mul(dc.mul(ms, ri), mj))
    t4 = dc.row_total(dc.mul(dc.mul(ms, mi), rj))
    return dc.add(dc.add(t1, t2), dc.sub(t3, t4))


def ntp_loss(kb, batch, config, store, rng):
    """One-shot form that builds its own Prover: `batch` is a list of
    (GroundTriple, kb fact index).  See ntp_batch_loss."""
    prover = Prover(kb, store, config)
    loss, _ = ntp_batch_loss(prover, batch, rng)
    return loss


def ntp_lambda_loss(kb, batch, config, store, rng):
    """ntp_loss plus the complex-scorer NLL on the same batch over shared
    (complex) embeddings; aux_weight 0 reduces it to ntp_loss exactly."""
    prover = Prover(kb, store, config)
    loss, _ = ntp_batch_loss(
        prover, batch, rng, complex_aux=config.aux_weight != 0.0, aux_weight=config.aux_weight
    )
    return loss


# --------------------------------------------------------------------------
# Rule decoding
# --------------------------------------------------------------------------

@dataclass
class DecodedRule:
    source: object  # kb.ParamRule
    slot_to_pred: dict  # slot number -> (predicate index, similarity)
    confidence: float  # gamma: min over slots of the max similarity

    def clause_str(self, symbols):
        names = {slot: symbols.predicates[p] for slot, (p, _) in self.slot_to_pred.items()}

        def atom_str(a):
            pred = names[a.slot] if a.slot is not None else a.pred
            return f"{pred}({', '.join(a.args)})"

        tpl = self.source.template
        head = atom_str(tpl.head)
        if not tpl.body:
            return f"{head}."
        return f"{head} :- " + ", ".join(atom_str(a) for a in tpl.body) + "."


def decode_rule(param_rule, store, symbols, mu=DEFAULT_MU):
    """Map each parameterized predicate slot to its closest known predicate
    under the unification kernel; the rule confidence gamma is the minimum
    over slots of that maximum similarity, an upper bound on any proof
    success the rule can contribute."""
    matrix = store.unify_matrix()
    known = symbols.known_predicates()
    K = matrix[known]
    slot_to_pred = {}
    gamma = 1.0
    for slot, pred_idx in sorted(param_rule.slot_preds.items()):
        sims = dc.rbf_values(matrix[pred_idx][None, :], K, mu)[0]
        best = int(np.argmax(sims))
        slot_to_pred[slot] = (known[best], float(sims[best]))
        gamma = min(gamma, float(sims[best]))
    return DecodedRule(param_rule, slot_to_pred, gamma)


def decode_all(param_rules, store, symbols, mu=DEFAULT_MU):
    decoded = [decode_rule(pr, store, symbols, mu) for pr in param_rules]
    return sorted(decoded, key=lambda d: -d.confidence)


# --------------------------------------------------------------------------
# Test-and-oracle helpers
# --------------------------------------------------------------------------

def one_hot_store(names, scale):
    """Scaled one-hot embeddings: cross-symbol kernel exp(-scale * sqrt(2)),
    below 1e-6 at scale 10, making NTP proving discrete."""
    store = dc.EmbeddingStore.__new__(dc.EmbeddingStore)
    store.names = list(names)
    store.k = len(names)
    store.complex_pairs = False
    store.imag = None
    store.g_imag = None
    store._adam = {}
    store.real = np.eye(len(names)) * float(scale)
    store.g_real = np.zeros_like(store.real)
    return store
