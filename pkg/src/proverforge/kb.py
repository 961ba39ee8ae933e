"""Knowledge-base data model: symbol interning, terms, atoms, definite rules,
Datalog-subset parsing, and rule templates with parameterized predicate slots.

A KB file is UTF-8 text, one clause per line, Prolog syntax::

    clause   ::= atom ( ":-" atom ("," atom)* )? "."
    atom     ::= name "(" term ("," term)* ")"
    term     ::= name
    name     ::= [A-Za-z0-9_][A-Za-z0-9_'-]*

``%`` starts a comment.  Names starting with an uppercase letter are
variables, everything else is a constant or predicate.  A template file holds
lines ``<count> <skeleton clause>`` where predicate positions may be numbered
slots ``#1``, ``#2``, ...; a slot number used twice in one skeleton denotes a
single shared trainable predicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ParseError(ValueError):
    """Syntax or consistency error, carrying 1-based line/column."""

    def __init__(self, msg, line, col):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    index: int


Term = Var | Const


@dataclass(frozen=True)
class Atom:
    """A predicate applied to one or more terms; list form [pred, t1, ..., tN]."""

    pred: int
    args: tuple

    @property
    def arity(self):
        return len(self.args)

    def is_ground(self):
        return all(isinstance(t, Const) for t in self.args)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple = ()

    def atoms(self):
        return (self.head,) + self.body

    def is_fact(self):
        return not self.body and self.head.is_ground()

    def has_vars(self):
        return any(isinstance(t, Var) for a in self.atoms() for t in a.args)

    def variables(self):
        out = []
        seen = set()
        for a in self.atoms():
            for t in a.args:
                if isinstance(t, Var) and t.name not in seen:
                    seen.add(t.name)
                    out.append(t.name)
        return out


class SymbolTable:
    """Interned predicate and constant names; disjoint index spaces.

    Interning is injective and idempotent: a name always maps to the same
    index.  Predicates carry a fixed arity; re-interning with a conflicting
    arity raises.
    """

    def __init__(self):
        self.predicates = []
        self.constants = []
        self._pred_idx = {}
        self._const_idx = {}
        self.pred_arity = []
        self._param_preds = set()

    def intern_predicate(self, name, arity, parameterized=False):
        idx = self._pred_idx.get(name)
        if idx is not None:
            if self.pred_arity[idx] != arity:
                raise ValueError(
                    f"predicate {name!r} used with arity {arity} and "
                    f"{self.pred_arity[idx]}"
                )
            return idx
        idx = len(self.predicates)
        self.predicates.append(name)
        self.pred_arity.append(arity)
        self._pred_idx[name] = idx
        if parameterized:
            self._param_preds.add(idx)
        return idx

    def intern_constant(self, name):
        idx = self._const_idx.get(name)
        if idx is None:
            idx = len(self.constants)
            self.constants.append(name)
            self._const_idx[name] = idx
        return idx

    def predicate_index(self, name):
        return self._pred_idx[name]

    def constant_index(self, name):
        return self._const_idx[name]

    def is_parameterized(self, pred_idx):
        return pred_idx in self._param_preds

    def known_predicates(self):
        """Indices of non-parameterized predicates (decode targets)."""
        return [i for i in range(len(self.predicates)) if i not in self._param_preds]

    @property
    def n_predicates(self):
        return len(self.predicates)

    @property
    def n_constants(self):
        return len(self.constants)


class KnowledgeBase:
    """Interned symbols plus a list of definite rules; facts are body-less
    ground rules and are additionally indexed for O(1) membership."""

    def __init__(self, symbols=None, rules=()):
        self.symbols = symbols if symbols is not None else SymbolTable()
        self.rules = list(rules)
        self.fact_index = set()
        for r in self.rules:
            if r.is_fact():
                self.fact_index.add(self._key(r.head))

    @staticmethod
    def _key(atom):
        return (atom.pred,) + tuple(t.index for t in atom.args)

    def has_fact(self, atom):
        return atom.is_ground() and self._key(atom) in self.fact_index

    def has_fact_key(self, pred, *arg_indices):
        return (pred,) + tuple(arg_indices) in self.fact_index

    def facts(self):
        return [r for r in self.rules if r.is_fact()]

    def with_rules(self, extra_rules):
        """New KB sharing this symbol table, with extra rules appended."""
        return KnowledgeBase(self.symbols, self.rules + list(extra_rules))

    def atom_str(self, atom):
        syms = self.symbols
        args = ", ".join(
            t.name if isinstance(t, Var) else syms.constants[t.index] for t in atom.args
        )
        return f"{syms.predicates[atom.pred]}({args})"

    def rule_str(self, rule):
        head = self.atom_str(rule.head)
        if not rule.body:
            return f"{head}."
        return f"{head} :- " + ", ".join(self.atom_str(a) for a in rule.body) + "."

    def serialize(self):
        return "\n".join(self.rule_str(r) for r in self.rules) + ("\n" if self.rules else "")


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_NAME_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_NAME_BODY = _NAME_START | set("'-")


def _tokenize(line, lineno):
    """Tokens are (kind, text, col): NAME, SLOT, '(', ')', ',', '.', ':-'."""
    toks = []
    i, n = 0, len(line)
    while i < n:
        c = line[i]
        if c == "%":
            break
        if c.isspace():
            i += 1
            continue
        col = i + 1
        if c in "(),.":
            toks.append((c, c, col))
            i += 1
        elif c == ":":
            if line[i : i + 2] == ":-":
                toks.append((":-", ":-", col))
                i += 2
            else:
                raise ParseError("expected ':-'", lineno, col)
        elif c == "#":
            j = i + 1
            while j < n and line[j].isdigit():
                j += 1
            if j == i + 1:
                raise ParseError("slot marker '#' without number", lineno, col)
            toks.append(("SLOT", line[i:j], col))
            i = j
        elif c in _NAME_START:
            j = i
            while j < n and line[j] in _NAME_BODY:
                j += 1
            toks.append(("NAME", line[i:j], col))
            i = j
        else:
            raise ParseError(f"unexpected character {c!r}", lineno, col)
    return toks


def _is_variable(name):
    return name[0].isupper()


class _ClauseParser:
    """Recursive-descent parser over one line's tokens."""

    def __init__(self, toks, lineno, allow_slots=False):
        self.toks = toks
        self.pos = 0
        self.lineno = lineno
        self.allow_slots = allow_slots

    def _peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def _next(self, kind=None):
        tok = self._peek()
        if tok is None:
            last_col = self.toks[-1][2] + len(self.toks[-1][1]) if self.toks else 1
            raise ParseError(f"unexpected end of clause (wanted {kind})", self.lineno, last_col)
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", self.lineno, tok[2])
        self.pos += 1
        return tok

    def atom(self):
        kind, name, col = self._next()
        if kind == "SLOT":
            if not self.allow_slots:
                raise ParseError("slot predicates only valid in templates", self.lineno, col)
        elif kind != "NAME":
            raise ParseError(f"expected predicate name, found {name!r}", self.lineno, col)
        if kind == "NAME" and _is_variable(name):
            raise ParseError(f"predicate {name!r} must not be a variable", self.lineno, col)
        self._next("(")
        args = [self.term()]
        while self._peek() and self._peek()[0] == ",":
            self._next(",")
            args.append(self.term())
        self._next(")")
        return (kind, name, col), args

    def term(self):
        _, name, col = self._next("NAME")
        return name, col

    def clause(self):
        head = self.atom()
        body = []
        tok = self._peek()
        if tok and tok[0] == ":-":
            self._next(":-")
            body.append(self.atom())
            while self._peek() and self._peek()[0] == ",":
                self._next(",")
                body.append(self.atom())
        self._next(".")
        tok = self._peek()
        if tok is not None:
            raise ParseError(f"trailing input {tok[1]!r} after clause", self.lineno, tok[2])
        return head, body


def _build_atom(symbols, raw_atom, lineno, var_map):
    (kind, name, col), raw_args = raw_atom
    try:
        pred = symbols.intern_predicate(name, len(raw_args))
    except ValueError as e:
        raise ParseError(str(e), lineno, col) from None
    args = []
    for arg_name, _ in raw_args:
        if _is_variable(arg_name):
            args.append(var_map.setdefault(arg_name, Var(arg_name)))
        else:
            args.append(Const(symbols.intern_constant(arg_name)))
    return Atom(pred, tuple(args))


def _uniquify_variables(rules):
    """Rename variables so no two rules share a name.  Idempotent: a rule
    keeps its names when they are already globally unique (so serialize ->
    reparse is stable).  The k-th variable-bearing rule gets suffix k,
    matching the usual presentation of shared-KB rules."""
    owners = {}
    for ri, r in enumerate(rules):
        for v in r.variables():
            owners.setdefault(v, []).append(ri)
    taken = {v for v, rs in owners.items() if len(set(rs)) == 1}
    out = []
    ordinal = 0
    for r in rules:
        rvars = r.variables()
        if not rvars:
            out.append(r)
            continue
        ordinal += 1
        if all(len(set(owners[v])) == 1 for v in rvars):
            out.append(r)
            continue
        mapping = {}
        for v in rvars:
            new = f"{v}{ordinal}"
            while new in taken:
                new = f"{v}_r{ordinal}"
                ordinal += 1
            taken.add(new)
            mapping[v] = new
        out.append(rename_rule_vars(r, mapping))
    return out


def rename_rule_vars(rule, mapping):
    def fix(atom):
        return Atom(
            atom.pred,
            tuple(Var(mapping.get(t.name, t.name)) if isinstance(t, Var) else t for t in atom.args),
        )

    return Rule(fix(rule.head), tuple(fix(a) for a in rule.body))


def parse_kb(text, symbols=None):
    """Parse clause text into a KnowledgeBase.

    Raises ParseError with line/column on bad syntax, and on a predicate used
    with two different arities (the benchmark KBs are arity-consistent, so an
    arity clash is a data bug worth failing on).
    """
    symbols = symbols if symbols is not None else SymbolTable()
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokenize(line, lineno)
        if not toks:
            continue
        raw_head, raw_body = _ClauseParser(toks, lineno).clause()
        var_map = {}
        head = _build_atom(symbols, raw_head, lineno, var_map)
        body = tuple(_build_atom(symbols, a, lineno, var_map) for a in raw_body)
        rules.append(Rule(head, body))
    return KnowledgeBase(symbols, _uniquify_variables(rules))


def parse_atom(text, symbols, intern=True):
    """Parse a single atom (no trailing dot needed), e.g. a CLI query."""
    toks = _tokenize(text.strip().rstrip("."), 1)
    parser = _ClauseParser(toks + [(".", ".", 0)], 1)
    raw, _ = parser.clause()
    (kind, name, col), raw_args = raw
    if intern:
        return _build_atom(symbols, raw, 1, {})
    try:
        pred = symbols.predicate_index(name)
    except KeyError:
        raise ParseError(f"unknown predicate {name!r}", 1, col) from None
    if symbols.pred_arity[pred] != len(raw_args):
        raise ParseError(f"wrong arity for {name!r}", 1, col)
    args = []
    for arg_name, acol in raw_args:
        if _is_variable(arg_name):
            args.append(Var(arg_name))
        else:
            try:
                args.append(Const(symbols.constant_index(arg_name)))
            except KeyError:
                raise ParseError(f"unknown constant {arg_name!r}", 1, acol) from None
    return Atom(pred, tuple(args))


def load_kb_file(path, symbols=None):
    """Load a KB from a clause file or a TSV file (predicate\\tsubj\\tobj).

    The format is sniffed per line, so mixed files work; TSV names may
    contain characters the clause syntax does not allow.
    """
    symbols = symbols if symbols is not None else SymbolTable()
    clause_lines = []
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if "\t" in line:
                parts = [p.strip() for p in line.rstrip("\n").split("\t")]
                if len(parts) != 3 or not all(parts):
                    raise ParseError("TSV line must be pred\\tsubj\\tobj", lineno, 1)
                pred = symbols.intern_predicate(parts[0], 2)
                args = (Const(symbols.intern_constant(parts[1])), Const(symbols.intern_constant(parts[2])))
                rules.append(Rule(Atom(pred, args)))
            else:
                clause_lines.append((lineno, line))
    for lineno, line in clause_lines:
        toks = _tokenize(line, lineno)
        if not toks:
            continue
        raw_head, raw_body = _ClauseParser(toks, lineno).clause()
        var_map = {}
        head = _build_atom(symbols, raw_head, lineno, var_map)
        body = tuple(_build_atom(symbols, a, lineno, var_map) for a in raw_body)
        rules.append(Rule(head, body))
    return KnowledgeBase(symbols, _uniquify_variables(rules))


# --------------------------------------------------------------------------
# Rule templates
# --------------------------------------------------------------------------

@dataclass
class TemplateAtom:
    slot: int | None  # numbered slot, or None when `pred` names a concrete predicate
    pred: str | None
    args: tuple  # raw argument names


@dataclass
class RuleTemplate:
    """A rule skeleton with numbered parameterized-predicate slots and an
    instantiation count.  Shared slot numbers share one trainable predicate
    within each instantiated copy; distinct copies never share."""

    count: int
    head: TemplateAtom
    body: tuple
    text: str = ""

    def atoms(self):
        return (self.head,) + self.body

    def slots(self):
        return sorted({a.slot for a in self.atoms() if a.slot is not None})


def parse_templates(text):
    """Parse template lines ``<count> <skeleton clause>``.

    Rejects non-positive counts and slot gaps (#1 and #3 without #2).
    """
    templates = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokenize(line, lineno)
        if not toks:
            continue
        kind, count_text, col = toks[0]
        if kind != "NAME" or not count_text.isdigit():
            raise ParseError("template line must start with a count", lineno, col)
        count = int(count_text)
        if count <= 0:
            raise ParseError(f"template count must be positive, got {count}", lineno, col)
        raw_head, raw_body = _ClauseParser(toks[1:], lineno, allow_slots=True).clause()

        def mk(raw):
            (kind, name, _), raw_args = raw
            args = tuple(a for a, _ in raw_args)
            if kind == "SLOT":
                return TemplateAtom(int(name[1:]), None, args)
            return TemplateAtom(None, name, args)

        tpl = RuleTemplate(count, mk(raw_head), tuple(mk(a) for a in raw_body), line.strip())
        slots = tpl.slots()
        if slots and slots != list(range(1, len(slots) + 1)):
            raise ParseError(f"slot numbers must be contiguous from 1, got {slots}", lineno, 1)
        templates.append(tpl)
    return templates


@dataclass
class ParamRule:
    """An instantiated template copy: a plain Rule over fresh parameterized
    predicates, plus the bookkeeping needed to decode it after training."""

    rule: Rule
    slot_preds: dict  # slot number -> predicate index
    template: RuleTemplate
    copy_index: int


def instantiate_templates(templates, symbols):
    """Create `count` rule copies per template with fresh parameterized
    predicate symbols; shared slots within one copy share one symbol."""
    out = []
    for ti, tpl in enumerate(templates):
        arity_of_slot = {}
        for a in tpl.atoms():
            if a.slot is not None:
                prev = arity_of_slot.setdefault(a.slot, len(a.args))
                if prev != len(a.args):
                    raise ValueError(f"slot #{a.slot} used with two arities in {tpl.text!r}")
        for ci in range(tpl.count):
            slot_preds = {
                s: symbols.intern_predicate(f"#{s}_{ti}_{ci}", arity_of_slot[s], parameterized=True)
                for s in tpl.slots()
            }

            def mk(a):
                pred = slot_preds[a.slot] if a.slot is not None else symbols.intern_predicate(a.pred, len(a.args))
                terms = tuple(
                    Var(f"{n}_t{ti}c{ci}") if _is_variable(n) else Const(symbols.intern_constant(n))
                    for n in a.args
                )
                return Atom(pred, terms)

            rule = Rule(mk(tpl.head), tuple(mk(a) for a in tpl.body))
            out.append(ParamRule(rule, slot_preds, tpl, ci))
    return out


# --------------------------------------------------------------------------
# Entity-pair index space (Ch. 3-4 style models)
# --------------------------------------------------------------------------

class PairSpace:
    """Derived constant-pair index space over observed argument pairs, so one
    SymbolTable serves both entity-level and pair-level models."""

    def __init__(self, kb=None):
        self.pairs = []
        self._idx = {}
        if kb is not None:
            for r in kb.facts():
                if r.head.arity == 2:
                    self.add(r.head.args[0].index, r.head.args[1].index)

    def add(self, i, j):
        key = (i, j)
        idx = self._idx.get(key)
        if idx is None:
            idx = len(self.pairs)
            self.pairs.append(key)
            self._idx[key] = idx
        return idx

    def index(self, i, j):
        return self._idx[(i, j)]

    def get(self, i, j):
        return self._idx.get((i, j))

    def __len__(self):
        return len(self.pairs)

    def names(self, symbols):
        c = symbols.constants
        return [f"{c[i]},{c[j]}" for i, j in self.pairs]
