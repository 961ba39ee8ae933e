import numpy as np
import pytest

from proverforge.kb import (Atom, Const, KnowledgeBase, ParseError, PairSpace, Rule, Var,
                            instantiate_templates, load_kb_file, parse_atom, parse_kb,
                            parse_templates)

SIMPSONS = """\
% toy family KB
fatherOf(abe, homer).
parentOf(homer, lisa).
parentOf(homer, bart).
grandpaOf(abe, lisa).
grandfatherOf(abe, maggie).
grandfatherOf(X, Y) :- fatherOf(X, Z), parentOf(Z, Y).
grandparentOf(X, Y) :- grandfatherOf(X, Y).
"""


def test_parse_fact_list_representation():
    kb = parse_kb("fatherOf(abe, homer).")
    assert len(kb.rules) == 1
    rule = kb.rules[0]
    assert rule.is_fact()
    syms = kb.symbols
    assert syms.predicates[rule.head.pred] == "fatherOf"
    assert [syms.constants[t.index] for t in rule.head.args] == ["abe", "homer"]


def test_parse_rule_scoped_variables():
    kb = parse_kb("grandfatherOf(X,Y) :- fatherOf(X,Z), parentOf(Z,Y).")
    rule = kb.rules[0]
    assert len(rule.body) == 2
    assert all(isinstance(t, Var) for t in rule.head.args)
    assert set(rule.variables()) == {"X", "Y", "Z"}


def test_parse_empty_input():
    kb = parse_kb("")
    assert kb.rules == []
    assert kb.fact_index == set()


def test_parse_comment_and_blank_lines():
    kb = parse_kb("% nothing here\n\nfatherOf(abe, homer). % trailing\n")
    assert len(kb.rules) == 1


def test_syntax_error_carries_line_and_column():
    with pytest.raises(ParseError) as exc:
        parse_kb("fatherOf(abe, homer).\nbroken(abe.\n")
    assert exc.value.line == 2
    assert exc.value.col > 0


def test_arity_conflict_rejected():
    with pytest.raises(ParseError, match="arity"):
        parse_kb("p(a, b).\np(a).\n")


def test_variable_predicate_rejected():
    with pytest.raises(ParseError):
        parse_kb("X(a, b).")


def test_fresh_renaming_matches_shared_kb_presentation():
    kb = parse_kb(SIMPSONS)
    assert kb.rule_str(kb.rules[5]) == "grandfatherOf(X1, Y1) :- fatherOf(X1, Z1), parentOf(Z1, Y1)."
    assert kb.rule_str(kb.rules[6]) == "grandparentOf(X2, Y2) :- grandfatherOf(X2, Y2)."


def test_rule_variable_sets_disjoint_across_rules():
    kb = parse_kb(SIMPSONS + "uncleOf(X, Y) :- fatherOf(Z, X), parentOf(Z, Y).\n")
    seen = {}
    for ri, rule in enumerate(kb.rules):
        for v in rule.variables():
            assert v not in seen, f"variable {v} shared by rules {seen[v]} and {ri}"
            seen[v] = ri


def test_round_trip_serialization():
    kb = parse_kb(SIMPSONS)
    again = parse_kb(kb.serialize())
    assert again.serialize() == kb.serialize()
    assert [r.head.pred for r in again.rules] == [r.head.pred for r in kb.rules]
    assert again.fact_index == kb.fact_index


def test_fact_index_matches_linear_scan_on_random_kbs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        kb = KnowledgeBase()
        syms = kb.symbols
        preds = [syms.intern_predicate(f"p{i}", 2) for i in range(3)]
        consts = [syms.intern_constant(f"c{i}") for i in range(4)]
        rules = []
        for _ in range(int(rng.integers(0, 25))):
            rules.append(Rule(Atom(int(rng.choice(preds)),
                                   (Const(int(rng.choice(consts))), Const(int(rng.choice(consts)))))))
        rules.append(Rule(Atom(preds[0], (Var("X"), Var("Y"))), (Atom(preds[1], (Var("X"), Var("Y"))),)))
        kb = KnowledgeBase(syms, rules)
        scan = {KnowledgeBase._key(r.head) for r in rules if r.is_fact()}
        assert kb.fact_index == scan


def test_interning_is_injective_and_idempotent():
    kb = parse_kb("p(a, b).\nq(b, a).\np(b, b).\n")
    syms = kb.symbols
    assert syms.intern_constant("a") == syms.constant_index("a")
    assert len(set(syms._pred_idx.values())) == syms.n_predicates
    assert len(set(syms._const_idx.values())) == syms.n_constants
    # predicate and constant namespaces are disjoint index spaces
    assert syms.predicate_index("p") == 0 and syms.constant_index("a") == 0


def test_parse_atom_queries():
    kb = parse_kb(SIMPSONS)
    q = parse_atom("grandparentOf(Q1, Q2)", kb.symbols, intern=False)
    assert isinstance(q.args[0], Var) and q.args[0].name == "Q1"
    with pytest.raises(ParseError):
        parse_atom("noSuchPred(a, b)", kb.symbols, intern=False)


def test_tsv_loader(tmp_path):
    path = tmp_path / "facts.tsv"
    path.write_text("locatedIn\tberlin\tgermany\n#2-in-#1\tgermany\teurope\n", encoding="utf-8")
    kb = load_kb_file(str(path))
    assert len(kb.facts()) == 2
    assert "#2-in-#1" in kb.symbols.predicates


# -- templates ---------------------------------------------------------------

def test_parse_template_shared_slot():
    (tpl,) = parse_templates("3 #1(X, Y) :- #1(Y, X).")
    assert tpl.count == 3
    assert tpl.slots() == [1]


def test_parse_template_three_slots():
    (tpl,) = parse_templates("20 #1(X, Y) :- #2(X, Z), #3(Z, Y).")
    assert tpl.count == 20
    assert tpl.slots() == [1, 2, 3]


def test_parse_template_self_loop_is_fine_at_parse_time():
    (tpl,) = parse_templates("1 #1(X, Y) :- #1(X, Y).")
    assert tpl.count == 1  # the cycle heuristic bites at proving time, not here


def test_template_rejects_nonpositive_count_and_slot_gap():
    with pytest.raises(ParseError, match="positive"):
        parse_templates("0 #1(X, Y) :- #1(Y, X).")
    with pytest.raises(ParseError, match="contiguous"):
        parse_templates("2 #1(X, Y) :- #3(X, Y).")


def test_instantiate_counts_and_sharing():
    kb = parse_kb("locatedIn(a, b).")
    syms = kb.symbols
    before = syms.n_predicates

    tpls = parse_templates("3 #1(X, Y) :- #1(Y, X).")
    out = instantiate_templates(tpls, syms)
    assert len(out) == 3
    assert syms.n_predicates - before == 3  # one shared slot per copy
    for pr in out:
        assert pr.rule.head.pred == pr.rule.body[0].pred  # shared within a copy
    assert len({pr.rule.head.pred for pr in out}) == 3  # never across copies


def test_instantiate_shared_body_slots():
    syms = parse_kb("locatedIn(a, b).").symbols
    before = syms.n_predicates
    (tpl,) = parse_templates("1 #1(X, Y) :- #2(X, Z), #2(Z, Y).")
    (pr,) = instantiate_templates([tpl], syms)
    assert syms.n_predicates - before == 2
    assert pr.rule.body[0].pred == pr.rule.body[1].pred
    assert pr.rule.head.pred != pr.rule.body[0].pred


def test_instantiate_fresh_predicate_count_by_enumeration():
    # two templates, counts 2 and 3, with 1 and 3 slots: 2*1 + 3*3 = 11
    syms = parse_kb("locatedIn(a, b).").symbols
    before = syms.n_predicates
    tpls = parse_templates("2 #1(X, Y) :- #1(Y, X).\n3 #1(X, Y) :- #2(X, Z), #3(Z, Y).\n")
    out = instantiate_templates(tpls, syms)
    distinct = {p for pr in out for p in pr.slot_preds.values()}
    assert len(distinct) == 11 == syms.n_predicates - before


def test_pairspace_on_demand():
    kb = parse_kb("p(a, b).\nq(a, b).\nq(b, c).\n")
    pairs = PairSpace(kb)
    assert len(pairs) == 2
    a, b, c = (kb.symbols.constant_index(x) for x in "abc")
    assert pairs.index(a, b) != pairs.index(b, c)
    assert pairs.get(c, a) is None
    idx = pairs.add(c, a)
    assert pairs.index(c, a) == idx and len(pairs) == 3
