"""Symbolic backward chaining on a toy family knowledge base.

Walks the classic example: facts about the Simpsons, two rules, and a
query with two free variables.  Shows the proof traces (which rules fired,
in order) alongside the answers, then demonstrates the depth bound and the
cycle heuristic.
"""

from proverforge.kb import parse_atom, parse_kb
from proverforge.symbolic import format_substitution, prove

KB_TEXT = """\
fatherOf(abe, homer).
parentOf(homer, lisa).
parentOf(homer, bart).
grandpaOf(abe, lisa).
grandfatherOf(abe, maggie).
grandfatherOf(X, Y) :- fatherOf(X, Z), parentOf(Z, Y).
grandparentOf(X, Y) :- grandfatherOf(X, Y).
"""

kb = parse_kb(KB_TEXT)
print("knowledge base:")
for i, rule in enumerate(kb.rules, start=1):
    print(f"  {i}. {kb.rule_str(rule)}")

query = parse_atom("grandparentOf(Q1, Q2)", kb.symbols, intern=False)
print("\n?- grandparentOf(Q1, Q2).   (depth 3)")
result = prove(kb, query, max_depth=3)
for proof in result.proofs:
    trace = " -> ".join(str(i + 1) for i in proof.rule_sequence)
    print(f"  {format_substitution(kb, proof.substitution):28s} via rules {trace}")

# The proof of {Q1/abe, Q2/lisa} needs two chained rules plus two facts,
# so it disappears when the depth budget is 2:
shallow = prove(kb, query, max_depth=2)
print(f"\nsame query at depth 2: {len(shallow.proofs)} proofs (rule chaining cut off)")

# Recursive rules terminate because a variable-bearing rule is applied at
# most once per proof path:
cyclic = parse_kb("edge(a, b).\nedge(b, c).\npath(X, Y) :- edge(X, Y).\npath(X, Y) :- edge(X, Z), path(Z, Y).\n")
two_hop = parse_atom("path(a, c)", cyclic.symbols, intern=False)
print(f"path(a, c) with the recursive rule: {bool(prove(cyclic, two_hop, 5))} "
      "(one application of each rule suffices)")
