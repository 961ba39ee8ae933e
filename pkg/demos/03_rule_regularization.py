"""Zero-shot relation learning by grounding logic rules into the loss.

The target relation has no training facts at all; a single implication from
a surface pattern is stochastically grounded into differentiable loss terms
(product t-norm semantics), so the matrix-factorization embeddings absorb
the rule.  The fact-only baseline can only guess.
"""

import numpy as np

from proverforge.diffcore import TrainConfig
from proverforge.kb import parse_kb
from proverforge.metrics import map_weighted
from proverforge.training import binary_fact_triples, build_bundle, relation_map, train_bundle


def zero_shot_kb(n_target=12, n_distractor=48, seed=0):
    """worksFor facts on the target pairs, unrelated predicates elsewhere,
    and an `employer` predicate that never appears in a training fact."""
    rng = np.random.default_rng(seed)
    lines = []
    target_pairs = []
    for i in range(n_target):
        a, b = f"e{2 * i}", f"e{2 * i + 1}"
        lines.append(f"worksFor({a}, {b}).")
        target_pairs.append((a, b))
    for i in range(n_target, n_target + n_distractor):
        a, b = f"e{2 * i}", f"e{2 * i + 1}"
        pred = rng.choice(["friendOf", "knows", "rivalOf"])
        lines.append(f"{pred}({a}, {b}).")
    rng.shuffle(lines)
    return "\n".join(lines), target_pairs


train_text, target_pairs = zero_shot_kb()
kb = parse_kb(train_text)
kb.symbols.intern_predicate("employer", 2)  # zero training facts for it
rules = parse_kb("employer(X, Y) :- worksFor(X, Y).", symbols=kb.symbols).rules
test_facts = parse_kb("\n".join(f"employer({a}, {b})." for a, b in target_pairs),
                      symbols=kb.symbols)

cfg = TrainConfig(epochs=300, seed=0)
results = {}
for name, injected in (("fact-only", []), ("joint", rules)):
    bundle = build_bundle("joint-rules", kb, k=16, injected_rules=injected, train_config=cfg)
    train_bundle(bundle, cfg)
    per_rel = relation_map(bundle, kb, binary_fact_triples(test_facts))
    m, wm = map_weighted(per_rel)
    results[name] = m
    print(f"{name:10s} MAP {m:.3f}  weighted MAP {wm:.3f}")

print(f"\nrule injection lifts MAP by {results['joint'] - results['fact-only']:+.3f} "
      "on a relation with zero training facts")
