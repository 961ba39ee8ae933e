"""Neural link prediction on a synthetic kinship KB.

Trains the complex bilinear scorer with sampled corruptions and reports
filtered MRR/HITS, the standard ranking protocol: each test fact is ranked
against every single-argument corruption that is not itself a known fact.
"""

import numpy as np

from proverforge.datasets import SplitSpec, split_kb, synth_kinship
from proverforge.diffcore import TrainConfig
from proverforge.kb import KnowledgeBase
from proverforge.training import binary_fact_triples, build_bundle, filtered_ranking, train_bundle

kb = synth_kinship(n_families=4, generations=3, seed=1)
train, dev, test = split_kb(kb, SplitSpec(seed=0))
print(f"facts: {len(kb.facts())} -> train {len(train.facts())}, dev {len(dev.facts())}, test {len(test.facts())}")

cfg = TrainConfig(epochs=60, seed=0, batch_size=32, learning_rate=0.005)
bundle = build_bundle("complex", train, k=16, train_config=cfg)
history = train_bundle(bundle, cfg, on_epoch=lambda e, m: print(f"  epoch {e:3d} loss {m:.4f}") if e % 15 == 0 else None)

# corruptions are filtered against everything we know, train and held-out alike
filter_kb = KnowledgeBase(kb.symbols, train.rules + dev.rules + test.rules)
result = filtered_ranking(bundle, binary_fact_triples(test), filter_kb)
print("\nfiltered ranking on the test split:")
for name, value in result.summary().items():
    print(f"  {name:8s} {value:.3f}")
