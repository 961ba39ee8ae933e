"""Benchmark construction: the region-location task in its three variants,
generic 80/10/10 splitting, unary filtering, and seeded synthetic
generators so everything is testable without the original benchmark files
(which are user-supplied, in clause or TSV form).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .kb import Atom, Const, KnowledgeBase, Rule

log = logging.getLogger(__name__)


@dataclass
class SplitSpec:
    train: float = 0.8
    dev: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if abs(self.train + self.dev + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split_kb(kb, spec):
    """Partition facts by seeded shuffle into train/dev/test KBs sharing one
    symbol table; non-fact rules always stay in train.  Every predicate
    occurring in dev or test must also occur in train; splits violating that
    are re-sampled, with a deterministic pinning fallback."""
    facts = kb.facts()
    rules = [r for r in kb.rules if not r.is_fact()]
    n = len(facts)
    n_dev = int(round(n * spec.dev))
    n_test = int(round(n * spec.test))
    rng = np.random.default_rng(spec.seed)

    def attempt(order, pinned=()):
        order = [i for i in order if i not in pinned]
        test_idx = order[:n_test]
        dev_idx = order[n_test : n_test + n_dev]
        train_idx = list(pinned) + order[n_test + n_dev :]
        train_preds = {facts[i].head.pred for i in train_idx}
        held = {facts[i].head.pred for i in test_idx + dev_idx}
        if held - train_preds:
            return None
        return train_idx, dev_idx, test_idx

    result = None
    for _ in range(50):
        result = attempt(list(rng.permutation(n)))
        if result is not None:
            break
    if result is None:
        pinned = {}
        for i, f in enumerate(facts):
            pinned.setdefault(f.head.pred, i)
        result = attempt(list(rng.permutation(n)), pinned=set(pinned.values()))
        if result is None:
            raise ValueError("cannot satisfy predicate coverage in split")
    train_idx, dev_idx, test_idx = result
    mk = lambda idx: KnowledgeBase(kb.symbols, [facts[i] for i in sorted(idx)])
    train = KnowledgeBase(kb.symbols, rules + [facts[i] for i in sorted(train_idx)])
    return train, mk(dev_idx), mk(test_idx)


def filter_unary(kb):
    """Drop all facts whose predicate arity is 1 (the protocol for KBs that
    mix unary attributes into a binary-relation benchmark)."""
    kept = [r for r in kb.rules if not (r.is_fact() and r.head.arity == 1)]
    return KnowledgeBase(kb.symbols, kept)


# --------------------------------------------------------------------------
# Region-location task (Countries)
# --------------------------------------------------------------------------

@dataclass
class CountriesTask:
    variant: str
    train: KnowledgeBase
    dev: list  # constant indices of dev countries
    test: list
    regions: list  # constant indices of the regions
    true_regions: dict  # country index -> set of true region indices
    removed: dict = field(default_factory=dict)  # per-stage removal counts

    def queries(self, countries):
        """(country, region) target pairs for a country list."""
        return [(c, r) for c in countries for r in self.regions]

    def positives(self, countries):
        return {(c, r) for c in countries for r in self.true_regions.get(c, ())}


def _role_split(kb, located, neighbor):
    subjects = set()
    objects = set()
    for r in kb.facts():
        if r.head.pred == located:
            subjects.add(r.head.args[0].index)
            objects.add(r.head.args[1].index)
    countries = subjects - objects
    regions = objects - subjects
    subregions = subjects & objects
    return countries, subregions, regions


def build_countries(base_kb, variant, seed, n_dev=None, n_test=None, max_retries=1000):
    """Split countries into train/dev/test (every dev/test country keeps at
    least one neighbor among training countries) and remove location facts
    per task variant, cumulatively:

    * S1 removes locatedIn(c, region) for held-out countries c;
    * S2 additionally removes locatedIn(c, subregion);
    * S3 additionally removes the region facts of training countries that
      neighbor a held-out country.
    """
    variant = variant.upper()
    if variant not in ("S1", "S2", "S3"):
        raise ValueError(f"unknown variant {variant!r}")
    syms = base_kb.symbols
    try:
        located = syms.predicate_index("locatedIn")
        neighbor = syms.predicate_index("neighborOf")
    except KeyError as e:
        raise ValueError(f"base KB missing required predicate: {e}") from None
    countries, subregions, regions = _role_split(base_kb, located, neighbor)
    countries = sorted(countries)
    n = len(countries)
    n_dev = n_dev if n_dev is not None else max(1, n // 12)
    n_test = n_test if n_test is not None else max(1, n // 12)
    neighbors = {}
    for r in base_kb.facts():
        if r.head.pred == neighbor:
            a, b = (t.index for t in r.head.args)
            neighbors.setdefault(a, set()).add(b)

    rng = np.random.default_rng(seed)
    for attempt in range(max_retries):
        order = [countries[i] for i in rng.permutation(n)]
        test = sorted(order[:n_test])
        dev = sorted(order[n_test : n_test + n_dev])
        train_set = set(order[n_test + n_dev :])
        if all(neighbors.get(c, set()) & train_set for c in test + dev):
            break
    else:
        raise ValueError(f"no split satisfying the neighbor constraint after {max_retries} tries")

    held = set(test) | set(dev)
    remove = set()
    stage_counts = {}

    def mark(stage, pred, subj_set, obj_set):
        added = 0
        for ri, r in enumerate(base_kb.rules):
            if not r.is_fact() or r.head.pred != pred:
                continue
            a, b = (t.index for t in r.head.args)
            if a in subj_set and b in obj_set and ri not in remove:
                remove.add(ri)
                added += 1
        stage_counts[stage] = added

    mark("S1", located, held, set(regions))
    if variant in ("S2", "S3"):
        mark("S2", located, held, subregions)
    if variant == "S3":
        exposed = {c for c in train_set if neighbors.get(c, set()) & held}
        mark("S3", located, exposed, set(regions))

    true_regions = {}
    for r in base_kb.facts():
        if r.head.pred == located and r.head.args[1].index in regions:
            true_regions.setdefault(r.head.args[0].index, set()).add(r.head.args[1].index)

    kept = [r for ri, r in enumerate(base_kb.rules) if ri not in remove]
    return CountriesTask(
        variant=variant,
        train=KnowledgeBase(syms, kept),
        dev=dev,
        test=test,
        regions=sorted(regions),
        true_regions=true_regions,
        removed=stage_counts,
    )


def synth_geography(n_regions=5, n_subregions=12, n_countries=60, neighbor_bias=0.9, seed=0,
                    max_neighbors=3):
    """Schema-identical synthetic fallback for the region-location data:
    hierarchical locatedIn facts (country -> subregion -> region, plus the
    country -> region hop) and symmetric neighborOf edges that stay within
    the same subregion with probability `neighbor_bias`.  Each country draws
    1..max_neighbors edges."""
    if min(n_regions, n_subregions, n_countries, max_neighbors) <= 0:
        raise ValueError("counts must be positive")
    if not 0.0 <= neighbor_bias <= 1.0:
        raise ValueError("neighbor_bias must be in [0, 1]")
    rng = np.random.default_rng(seed)
    kb = KnowledgeBase()
    syms = kb.symbols
    located = syms.intern_predicate("locatedIn", 2)
    neighbor = syms.intern_predicate("neighborOf", 2)
    regions = [syms.intern_constant(f"region{i}") for i in range(n_regions)]
    subregions = [syms.intern_constant(f"subregion{i}") for i in range(n_subregions)]
    countries = [syms.intern_constant(f"country{i}") for i in range(n_countries)]
    sub_region = {s: regions[int(rng.integers(0, n_regions))] for s in subregions}
    country_sub = {}
    rules = []

    def fact(p, a, b):
        rules.append(Rule(Atom(p, (Const(a), Const(b)))))

    for s in subregions:
        fact(located, s, sub_region[s])
    for c in countries:
        s = subregions[int(rng.integers(0, n_subregions))]
        country_sub[c] = s
        fact(located, c, s)
        fact(located, c, sub_region[s])

    by_sub = {}
    for c, s in country_sub.items():
        by_sub.setdefault(s, []).append(c)
    edges = set()
    for c in countries:
        n_edges = int(rng.integers(1, max_neighbors + 1))
        for _ in range(n_edges):
            same = by_sub[country_sub[c]]
            if rng.random() < neighbor_bias and len(same) > 1:
                other = same[int(rng.integers(0, len(same)))]
                while other == c:
                    other = same[int(rng.integers(0, len(same)))]
            else:
                other = countries[int(rng.integers(0, n_countries))]
                if other == c:
                    continue
            edges.add((min(c, other), max(c, other)))
    for a, b in sorted(edges):
        fact(neighbor, a, b)
        fact(neighbor, b, a)
    return KnowledgeBase(syms, rules)


def synth_hierarchy(n_tops=10, n_mids=24, seed=1, distractors=True):
    """Pure transitive-location data for rule-induction experiments: one
    item per mid tier, two tops per mid with a unique top pair (so no
    similarity shortcut explains the 2-hop facts), plus optional distractor
    predicates to make rule decoding non-trivial."""
    rng = np.random.default_rng(seed)
    pairs = [(a, b) for a in range(n_tops) for b in range(a + 1, n_tops)]
    if n_mids > len(pairs):
        raise ValueError("n_mids must not exceed the number of distinct top pairs")
    sel = rng.choice(len(pairs), size=n_mids, replace=False)
    lines = []
    for m in range(n_mids):
        ta, tb = pairs[int(sel[m])]
        lines.append(f"locatedIn(item{m}, mid{m}).")
        lines += [f"locatedIn(mid{m}, top{t})." for t in (ta, tb)]
        lines += [f"locatedIn(item{m}, top{t})." for t in (ta, tb)]
    if distractors:
        for m in range(0, n_mids, 2):
            lines.append(f"partnerOf(item{m}, item{(m + 1) % n_mids}).")
            lines.append(f"partnerOf(item{(m + 1) % n_mids}, item{m}).")
        for m in range(0, n_mids, 3):
            lines.append(f"exports(item{m}, top{int(sel[m]) % n_tops}).")
    from .kb import parse_kb

    return parse_kb("\n".join(lines))


def synth_kinship(n_families=4, generations=3, children=2, seed=0):
    """Small family-graph KB: parentOf/fatherOf/motherOf/marriedTo plus the
    derivable grandparentOf, for self-contained ranking experiments."""
    rng = np.random.default_rng(seed)
    kb = KnowledgeBase()
    syms = kb.symbols
    preds = {n: syms.intern_predicate(n, 2) for n in
             ("parentOf", "fatherOf", "motherOf", "marriedTo", "grandparentOf")}
    rules = []

    def fact(p, a, b):
        rules.append(Rule(Atom(preds[p], (Const(a), Const(b)))))

    person = 0
    for fam in range(n_families):
        layer = []
        for _ in range(2):
            layer.append(syms.intern_constant(f"p{person}"))
            person += 1
        fact("marriedTo", layer[0], layer[1])
        fact("marriedTo", layer[1], layer[0])
        grandparents = []
        for gen in range(1, generations):
            next_layer = []
            for parent_pair in range(max(1, len(layer) // 2)):
                father, mother = layer[2 * parent_pair % len(layer)], layer[(2 * parent_pair + 1) % len(layer)]
                for _ in range(children):
                    c = syms.intern_constant(f"p{person}")
                    person += 1
                    fact("fatherOf", father, c)
                    fact("motherOf", mother, c)
                    fact("parentOf", father, c)
                    fact("parentOf", mother, c)
                    for g in grandparents:
                        fact("grandparentOf", g, c)
                    next_layer.append(c)
            grandparents = layer
            layer = next_layer
            if len(layer) >= 2 and rng.random() < 0.8:
                fact("marriedTo", layer[0], layer[1])
                fact("marriedTo", layer[1], layer[0])
    return KnowledgeBase(syms, rules)


# --------------------------------------------------------------------------
# Task serialization
# --------------------------------------------------------------------------

def write_countries_task(task, base_kb, out_dir):
    """train.nl / dev.nl / test.nl plus a manifest with removal counts."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    syms = base_kb.symbols
    with open(f"{out_dir}/train.nl", "w", encoding="utf-8") as fh:
        fh.write(task.train.serialize())
    for split, members in (("dev", task.dev), ("test", task.test)):
        with open(f"{out_dir}/{split}.nl", "w", encoding="utf-8") as fh:
            for c in members:
                for r in sorted(task.true_regions.get(c, ())):
                    fh.write(f"locatedIn({syms.constants[c]}, {syms.constants[r]}).\n")
    manifest = {
        "task": f"countries-{task.variant.lower()}",
        "variant": task.variant,
        "removed": task.removed,
        "regions": [syms.constants[r] for r in task.regions],
        "dev_countries": [syms.constants[c] for c in task.dev],
        "test_countries": [syms.constants[c] for c in task.test],
        "n_train_rules": len(task.train.rules),
    }
    with open(f"{out_dir}/manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def write_split(train, dev, test, out_dir, meta=None):
    import os

    os.makedirs(out_dir, exist_ok=True)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        with open(f"{out_dir}/{name}.nl", "w", encoding="utf-8") as fh:
            fh.write(part.serialize())
    manifest = {"task": "split", "counts": {"train": len(train.rules), "dev": len(dev.rules), "test": len(test.rules)}}
    if meta:
        manifest.update(meta)
    with open(f"{out_dir}/manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
