"""Command-line entry point: train, eval, prove, decode-rules,
build-dataset, and gradcheck subcommands.

Configuration is a JSON file plus flag overrides (flags win); the
reference hyperparameter sets are available as named presets.  `PROVERFORGE_SEED` is the
seed fallback when neither config nor flag provides one.  Exit codes:
0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import diffcore as dc
from . import linkpred as lp
from . import ntp as ntp_mod
from . import rulereg, symbolic
from .datasets import (SplitSpec, build_countries, split_kb, synth_geography,
                       write_countries_task, write_split)
from .diffcore import TrainConfig, dump_store_text, grad_check, load_store, save_store
from .kb import ParseError, PairSpace, load_kb_file, parse_atom, parse_kb, parse_templates
from .metrics import metrics_json, metrics_tsv, mrr_hits, ranks_dump
from .ntp import NTPConfig
from .training import (MODELS, NTP_MODELS, PAIR_MODELS, NumericFailure, ModelBundle,
                       binary_fact_triples, build_bundle, countries_auc,
                       filtered_ranking, relation_map, train_bundle)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PRESETS = {
    # grounded rule injection: NLL objective, larger epoch budget
    "grounded-rules": {"k": 100, "train": {"learning_rate": 0.001, "l2_weight": 0.01, "epochs": 200}},
    # lifted implication injection
    "lifted-rules": {
        "k": 100,
        "train": {
            "learning_rate": 0.005, "batch_size": 8192, "l2_weight": 0.01,
            "epochs": 100, "init": "uniform", "init_range": 0.1,
        },
    },
    # differentiable proving; k is a local default, the rest is the reference recipe
    "prover": {
        "k": 32,
        "train": {"learning_rate": 0.001, "batch_size": 50, "l2_weight": 0.01, "epochs": 100},
        "ntp": {"depth": 2, "k_max": 10},
    },
}
PRESETS["ntp"] = PRESETS["prover"]


def _seed_default():
    env = os.environ.get("PROVERFORGE_SEED")
    return int(env) if env else 0


def build_run_config(args):
    """Merge preset < config file < flags into (model, k, TrainConfig,
    NTPConfig, misc)."""
    merged = {"train": {}, "ntp": {}}
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        for key, val in PRESETS[preset].items():
            if isinstance(val, dict):
                merged[key].update(val)
            else:
                merged[key] = val
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key, val in file_cfg.items():
            if key in ("train", "ntp") and isinstance(val, dict):
                merged[key].update(val)
            else:
                merged[key] = val
    for name in ("model", "k", "rule_weight"):
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            merged[name] = val
    for name in ("learning_rate", "batch_size", "l2_weight", "epochs", "seed", "init"):
        val = getattr(args, name, None)
        if val is not None:
            merged["train"][name] = val
    for name, key in (("depth", "depth"), ("k_max", "k_max"), ("mu", "mu"), ("aux_weight", "aux_weight")):
        val = getattr(args, name, None)
        if val is not None:
            merged["ntp"][key] = val
    merged["train"].setdefault("seed", _seed_default())
    train = TrainConfig(**merged["train"])
    ntp_cfg = NTPConfig(**merged["ntp"]) if merged["ntp"] else NTPConfig()
    model = merged.get("model")
    k = merged.get("k", 32)
    rule_weight = merged.get("rule_weight", 1.0)
    return model, int(k), train, ntp_cfg, rule_weight


def _load_inputs(args, model):
    kb = load_kb_file(args.kb)
    templates = ()
    injected = ()
    if getattr(args, "templates", None):
        if model not in NTP_MODELS:
            raise ValueError("--templates is only valid with ntp/ntp-lambda")
        with open(args.templates, encoding="utf-8") as fh:
            templates = parse_templates(fh.read())
    if getattr(args, "rules", None):
        if model not in ("joint-rules", "fs", "fsl"):
            raise ValueError("--rules is only valid with joint-rules/fs/fsl")
        with open(args.rules, encoding="utf-8") as fh:
            injected = parse_kb(fh.read(), symbols=kb.symbols).rules
    return kb, templates, injected


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_train(args):
    model, k, train_cfg, ntp_cfg, rule_weight = build_run_config(args)
    if model not in MODELS:
        raise ValueError(f"--model must be one of {MODELS}")
    kb, templates, injected = _load_inputs(args, model)
    bundle = build_bundle(model, kb, k, templates, injected, ntp_cfg, train_cfg)
    if getattr(args, "centroid_params", False):
        from .training import centroid_init_params

        centroid_init_params(bundle, np.random.default_rng(train_cfg.seed + 100))
    os.makedirs(args.out, exist_ok=True)
    loss_path = os.path.join(args.out, "loss.tsv")
    with open(loss_path, "a", encoding="utf-8") as fh:
        fh.write(f"# model={model} seed={train_cfg.seed} epochs={train_cfg.epochs}\n")

        def on_epoch(epoch, mean):
            fh.write(f"{epoch}\t{mean:.6f}\n")
            fh.flush()

        train_bundle(bundle, train_cfg, on_epoch=on_epoch)
    save_store(bundle.store, os.path.join(args.out, "checkpoint.ntpc"))
    dump_store_text(bundle.store, os.path.join(args.out, "checkpoint.txt"))
    with open(os.path.join(args.out, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"model": model, "k": k, "seed": train_cfg.seed, "epochs": train_cfg.epochs,
             "kb": args.kb, "templates": getattr(args, "templates", None),
             "rules": getattr(args, "rules", None), "rule_weight": rule_weight},
            fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"checkpoint written to {args.out}/checkpoint.ntpc")
    return EXIT_OK


def _rebuild_bundle(args, model, k, train_cfg, ntp_cfg):
    kb, templates, injected = _load_inputs(args, model)
    bundle = build_bundle(model, kb, k, templates, injected, ntp_cfg, train_cfg)
    loaded = load_store(args.checkpoint)
    if loaded.names != bundle.store.names:
        raise ValueError("checkpoint/vocabulary mismatch: symbol names differ from the KB")
    if loaded.k != bundle.store.k or loaded.complex_pairs != bundle.store.complex_pairs:
        raise ValueError("checkpoint/vocabulary mismatch: dimension or complex flag differs")
    bundle.store.real[...] = loaded.real
    if loaded.complex_pairs:
        bundle.store.imag[...] = loaded.imag
    return bundle


def cmd_eval(args):
    model, k, train_cfg, ntp_cfg, _ = build_run_config(args)
    if model is None:
        raise ValueError("--model (or a config file) is required for eval")
    bundle = _rebuild_bundle(args, model, k, train_cfg, ntp_cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.task and args.task.startswith("countries"):
        task_dir = os.path.dirname(os.path.abspath(args.kb))
        with open(os.path.join(task_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        auc = _countries_eval(bundle, manifest, task_dir, args.split)
        values = {"AUC-PR": auc}
    elif args.metric == "map":
        test_kb = load_kb_file(args.test, symbols=bundle.kb.symbols)
        per_rel = relation_map(bundle, bundle.kb, binary_fact_triples(test_kb))
        from .metrics import map_weighted

        m, wm = map_weighted(per_rel)
        values = {"MAP": m, "wMAP": wm}
    else:
        test_kb = load_kb_file(args.test, symbols=bundle.kb.symbols)
        filter_rules = list(bundle.kb.rules) + list(test_kb.rules)
        if args.dev:
            filter_rules += load_kb_file(args.dev, symbols=bundle.kb.symbols).rules
        from .kb import KnowledgeBase

        filter_kb = KnowledgeBase(bundle.kb.symbols, filter_rules)
        result = filtered_ranking(bundle, binary_fact_triples(test_kb), filter_kb)
        values = result.summary()
        if args.dump_ranks:
            with open(os.path.join(args.out, "ranks.tsv"), "w", encoding="utf-8") as fh:
                fh.write(ranks_dump(result, bundle.kb))
    with open(os.path.join(args.out, "metrics.tsv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_tsv(values))
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(metrics_json(values, extra={"model": model, "split": args.split}))
    print(metrics_tsv(values), end="")
    return EXIT_OK


def _countries_eval(bundle, manifest, task_dir, split):
    syms = bundle.kb.symbols
    held = manifest[f"{'test' if split == 'test' else 'dev'}_countries"]
    regions = manifest["regions"]
    targets = load_kb_file(os.path.join(task_dir, f"{split}.nl"), symbols=syms)
    located = syms.predicate_index("locatedIn")
    positives = {(t.head.args[0].index, t.head.args[1].index) for t in targets.facts()}
    queries = [(syms.constant_index(c), syms.constant_index(r)) for c in held for r in regions]
    T = np.array([(located, c, r) for c, r in queries], dtype=np.int64)
    scores = bundle.score_fn()(T)
    from .metrics import auc_pr

    return auc_pr([(float(s), q) for s, q in zip(scores, queries)], positives)


def cmd_prove(args):
    kb = load_kb_file(args.kb)
    try:
        query = parse_atom(args.query, kb.symbols, intern=False)
    except KeyError as e:
        raise ValueError(f"query uses unknown symbol: {e}") from None
    if not args.checkpoint:
        result = symbolic.prove(kb, query, args.depth)
        for grounding in result.substitutions:
            print(symbolic.format_substitution(kb, grounding))
        return EXIT_OK
    model = args.model or "ntp"
    _, k, train_cfg, ntp_cfg, _ = build_run_config(args)
    bundle = _rebuild_bundle(args, model, k, train_cfg, ntp_cfg)
    prover = bundle.prover
    terms = []
    qvars = []
    from .kb import Const, Var

    terms.append(ntp_mod.NSym(prover.vocab.pred_row(query.pred)))
    for t in query.args:
        if isinstance(t, Var):
            terms.append(ntp_mod.NVar(t.name))
            qvars.append(t.name)
        else:
            terms.append(ntp_mod.NSym(prover.emb_row(t)))
    tape = dc.Tape()
    states = prover.prove(tape, terms, depth=args.depth)
    rows = []
    for st in states:
        for r in range(st.size):
            binding = {}
            for v in qvars:
                val = ntp_mod.walk_term(ntp_mod.NVar(v), st.subst)
                if isinstance(val, ntp_mod.NSym):
                    binding[v] = val.row
                elif isinstance(val, ntp_mod.NBatch):
                    binding[v] = int(val.rows[r])
            rows.append((float(st.success.value[r]), binding))
    rows.sort(key=lambda x: -x[0])
    n_preds = prover.vocab.n_predicates
    for score, binding in rows[: args.top]:
        pretty = ", ".join(
            f"{v}/{kb.symbols.constants[row - n_preds] if row >= n_preds else kb.symbols.predicates[row]}"
            for v, row in binding.items()
        )
        print(f"{score:.4f}\t{{{pretty}}}")
    return EXIT_OK


def cmd_decode_rules(args):
    model = args.model or "ntp"
    _, k, train_cfg, ntp_cfg, _ = build_run_config(args)
    bundle = _rebuild_bundle(args, model, k, train_cfg, ntp_cfg)
    if not bundle.param_rules:
        raise ValueError("checkpoint has no parameterized predicates to decode")
    for decoded in ntp_mod.decode_all(bundle.param_rules, bundle.store, bundle.kb.symbols, ntp_cfg.mu):
        print(f"{decoded.confidence:.4f}\t{decoded.clause_str(bundle.kb.symbols)}")
    return EXIT_OK


def cmd_build_dataset(args):
    seed = args.seed if args.seed is not None else _seed_default()
    if args.task.startswith("countries-"):
        variant = args.task.split("-", 1)[1].upper()
        if args.base:
            base = load_kb_file(args.base)
        else:
            base = synth_geography(seed=seed)
        task = build_countries(base, variant, seed)
        manifest = write_countries_task(task, base, args.out)
    elif args.task == "split":
        if not args.base:
            raise ValueError("--base is required for task 'split'")
        base = load_kb_file(args.base)
        if args.filter_unary:
            from .datasets import filter_unary

            base = filter_unary(base)
        train, dev, test = split_kb(base, SplitSpec(seed=seed))
        manifest = write_split(train, dev, test, args.out, meta={"seed": seed})
    else:
        raise ValueError(f"unknown task {args.task!r}")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    failures = []
    reports = _gradcheck_suite(negative_control=args.self_test)
    for name, report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{name}\tmax_rel_err={report.max_rel_err:.3e}\ttol={report.tol:g}\t{status}")
        if not report.passed:
            failures.append(name)
    if args.self_test:
        # the deliberately broken fixture must fail; everything else must pass
        ok = failures == ["sign-flip-control"]
        print("self-test", "PASS" if ok else "FAIL")
        return EXIT_OK if ok else EXIT_NUMERIC
    return EXIT_OK if not failures else EXIT_NUMERIC


def _gradcheck_suite(negative_control=False):
    """Finite-difference checks for every loss on miniature fixtures."""
    from .gradcheck_fixtures import fixtures

    out = []
    for name, store, loss_fn, tol in fixtures(negative_control):
        out.append((name, grad_check(loss_fn, store, tol=tol)))
    return out


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _add_config_flags(p, model_flag=True):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--preset", help=f"named hyperparameter preset: {sorted(PRESETS)}")
    if model_flag:
        p.add_argument("--model", choices=MODELS)
    p.add_argument("--k", type=int, help="embedding dimension")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--l2-weight", dest="l2_weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("xavier", "uniform"))
    p.add_argument("--depth", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--aux-weight", dest="aux_weight", type=float)
    p.add_argument("--rule-weight", dest="rule_weight", type=float)


def make_parser():
    parser = argparse.ArgumentParser(prog="proverforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint and loss log")
    _add_config_flags(p)
    p.add_argument("--kb", required=True)
    p.add_argument("--templates")
    p.add_argument("--rules")
    p.add_argument("--centroid-params", action="store_true",
                   help="start parameterized rule predicates at the predicate centroid")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--kb", required=True, help="training KB the checkpoint was built on")
    p.add_argument("--templates")
    p.add_argument("--rules")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", help="test facts (clause or TSV)")
    p.add_argument("--dev", help="extra facts for corruption filtering")
    p.add_argument("--task", help="countries-s1|s2|s3 for AUC-PR over the task grid")
    p.add_argument("--split", default="test", choices=("dev", "test"))
    p.add_argument("--metric", choices=("ranking", "map"), default="ranking")
    p.add_argument("--dump-ranks", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("prove", help="prove a query symbolically, or score proofs with a checkpoint")
    _add_config_flags(p)
    p.add_argument("--kb", required=True)
    p.add_argument("--templates")
    p.add_argument("--checkpoint")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("query")
    p.set_defaults(fn=cmd_prove, depth_default=3)

    p = sub.add_parser("decode-rules", help="print induced rules as gamma<TAB>clause, sorted")
    _add_config_flags(p)
    p.add_argument("--kb", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_decode_rules)

    p = sub.add_parser("build-dataset", help="build a benchmark task directory")
    p.add_argument("--task", required=True, help="countries-s1|countries-s2|countries-s3|split")
    p.add_argument("--base", help="base KB file; a synthetic base is generated when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-unary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("gradcheck", help="finite-difference check every loss on fixtures")
    p.add_argument("--self-test", action="store_true", help="include a sign-flipped negative control")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if not hasattr(args, "depth") or args.depth is None:
        args.depth = getattr(args, "depth_default", 2)
    try:
        return args.fn(args)
    except (ParseError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
