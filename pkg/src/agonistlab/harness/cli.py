"""Command-line entry point: ``agonistlab <command> [--config FILE] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..core import BaselineRegime
from .config import ConfigError, RunConfig
from .experiments import (EXPERIMENTS, ArtifactStore, Pipeline, StageError, task_and_subsets)

OUT_ENV = "AGONISTLAB_OUT"


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _cmd_defaults(args, cfg, out):
    print(cfg.to_json())


def _cmd_plant(args, cfg, out):
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    if cfg.task.kind == "world":
        path = store.with_writer("world.json", pipe.world.save)
    else:
        task, _ = task_and_subsets(pipe)
        path = store.with_writer("task.json", task.save)
    store.json("config.json", cfg.to_dict())
    store.metadata()
    print(out / path)


def _cmd_features(args, cfg, out):
    from ..stats import write_score_table

    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    scores, kept, reasons = pipe.features()
    names = pipe.world.matrix.names
    support = [i in kept for i in range(len(names))]
    path = store.with_writer("features.csv", lambda p: write_score_table(p, names, scores, support, reasons))
    store.metadata()
    print(f"{len(kept)}/{len(names)} predicates retained -> {out / path}")


def _cmd_rules(args, cfg, out):
    store = ArtifactStore(out)
    rules, _ = Pipeline(cfg).splitters(fake=args.fake)
    store.json("splitters.json", [r.to_dict() for r in rules])
    store.text("splitters.txt", "".join(r.to_text() + "\n" for r in rules))
    store.metadata()
    for r in rules:
        print(f"{r.mcc.get('validation', float('nan')):.3f}  {r.to_text()}")


def _cmd_coverage(args, cfg, out):
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    rules, _ = pipe.splitters()
    for b, (plus, minus) in sorted(pipe.rule_split(rules[0]).items()):
        if not plus or not minus:
            print(f"regime {b}: empty slice, no plan")
            continue
        plan = pipe.plan(plus, minus, args.kind, b)
        path = store.json(f"plan_b{b}.json", plan.to_dict())
        diag = plan.diagnostics.get("+", {})
        print(f"regime {b}: {len(plan.selected['+'])}+/{len(plan.selected['-'])}- "
              f"within-radius {diag.get('fraction_within', float('nan')):.3f} -> {out / path}")
    store.metadata()


def _cmd_reduce(args, cfg, out):
    from ..candidates import write_rankings_csv

    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    task, _ = task_and_subsets(pipe, args.task)
    universe, info = pipe.candidates(task)
    ranking = info.pop("ranking", None)
    if ranking is not None:
        store.with_writer("rankings.csv", lambda p: write_rankings_csv(p, ranking, universe))
    store.json("retained.json", {"info": info, "retained": {str(k): [str(c) for c in v] for k, v in universe.items()}})
    store.metadata()
    print(f"retained {sum(len(v) for v in universe.values())} candidates ({info['kind']})")


def _search(args, cfg, out, brute: bool):
    from ..baseline import brute_force_singletons
    from ..localizer import localize_layers, write_agonists_csv, write_tree_jsonl

    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    task, subsets = task_and_subsets(pipe, args.task)
    universe, _ = pipe.candidates(task)
    scfg = pipe.search_config
    for b, sub in sorted(subsets.items()):
        oracle = task.oracle()
        if brute:
            flat = [c for layer in sorted(universe) for c in universe[layer]]
            recs = brute_force_singletons(flat, oracle, sub, BaselineRegime(b), scfg.tau, scfg.epsilon,
                                          scfg.samples_per_slice, scfg.alpha)
            store.with_writer(f"brute_b{b}.csv", lambda p: write_agonists_csv(p, recs))
        else:
            recs, stats, tree = localize_layers(universe, oracle, sub, BaselineRegime(b), scfg)
            store.with_writer(f"tree_b{b}.jsonl", lambda p: write_tree_jsonl(p, tree))
            store.with_writer(f"agonists_b{b}.csv", lambda p: write_agonists_csv(p, recs))
        print(f"regime {b}: {len(recs)} agonists, {oracle.query_count} evaluations")
    store.metadata()


def _cmd_cha(args, cfg, out):
    _search(args, cfg, out, brute=False)


def _cmd_brute(args, cfg, out):
    _search(args, cfg, out, brute=True)


def _cmd_anchor(args, cfg, out):
    from ..localizer import localize_layers

    if cfg.task.kind != "world":
        raise ConfigError("anchoring needs a world task (predicates are required)")
    store = ArtifactStore(out)
    pipe = Pipeline(cfg)
    rules, _ = pipe.splitters()
    splits = {b: s for b, s in pipe.rule_split(rules[0]).items() if s[0] and s[1]}
    task = pipe.task(splits)
    oracle = task.oracle()
    universe, _ = pipe.candidates(task)
    for b, (plus, minus) in sorted(splits.items()):
        sub = pipe.plan(plus, minus, "spectral", b).eval_subset()
        recs, _, _ = localize_layers(universe, oracle, sub, BaselineRegime(b), pipe.search_config)
        anchors = pipe.anchor(oracle, recs, b, plus, minus)
        store.json(f"anchors_b{b}.json", [a.to_dict() for a in anchors])
        store.text(f"anchors_b{b}.txt", "".join(
            f"{a.neuron}\t{a.test_mcc}\t{a.rule.to_text() if a.rule else a.reason}\n" for a in anchors))
        print(f"regime {b}: {sum(a.high_quality for a in anchors)}/{len(anchors)} high-quality anchors")
    store.metadata()


def _experiment(name):
    def run(args, cfg, out):
        report = EXPERIMENTS[name](cfg, out)
        print(json.dumps(summarize(report), indent=1, sort_keys=True))
        print(f"artifacts in {out}")
    return run


def summarize(report: dict) -> dict:
    """Headline numbers of a report."""
    name = report.get("experiment")
    if name == "e0":
        r = report["result"]
        return {"hq_total": r["hq_total"], "union_coverage": {
            v["direction"]: v["union_coverage"]["fraction"] for v in r["regimes"].values() if "union_coverage" in v}}
    if name == "e1":
        return {c: v["median_hq"] for c, v in report["summary"].items()}
    if name == "e2":
        return {v["direction"]: {"recall": v["recall"]["overall"], "cost_ratio": v["cost"]["ratio"]}
                for v in report["regimes"].values()}
    if name == "e3":
        return {k: v["hq_at_threshold"] for k, v in report["plans"].items()}
    return {}


def _cmd_report(args, cfg, out):
    run = Path(args.run)
    report = json.loads((run / "report.json").read_text())
    summary = summarize(report)
    (run / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{report['experiment']} (seed {report['master_seed']}, config {report['config_digest']})")
    print(json.dumps(summary, indent=1, sort_keys=True))


COMMANDS = {
    "defaults": (_cmd_defaults, "print the default config"),
    "plant": (_cmd_plant, "generate a world or planted-task manifest"),
    "features": (_cmd_features, "score and filter predicates against baseline labels"),
    "rules": (_cmd_rules, "extract splitter rules"),
    "coverage": (_cmd_coverage, "build coverage plans"),
    "reduce": (_cmd_reduce, "reduce the candidate universe"),
    "cha": (_cmd_cha, "run the hierarchical ablation search"),
    "brute": (_cmd_brute, "run exhaustive singleton ablations"),
    "anchor": (_cmd_anchor, "anchor rules to localized agonists"),
    "e0": (_experiment("e0"), "end-to-end pipeline"),
    "e1": (_experiment("e1"), "splitter/coverage condition comparison"),
    "e2": (_experiment("e2"), "search vs exhaustive singletons"),
    "e3": (_experiment("e3"), "spectral vs random coverage"),
    "report": (_cmd_report, "summarize a finished run directory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agonistlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (dotted path)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        if name in ("reduce", "cha", "brute"):
            p.add_argument("--task", help="task manifest to use instead of generating one")
        if name == "rules":
            p.add_argument("--fake", action="store_true", help="permute labels first (control)")
        if name == "coverage":
            p.add_argument("--kind", choices=("spectral", "random"), default="spectral")
        if name == "report":
            p.add_argument("--run", required=True, help="run directory holding report.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = _out_dir(args)
        COMMANDS[args.command][0](args, cfg, out)
    except (ConfigError, StageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
