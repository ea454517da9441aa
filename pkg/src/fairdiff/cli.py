"""Command-line entry points for the staged debiasing experiments.

Stage subcommands (sample, train-sensitive, train-scores, debias,
train-classifier, evaluate) operate on one seed and share the checkpoint
layout of the pipeline command, so any prefix of the pipeline can be run,
inspected, and resumed. ``pipeline`` runs every configured seed and emits
the report artifacts; ``sweep`` repeats the pipeline over a grid of one
hyperparameter.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_config,
    preset_names,
    preset_text,
)
from .data import DataError
from .pipeline import (
    FairnessReport,
    apply_sweep_value,
    emit_report,
    emit_sweep,
    run_pipeline,
)
from .sampling import dump_subgraph_set

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairdiff",
        description="Fairness-aware subgraph diffusion for debiased node classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, need_out: bool):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment config file")
        p.add_argument("--preset", help=f"bundled preset ({', '.join(preset_names())})")
        p.add_argument("--seed", type=int, help="override the config seed list with one seed")
        p.add_argument(
            "--out",
            type=Path,
            required=need_out,
            help="output directory for artifacts and checkpoints",
        )
        return p

    add("sample", "sample subgraphs and write the JSONL dump", need_out=True)
    add("train-sensitive", "train the sensitive-attribute adversary", need_out=True)
    add("train-scores", "train both score networks", need_out=True)
    add("debias", "run reverse diffusion and pruning over the subgraph set", need_out=True)
    add("train-classifier", "train the node classifier on the final subgraphs", need_out=True)
    add("evaluate", "run the full per-seed pipeline and print metrics", need_out=False)
    add("pipeline", "run all seeds and emit report artifacts", need_out=False)
    sweep = add("sweep", "run the pipeline over a hyperparameter grid", need_out=True)
    sweep.add_argument(
        "--param", required=True, choices=sorted(pl.SWEEP_PARAMS), help="hyperparameter to sweep"
    )
    sweep.add_argument("--values", required=True, help="comma-separated numeric values")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    if args.config is not None and args.preset is not None:
        raise ConfigError("pass either --config or --preset, not both")
    if args.preset is not None:
        cfg = parse_config(preset_text(args.preset))
    elif args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = parse_config("")
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        cfg = dc_replace(cfg, run=dc_replace(cfg.run, seeds=(args.seed,)))
    return cfg


def _stage_seed(cfg: ExperimentConfig) -> int:
    return cfg.run.seeds[0]


def _ckpt_dir(cfg: ExperimentConfig, out: Path | None) -> Path | None:
    if out is None:
        return None
    return out / "checkpoints" / cfg.fingerprint()[:12]


def _ckpt(cfg: ExperimentConfig, out: Path | None, seed: int, name: str) -> Path | None:
    root = _ckpt_dir(cfg, out)
    return None if root is None else root / f"seed{seed}" / f"{name}.ckpt"


def _sampled(cfg: ExperimentConfig, seed: int):
    graph = pl._load_dataset(cfg, seed)
    return graph, pl._sample_subgraphs(cfg, graph, seed)


def _trained_scores(cfg, out, seed, subgraphs):
    adversary = None
    if pl._needs_adversary(cfg):
        adversary = pl._train_adversary(subgraphs, cfg, seed, _ckpt(cfg, out, seed, "adversary"))
    return pl._train_scores(subgraphs, adversary, cfg, seed, _ckpt(cfg, out, seed, "scores"))


def _final_subgraphs(cfg, out, seed, subgraphs):
    if cfg.run.mode == "no_diffusion":
        return subgraphs
    models, _ = _trained_scores(cfg, out, seed, subgraphs)
    return pl._debias(subgraphs, models, cfg, seed, _ckpt(cfg, out, seed, "debiased"))


def _edge_count(adjacency: np.ndarray) -> int:
    return int(np.count_nonzero(np.triu(adjacency, k=1)))


def cmd_sample(cfg, args) -> int:
    seed = _stage_seed(cfg)
    _, subgraphs = _sampled(cfg, seed)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"subgraphs_seed{seed}.jsonl"
    dump_subgraph_set(subgraphs, path)
    sizes = [sub.n_nodes for sub in subgraphs]
    print(f"sampled {len(subgraphs)} subgraphs (mean size {np.mean(sizes):.2f}) -> {path}")
    return EXIT_OK


def cmd_train_sensitive(cfg, args) -> int:
    seed = _stage_seed(cfg)
    if not pl._needs_adversary(cfg):
        print("adversary not needed: fairness scales are zero or mode skips diffusion")
        return EXIT_OK
    _, subgraphs = _sampled(cfg, seed)
    pl._train_adversary(subgraphs, cfg, seed, _ckpt(cfg, args.out, seed, "adversary"))
    print(f"adversary checkpoint -> {_ckpt(cfg, args.out, seed, 'adversary')}")
    return EXIT_OK


def cmd_train_scores(cfg, args) -> int:
    seed = _stage_seed(cfg)
    if cfg.run.mode == "no_diffusion":
        print("mode no_diffusion skips score training")
        return EXIT_OK
    _, subgraphs = _sampled(cfg, seed)
    _, curve = _trained_scores(cfg, args.out, seed, subgraphs)
    if curve:
        final = curve[-1]
        print(f"final losses: theta={final[1]:.6f} phi={final[2]:.6f}")
    print(f"scores checkpoint -> {_ckpt(cfg, args.out, seed, 'scores')}")
    return EXIT_OK


def cmd_debias(cfg, args) -> int:
    seed = _stage_seed(cfg)
    if cfg.run.mode == "no_diffusion":
        print("mode no_diffusion skips debiasing")
        return EXIT_OK
    _, subgraphs = _sampled(cfg, seed)
    debiased = _final_subgraphs(cfg, args.out, seed, subgraphs)
    args.out.mkdir(parents=True, exist_ok=True)
    dump_path = args.out / f"debiased_seed{seed}.jsonl"
    dump_subgraph_set(debiased, dump_path)
    counts_path = args.out / f"edge_counts_seed{seed}.csv"
    rows = ["index,root,edges_before,edges_after"]
    for i, (before, after) in enumerate(zip(subgraphs, debiased)):
        rows.append(
            f"{i},{before.root},{_edge_count(before.adjacency)},{_edge_count(after.adjacency)}"
        )
    counts_path.write_text("\n".join(rows) + "\n")
    print(f"debiased {len(debiased)} subgraphs -> {dump_path}")
    print(f"edge counts -> {counts_path}")
    return EXIT_OK


def cmd_train_classifier(cfg, args) -> int:
    seed = _stage_seed(cfg)
    _, subgraphs = _sampled(cfg, seed)
    final = _final_subgraphs(cfg, args.out, seed, subgraphs)
    pl._train_classifier(final, cfg, seed, _ckpt(cfg, args.out, seed, "classifier"))
    print(f"classifier checkpoint -> {_ckpt(cfg, args.out, seed, 'classifier')}")
    return EXIT_OK


def _metric_str(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def cmd_evaluate(cfg, args) -> int:
    seed = _stage_seed(cfg)
    result = pl.run_seed(cfg, seed, _ckpt_dir(cfg, args.out))
    m = result.metrics
    print(
        f"seed {seed}: acc={_metric_str(m.accuracy)} dp={_metric_str(m.delta_dp)} "
        f"eo={_metric_str(m.delta_eo)} n_eval={m.n_eval} n_excluded={m.n_excluded}"
    )
    return EXIT_OK


def _print_report(report: FairnessReport) -> None:
    print(f"run {report.run_id} mode={report.mode} seeds={','.join(map(str, report.seeds))}")
    for result in report.results:
        m = result.metrics
        print(
            f"  seed {result.seed}: acc={_metric_str(m.accuracy)} "
            f"dp={_metric_str(m.delta_dp)} eo={_metric_str(m.delta_eo)}"
        )
    for name in pl.METRIC_FIELDS:
        print(f"  {name}: {report.mean(name):.4f} +/- {report.std(name):.4f}")


def cmd_pipeline(cfg, args) -> int:
    report = run_pipeline(cfg, args.out)
    _print_report(report)
    if args.out is not None:
        paths = emit_report(report, args.out)
        print("artifacts: " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_sweep(cfg, args) -> int:
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc
    if not values:
        raise ConfigError("--values lists no values")
    reports = []
    for value in values:
        swept = apply_sweep_value(cfg, args.param, value)
        report = run_pipeline(swept, args.out)
        reports.append(report)
        print(f"{args.param}={value}: acc={report.mean('acc'):.4f} dp={report.mean('dp'):.4f}")
    path = emit_sweep(args.param, values, reports, args.out)
    print(f"sweep csv -> {path}")
    return EXIT_OK


_COMMANDS = {
    "sample": cmd_sample,
    "train-sensitive": cmd_train_sensitive,
    "train-scores": cmd_train_scores,
    "debias": cmd_debias,
    "train-classifier": cmd_train_classifier,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
}


def _exit_code_for(exc: Exception) -> int:
    seen: Exception | None = exc
    while seen is not None:
        if isinstance(seen, ConfigError):
            return EXIT_CONFIG
        if isinstance(seen, DataError):
            return EXIT_DATA
        seen = seen.__cause__ if isinstance(seen.__cause__, Exception) else None
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return _COMMANDS[args.command](cfg, args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
