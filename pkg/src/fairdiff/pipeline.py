"""Staged experiment pipeline and report emission.

Each seed runs sample -> train adversary -> train score nets -> debias ->
train classifier -> evaluate, with the ablation modes cutting stages out:
``no_diffusion`` trains the classifier on the raw subgraphs, ``no_fairness``
keeps the diffusion but zeroes both fairness scales. Expensive stages write
checkpoints under ``<out>/checkpoints/<fingerprint prefix>/seed<N>/`` and are
reloaded on rerun; a stale or corrupt checkpoint is recomputed, never
trusted. Nothing in a report depends on wall-clock state, so two runs with
the same config and seeds produce byte-identical artifacts.
"""

from __future__ import annotations

import math
import os
import tempfile
import warnings
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .adversary import init_sensitive_params, train_sensitive
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classify import SeedMetrics, SubgraphEnsembleClassifier, init_classifier_params
from .config import ConfigError, ExperimentConfig
from .data import Graph, SbmBiasConfig, generate_biased_sbm, load_graph, split_nodes
from .debias import SubgraphDebiaser
from .diffusion import (
    DiffusionConfig,
    KernelParams,
    ScoreModelParams,
    init_feature_score,
    init_structure_score,
    train_score_models,
)
from .sampling import Subgraph, build_subgraph_set

__all__ = [
    "PipelineStageError",
    "SeedResult",
    "FairnessReport",
    "run_seed",
    "run_pipeline",
    "emit_report",
    "emit_sweep",
    "apply_sweep_value",
    "SWEEP_PARAMS",
]

# RNG stream tags so stages draw from independent substreams of the run seed.
_ADVERSARY_STREAM = 7

METRIC_FIELDS = ("acc", "dp", "eo")


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and seed."""

    def __init__(self, stage: str, seed: int, cause: Exception):
        super().__init__(f"stage '{stage}' failed for seed {seed}: {cause}")
        self.stage = stage
        self.seed = seed


@dataclass(frozen=True)
class SeedResult:
    """Evaluation metrics plus the score-training curve for one seed."""

    seed: int
    metrics: SeedMetrics
    curve: tuple[tuple[int, float, float], ...]

    def metric(self, name: str) -> float:
        value = {
            "acc": self.metrics.accuracy,
            "dp": self.metrics.delta_dp,
            "eo": self.metrics.delta_eo,
        }[name]
        return math.nan if value is None else float(value)


@dataclass(frozen=True)
class FairnessReport:
    """Aggregated pipeline outcome across seeds."""

    run_id: str
    fingerprint: str
    mode: str
    seeds: tuple[int, ...]
    results: tuple[SeedResult, ...]

    def per_seed(self, name: str) -> list[float]:
        return [r.metric(name) for r in self.results]

    def mean(self, name: str) -> float:
        values = [v for v in self.per_seed(name) if not math.isnan(v)]
        return sum(values) / len(values) if values else math.nan

    def std(self, name: str) -> float:
        values = [v for v in self.per_seed(name) if not math.isnan(v)]
        if not values:
            return math.nan
        mean = sum(values) / len(values)
        return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


# -- stage implementations ----------------------------------------------------


def _load_dataset(cfg: ExperimentConfig, seed: int) -> Graph:
    ds = cfg.dataset
    fractions = (ds.train_frac, ds.val_frac, ds.test_frac)
    if ds.source == "sbm":
        graph = generate_biased_sbm(
            SbmBiasConfig(
                n_nodes=ds.n_nodes,
                n_features=ds.n_features,
                group_fraction=ds.group_fraction,
                homophily=ds.homophily,
                cross_prob=ds.cross_prob,
                label_bias=ds.label_bias,
                feature_leak=ds.feature_leak,
                seed=seed,
            )
        )
        return split_nodes(graph, fractions, seed=seed)
    graph = load_graph(
        ds.nodes,
        ds.edges,
        ds.splits or None,
        standardize=ds.standardize,
        include_sensitive=ds.include_sensitive,
    )
    if not ds.splits:
        graph = split_nodes(graph, fractions, seed=seed)
    return graph


def _sample_roots(cfg: ExperimentConfig, graph: Graph, seed: int):
    n_roots = cfg.sampler.n_roots
    if n_roots == 0 or n_roots >= graph.n_nodes:
        return None  # build_subgraph_set default: every node
    picks = np.random.default_rng(seed).choice(graph.n_nodes, size=n_roots, replace=False)
    return sorted(int(r) for r in picks)


def _sample_subgraphs(cfg: ExperimentConfig, graph: Graph, seed: int) -> list[Subgraph]:
    roots = _sample_roots(cfg, graph, seed)
    return build_subgraph_set(graph, cfg.sampler.depth, cfg.sampler.fanout, seed=seed, roots=roots)


def _diffusion_config(cfg: ExperimentConfig) -> DiffusionConfig:
    d = cfg.diffusion
    lam_x, lam_a = (0.0, 0.0) if cfg.run.mode == "no_fairness" else (d.lambda_x, d.lambda_a)
    kernel = KernelParams(beta_min=d.beta_min, beta_max=d.beta_max)
    return DiffusionConfig(
        kernel_x=kernel,
        kernel_a=kernel,
        lambda_x=lam_x,
        lambda_a=lam_a,
        maxiters=d.maxiters,
        lr=d.lr,
        weight_decay=d.weight_decay,
        clip_norm=d.clip_norm,
    )


def _needs_adversary(cfg: ExperimentConfig) -> bool:
    d = cfg.diffusion
    return cfg.run.mode == "full" and (d.lambda_x > 0.0 or d.lambda_a > 0.0)


# -- checkpoint plumbing -------------------------------------------------------


def _param_arrays(params: dict[str, Tensor], prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + name: tensor.data for name, tensor in params.items()}


def _restore_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Overwrite freshly initialized parameters with checkpointed values."""
    expected = {prefix + name for name in params}
    stored = {name for name in arrays if name.startswith(prefix)}
    if expected != stored:
        raise CheckpointError("checkpoint parameter names do not match the architecture")
    for name, tensor in params.items():
        value = arrays[prefix + name]
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"checkpoint shape {value.shape} does not match {name} {tensor.data.shape}"
            )
        tensor.data = value.copy()


def _try_load(path: Path | None) -> dict[str, np.ndarray] | None:
    if path is None or not path.is_file():
        return None
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        warnings.warn(f"ignoring invalid checkpoint {path}: {exc}")
        return None


def _maybe_save(path: Path | None, arrays: dict[str, np.ndarray]) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, arrays)


def _train_adversary(subgraphs: list[Subgraph], cfg: ExperimentConfig, seed: int, path: Path | None):
    in_dim = subgraphs[0].features.shape[1]
    rng = np.random.default_rng([seed, _ADVERSARY_STREAM])
    params = init_sensitive_params(rng, in_dim)
    stored = _try_load(path)
    if stored is not None:
        try:
            _restore_params(params, stored)
            return params
        except CheckpointError as exc:
            warnings.warn(f"ignoring invalid checkpoint {path}: {exc}")
    d = cfg.diffusion
    train_sensitive(
        params,
        subgraphs,
        epochs=d.adversary_epochs,
        lr=d.adversary_lr,
        dropout=d.adversary_dropout,
        rng=rng,
    )
    _maybe_save(path, _param_arrays(params))
    return params


def _train_scores(
    subgraphs: list[Subgraph],
    adversary,
    cfg: ExperimentConfig,
    seed: int,
    path: Path | None,
) -> tuple[ScoreModelParams, tuple[tuple[int, float, float], ...]]:
    in_dim = subgraphs[0].features.shape[1]
    stored = _try_load(path)
    if stored is not None:
        init_rng = np.random.default_rng(seed)
        models = ScoreModelParams(
            theta=init_feature_score(init_rng, in_dim),
            phi=init_structure_score(init_rng, in_dim),
        )
        try:
            _restore_params(models.theta, stored, "theta.")
            _restore_params(models.phi, stored, "phi.")
            raw_curve = stored["curve"]
            curve = tuple((int(it), float(lt), float(lp)) for it, lt, lp in raw_curve)
            return models, curve
        except (CheckpointError, KeyError, ValueError) as exc:
            warnings.warn(f"ignoring invalid checkpoint {path}: {exc}")
    models, curve_list = train_score_models(subgraphs, adversary, _diffusion_config(cfg), seed)
    curve = tuple((int(it), float(lt), float(lp)) for it, lt, lp in curve_list)
    arrays = _param_arrays(models.theta, "theta.")
    arrays.update(_param_arrays(models.phi, "phi."))
    arrays["curve"] = np.asarray(curve_list, dtype=np.float64).reshape(len(curve_list), 3)
    _maybe_save(path, arrays)
    return models, curve


def _debias(
    subgraphs: list[Subgraph],
    models: ScoreModelParams,
    cfg: ExperimentConfig,
    seed: int,
    path: Path | None,
) -> list[Subgraph]:
    stored = _try_load(path)
    if stored is not None:
        restored = _restore_subgraphs(subgraphs, stored)
        if restored is not None:
            return restored
        warnings.warn(f"ignoring invalid checkpoint {path}: wrong subgraph shapes")
    rv = cfg.reverse
    debiaser = SubgraphDebiaser(
        n_steps=rv.n_steps,
        r_x=rv.r_x,
        r_a=rv.r_a,
        tau=rv.tau,
        beta_min=cfg.diffusion.beta_min,
        beta_max=cfg.diffusion.beta_max,
        seed=seed,
    ).fit(models)
    debiased = debiaser.transform(subgraphs)
    arrays: dict[str, np.ndarray] = {"count": np.float64(len(debiased))}
    for i, sub in enumerate(debiased):
        arrays[f"sub{i}.features"] = sub.features
        arrays[f"sub{i}.adjacency"] = sub.adjacency
    _maybe_save(path, arrays)
    return debiased


def _restore_subgraphs(subgraphs: list[Subgraph], arrays: dict[str, np.ndarray]):
    from .sampling import replace_subgraph_tensors

    if int(arrays.get("count", -1)) != len(subgraphs):
        return None
    out = []
    for i, sub in enumerate(subgraphs):
        feats = arrays.get(f"sub{i}.features")
        adj = arrays.get(f"sub{i}.adjacency")
        if feats is None or adj is None or feats.shape != sub.features.shape or adj.shape != sub.adjacency.shape:
            return None
        out.append(replace_subgraph_tensors(sub, feats, adj))
    return out


def _train_classifier(
    subgraphs: list[Subgraph], cfg: ExperimentConfig, seed: int, path: Path | None
) -> SubgraphEnsembleClassifier:
    cl = cfg.classifier
    model = SubgraphEnsembleClassifier(
        hidden=cl.hidden,
        dropout=cl.dropout,
        epochs=cl.epochs,
        lr=cl.lr,
        weight_decay=cl.weight_decay,
        seed=seed,
    )
    stored = _try_load(path)
    if stored is not None:
        in_dim = subgraphs[0].features.shape[1]
        params = init_classifier_params(np.random.default_rng(seed), in_dim, hidden=cl.hidden)
        try:
            _restore_params(params, stored)
            model.params_ = params
            model.n_features_in_ = in_dim
            model.loss_curve_ = []
            return model
        except CheckpointError as exc:
            warnings.warn(f"ignoring invalid checkpoint {path}: {exc}")
    model.fit(subgraphs)
    _maybe_save(path, _param_arrays(model.params_))
    return model


# -- orchestration -------------------------------------------------------------


def run_seed(cfg: ExperimentConfig, seed: int, ckpt_dir: Path | None = None) -> SeedResult:
    """Run every stage for one seed, loading valid checkpoints when present."""

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise PipelineStageError(name, seed, exc) from exc

    def ckpt(name: str) -> Path | None:
        return None if ckpt_dir is None else ckpt_dir / f"seed{seed}" / f"{name}.ckpt"

    graph = stage("dataset", lambda: _load_dataset(cfg, seed))
    subgraphs = stage("sample", lambda: _sample_subgraphs(cfg, graph, seed))

    curve: tuple[tuple[int, float, float], ...] = ()
    final = subgraphs
    if cfg.run.mode != "no_diffusion":
        adversary = None
        if _needs_adversary(cfg):
            adversary = stage(
                "adversary", lambda: _train_adversary(subgraphs, cfg, seed, ckpt("adversary"))
            )
        models, curve = stage(
            "scores", lambda: _train_scores(subgraphs, adversary, cfg, seed, ckpt("scores"))
        )
        final = stage("debias", lambda: _debias(subgraphs, models, cfg, seed, ckpt("debiased")))

    classifier = stage(
        "classifier", lambda: _train_classifier(final, cfg, seed, ckpt("classifier"))
    )
    metrics = stage("evaluate", lambda: classifier.evaluate(final, graph))
    return SeedResult(seed=seed, metrics=metrics, curve=curve)


def run_pipeline(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> FairnessReport:
    """Run all seeds and aggregate; checkpoints persist under out_dir if given."""
    fingerprint = cfg.fingerprint()
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints" / fingerprint[:12]
    results = tuple(run_seed(cfg, seed, ckpt_dir) for seed in cfg.run.seeds)
    return FairnessReport(
        run_id=f"fasd-{fingerprint[:12]}",
        fingerprint=fingerprint,
        mode=cfg.run.mode,
        seeds=cfg.run.seeds,
        results=results,
    )


# -- artifact emission ----------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report_text(report: FairnessReport) -> str:
    lines = [
        f"run_id = {report.run_id}",
        f"config_fingerprint = {report.fingerprint}",
        f"mode = {report.mode}",
        "seeds = " + ",".join(str(s) for s in report.seeds),
        "",
    ]
    for name in METRIC_FIELDS:
        lines.append(f"[metrics.{name}]")
        lines.append(f"mean = {_fmt(report.mean(name))}")
        lines.append(f"std = {_fmt(report.std(name))}")
        lines.append("per_seed = " + ",".join(_fmt(v) for v in report.per_seed(name)))
        lines.append("")
    return "\n".join(lines)


def _seed_csv(report: FairnessReport) -> str:
    rows = [f"# run_id={report.run_id} config_fingerprint={report.fingerprint}", "seed,acc,dp,eo"]
    for result in report.results:
        rows.append(
            ",".join([str(result.seed)] + [_fmt(result.metric(n)) for n in METRIC_FIELDS])
        )
    rows.append(",".join(["mean"] + [_fmt(report.mean(n)) for n in METRIC_FIELDS]))
    rows.append(",".join(["std"] + [_fmt(report.std(n)) for n in METRIC_FIELDS]))
    return "\n".join(rows) + "\n"


def _curve_csv(report: FairnessReport, result: SeedResult) -> str:
    rows = [
        f"# run_id={report.run_id} config_fingerprint={report.fingerprint} seed={result.seed}",
        "iter,loss_theta,loss_phi",
    ]
    for iteration, loss_theta, loss_phi in result.curve:
        rows.append(f"{iteration},{_fmt(loss_theta)},{_fmt(loss_phi)}")
    return "\n".join(rows) + "\n"


def emit_report(report: FairnessReport, out_dir: str | Path) -> list[Path]:
    """Write report.txt, seeds.csv, and per-seed curve CSVs; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in [("report.txt", _report_text(report)), ("seeds.csv", _seed_csv(report))]:
        path = out / name
        _atomic_write(path, text)
        written.append(path)
    for result in report.results:
        path = out / f"curve_seed{result.seed}.csv"
        _atomic_write(path, _curve_csv(report, result))
        written.append(path)
    return written


# -- hyperparameter sweeps -------------------------------------------------------


def _set_lambda(cfg: ExperimentConfig, value: float) -> ExperimentConfig:
    if value < 0:
        raise ConfigError(f"lambda must be >= 0, got {value}")
    return dc_replace(cfg, diffusion=dc_replace(cfg.diffusion, lambda_x=value, lambda_a=value))


def _set_n_steps(cfg: ExperimentConfig, value: float) -> ExperimentConfig:
    if value != int(value) or int(value) < 1:
        raise ConfigError(f"n_steps must be a positive integer, got {value}")
    return dc_replace(cfg, reverse=dc_replace(cfg.reverse, n_steps=int(value)))


def _set_tau(cfg: ExperimentConfig, value: float) -> ExperimentConfig:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {value}")
    return dc_replace(cfg, reverse=dc_replace(cfg.reverse, tau=value))


SWEEP_PARAMS = {
    "lambda": _set_lambda,
    "n_steps": _set_n_steps,
    "tau": _set_tau,
}


def apply_sweep_value(cfg: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    """A copy of cfg with one swept hyperparameter replaced."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter {param!r}; choose from {', '.join(sorted(SWEEP_PARAMS))}"
        )
    return SWEEP_PARAMS[param](cfg, value)


def emit_sweep(
    param: str,
    values: list[float],
    reports: list[FairnessReport],
    out_dir: str | Path,
) -> Path:
    """Write one CSV row per swept value with aggregated metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [f"{param},acc_mean,acc_std,dp_mean,dp_std,eo_mean,eo_std,config_fingerprint"]
    for value, report in zip(values, reports):
        cells = [_fmt(value)]
        for name in METRIC_FIELDS:
            cells.append(_fmt(report.mean(name)))
            cells.append(_fmt(report.std(name)))
        cells.append(report.fingerprint)
        rows.append(",".join(cells))
    path = out / f"sweep_{param}.csv"
    _atomic_write(path, "\n".join(rows) + "\n")
    return path
