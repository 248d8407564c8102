"""
Experiment commands.

Each command takes a :class:`RunContext`, writes its artifacts under the
configured output directory, appends report rows and returns them.
:data:`COMMANDS` maps the CLI name to the callable.

Commands
--------
train     one task of the configured data stream; final and best checkpoints
fisher    one estimator on a checkpoint, timed, saved as a Fisher artifact
merge     Fisher / Squisher / linear merging of two or more checkpoints
prune     magnitude-times-importance pruning over a fraction sweep
mask      FISH-style sparse reset of a fine-tune towards its pretrained start
embed     task embeddings and source rankings with MRR
ewc       continual learning over a task stream, one run per method and trial
ablate    EWC variants: normalization, joint Fisher, beta2 sweep
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Final, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from src.core.exceptions import ConfigError, InputError
from src.core.rng import derive_rng
from src.data.streams import Task, generate
from src.embed.tasks import (
    Ranking,
    TaskEmbedding,
    embed_task,
    mean_reciprocal_rank,
    rank_by_size,
    rank_sources,
    ranking_rows,
    write_rankings_csv,
)
from src.ewc.continual import (
    ContinualResult,
    ContinualSettings,
    ImportanceSource,
    run_task_incremental,
)
from src.ewc.penalty import EwcConfig, LambdaMode, save_anchor
from src.fisher.registry import EstimatorRequest, estimate, needs_data
from src.fisher.types import FisherDiagonal, rescale, save_fisher
from src.harness.config import ExperimentConfig
from src.harness.reports import ReportRow, write_manifest
from src.harness.workbench import (
    RunContext,
    Stopwatch,
    best_sibling,
    fan_out,
    held_out_accuracy,
    importance_for,
    load_required_checkpoint,
    task_for,
)
from src.merge.artifacts import merged_checkpoint
from src.merge.merging import MergeInput, fisher_merge, linear_merge, ubgm_merge
from src.nn.mlp import MlpSpec, accuracy, init_params
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint, Provenance, save_checkpoint
from src.optim.training import TrainSettings, new_state, train
from src.sparsify.masks import (
    Mask,
    apply_fish_reset,
    apply_prune,
    fraction_to_k,
    mask_gradient,
    pruning_stats,
    random_mask,
    top_k_mask,
)

__all__: list[str] = ["COMMANDS", "run_command"]

logger = structlog.get_logger(__name__)

Command = Callable[[RunContext], List[ReportRow]]


def _required(value: Optional[Path], key: str) -> Path:
    if value is None:
        raise ConfigError([f"{key}: a path is required for this command"])
    return value


def _default_checkpoint(ctx: RunContext, value: Optional[Path]) -> Path:
    return value if value is not None else ctx.out_dir / ctx.config.train.checkpoint_name


# ---------------------------------------------------------------------------
# train / fisher
# ---------------------------------------------------------------------------


def cmd_train(ctx: RunContext) -> List[ReportRow]:
    cfg = ctx.config
    stream = generate(cfg.data)
    if cfg.train.task_index >= len(stream):
        raise ConfigError(
            [f"train.task_index: {cfg.train.task_index} outside a stream of {len(stream)} tasks"]
        )
    task = stream[cfg.train.task_index]
    spec = MlpSpec((task.dims, *cfg.model.hidden, task.num_classes), cfg.model.activation)

    parent: Optional[Checkpoint] = None
    if cfg.train.init_from is not None:
        parent = load_required_checkpoint(cfg.train.init_from, "initial checkpoint")
        if parent.mlp_spec != spec:
            raise ConfigError(["train.init_from: checkpoint architecture does not match [model]"])
        params = parent.params
    else:
        params = init_params(spec, derive_rng(cfg.seed, "train", "init"))

    settings = cfg.optimizer.settings()
    xs, ys = task.test
    with Stopwatch() as sw:
        result = train(
            spec,
            params,
            new_state(settings, params),
            task.train,
            settings,
            derive_rng(cfg.seed, "train", "shuffle"),
            evaluate=lambda p: accuracy(spec, p, xs, ys),
        )

    def provenance(steps: int) -> Provenance:
        return Provenance(
            dataset_id=stream.dataset_id,
            dataset_size=task.n_train,
            batch_size=settings.batch_size,
            steps=steps,
            seed=cfg.seed,
            task_index=cfg.train.task_index,
            data=cfg.data.model_dump(mode="json"),
            dropped_partial_batches=result.dropped_partial_batches,
            parent_checksums=(parent.params.checksum(),) if parent is not None else (),
        )

    final_path = ctx.output(cfg.train.checkpoint_name)
    save_checkpoint(Checkpoint(spec, result.params, result.state, provenance(result.state.t)), final_path)
    if result.best_params is not None and result.best_state is not None:
        best = Checkpoint(spec, result.best_params, result.best_state, provenance(result.best_state.t))
        save_checkpoint(best, ctx.output(best_sibling(Path(cfg.train.checkpoint_name)).name))
    ctx.notes["dropped_partial_batches"] = result.dropped_partial_batches

    setting = f"task={cfg.train.task_index}"
    train_acc = accuracy(spec, result.params, *task.train)
    rows = [
        ctx.row(settings.optimizer.value, setting, "train_accuracy", train_acc, wall_time_seconds=sw.seconds),
        ctx.row(settings.optimizer.value, setting, "test_accuracy", accuracy(spec, result.params, xs, ys)),
    ]
    if result.best_score is not None:
        rows.append(ctx.row(settings.optimizer.value, setting, "best_test_accuracy", result.best_score))
    logger.info("model_trained", task=cfg.train.task_index, train_accuracy=train_acc, steps=result.state.t)
    return ctx.record(rows)


def cmd_fisher(ctx: RunContext) -> List[ReportRow]:
    section = ctx.config.fisher
    path = _default_checkpoint(ctx, section.checkpoint)
    data = None
    if needs_data(section.estimator):
        # data regeneration is not part of the timed estimate
        data = task_for(load_required_checkpoint(path)).train

    with Stopwatch() as sw:
        ckpt = load_required_checkpoint(path)
        request = EstimatorRequest(
            ckpt,
            data=data,
            scaling=section.scaling,
            mc_samples=section.mc_samples,
            seed=ctx.config.seed,
            batch_size=section.batch_size,
        )
        fisher = rescale(estimate(section.estimator, request), section.scaling)

    out = ctx.output(section.output_name)
    save_fisher(fisher, out, extra_header={"checkpoint_checksum": ckpt.params.checksum()})
    logger.info("fisher_estimated", estimator=section.estimator, seconds=round(sw.seconds, 6))
    return ctx.record(
        [
            ctx.row(section.estimator, section.scaling.value, "wall_time_seconds", sw.seconds, wall_time_seconds=sw.seconds),
            ctx.row(section.estimator, section.scaling.value, "fisher_mean", float(np.mean(fisher.array))),
        ]
    )


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------


def _merge_paths(ctx: RunContext) -> Tuple[List[Path], Optional[Path]]:
    section = ctx.config.merge
    if len(section.checkpoints) < 2:
        raise ConfigError(["merge.checkpoints: at least two checkpoints are required"])
    if section.checkpoint_policy == "best":
        return [best_sibling(p) for p in section.checkpoints], (
            best_sibling(section.base) if section.base is not None else None
        )
    return list(section.checkpoints), section.base


def _merge_input(
    pairs: Sequence[Tuple[ParamVector, FisherDiagonal]],
    epsilon: Optional[float],
    base: Optional[Tuple[ParamVector, FisherDiagonal]] = None,
) -> MergeInput:
    if epsilon is None:
        return MergeInput(pairs, base=base)
    return MergeInput(pairs, base=base, epsilon=epsilon)


def cmd_merge(ctx: RunContext) -> List[ReportRow]:
    section = ctx.config.merge
    paths, base_path = _merge_paths(ctx)
    parents = [load_required_checkpoint(p) for p in paths]
    tasks = [task_for(c) for c in parents]
    base = load_required_checkpoint(base_path, "base checkpoint") if base_path is not None else None

    rows: List[ReportRow] = []
    for i, (ckpt, task) in enumerate(zip(parents, tasks)):
        rows.append(ctx.row("unmerged", f"model={i}", "accuracy", held_out_accuracy(ckpt, ckpt.params, task)))

    for method in section.methods:
        pairs: List[Tuple[ParamVector, FisherDiagonal]] = []
        with Stopwatch() as sw:
            if method == "baseline":
                merged = linear_merge([c.params for c in parents])
            else:
                pairs = [(c.params, importance_for(method, c, t)) for c, t in zip(parents, tasks)]
                merged = fisher_merge(_merge_input(pairs, section.epsilon))
        accs = _accuracies(parents, tasks, merged)
        rows.append(ctx.row(method, "merge", "mean_accuracy", float(np.mean(accs)), wall_time_seconds=sw.seconds))
        rows.extend(ctx.row(method, f"model={i}", "accuracy", a) for i, a in enumerate(accs))
        save_checkpoint(merged_checkpoint(parents, merged), ctx.output(f"merged_{method}.sqsh"))

        if method == "squisher":
            gap = _raw_gap(pairs, merged, section.epsilon)
            rows.append(ctx.row(method, "merge", "raw_vs_scaled_max_abs_diff", gap))

        if base is not None and pairs:
            base_task = task_for(base) if method == "fisher" else None
            base_pair = (base.params, importance_for(method, base, base_task))
            ubgm = ubgm_merge(_merge_input(pairs, section.epsilon, base_pair))
            accs = _accuracies(parents, tasks, ubgm)
            rows.append(ctx.row(f"{method}_ubgm", "merge", "mean_accuracy", float(np.mean(accs))))
            save_checkpoint(merged_checkpoint([*parents, base], ubgm), ctx.output(f"merged_{method}_ubgm.sqsh"))

    ctx.notes["checkpoint_policy"] = section.checkpoint_policy
    return ctx.record(rows)


def _accuracies(parents: Sequence[Checkpoint], tasks: Sequence[Task], params: ParamVector) -> List[float]:
    return [held_out_accuracy(ckpt, params, task) for ckpt, task in zip(parents, tasks)]


def _raw_gap(
    pairs: Sequence[Tuple[ParamVector, FisherDiagonal]], merged: ParamVector, epsilon: Optional[float]
) -> float:
    """Largest parameter difference between merging with the raw accumulator and with N·v."""
    raw = [(params, fisher.scaled(1.0 / fisher.n_data)) for params, fisher in pairs]
    unscaled = fisher_merge(_merge_input(raw, epsilon))
    return float(np.max(np.abs(unscaled.values - merged.values)))


# ---------------------------------------------------------------------------
# prune / mask
# ---------------------------------------------------------------------------


def cmd_prune(ctx: RunContext) -> List[ReportRow]:
    cfg = ctx.config
    ckpt = load_required_checkpoint(_default_checkpoint(ctx, cfg.prune.checkpoint))
    task = task_for(ckpt)
    n = len(ckpt.params)
    rows = [ctx.row("unpruned", "fraction=0", "accuracy", held_out_accuracy(ckpt, ckpt.params, task))]

    for method in cfg.prune.methods:
        if method == "baseline":
            continue
        scores = pruning_stats(ckpt.params, importance_for(method, ckpt, task)).rho
        for fraction in cfg.prune.fractions:
            mask = top_k_mask(scores, fraction_to_k(n, fraction))
            acc = held_out_accuracy(ckpt, apply_prune(ckpt.params, mask), task)
            rows.append(ctx.row(method, f"fraction={fraction}", "accuracy", acc))

    if "baseline" in cfg.prune.methods:
        jobs = [(f, t) for f in cfg.prune.fractions for t in range(cfg.trials)]

        def random_trial(job: Tuple[float, int]) -> ReportRow:
            fraction, trial = job
            rng = derive_rng(cfg.seed, "prune", trial, repr(fraction))
            mask = random_mask(ckpt.params.groups, fraction_to_k(n, fraction), rng)
            acc = held_out_accuracy(ckpt, apply_prune(ckpt.params, mask), task)
            return ctx.row("baseline", f"fraction={fraction}", "accuracy", acc, seed=cfg.seed + trial)

        rows.extend(fan_out(random_trial, jobs))
    return ctx.record(rows)


def _write_mask(ctx: RunContext, method: str, mask: Mask) -> None:
    path = ctx.output(f"mask_{method}.json")
    path.write_text(json.dumps(mask.to_json(), sort_keys=True), encoding="utf-8")


def cmd_mask(ctx: RunContext) -> List[ReportRow]:
    cfg = ctx.config
    section = cfg.mask
    fine = load_required_checkpoint(_required(section.finetuned, "mask.finetuned"), "fine-tuned checkpoint")
    pre = load_required_checkpoint(_required(section.pretrained, "mask.pretrained"), "pretrained checkpoint")
    if fine.mlp_spec != pre.mlp_spec:
        raise ConfigError(["mask: fine-tuned and pretrained architectures differ"])
    task = task_for(fine)
    n = len(fine.params)
    k = fraction_to_k(n, 1.0 - section.keep_fraction)
    pre_acc = held_out_accuracy(fine, pre.params, task)
    fine_acc = held_out_accuracy(fine, fine.params, task)
    setting = f"keep={section.keep_fraction}"
    rows = [ctx.row("pretrained", setting, "accuracy", pre_acc), ctx.row("finetuned", setting, "accuracy", fine_acc)]

    masks: List[Tuple[str, int, Mask]] = []
    for method in section.methods:
        if method == "baseline":
            for trial in range(cfg.trials):
                rng = derive_rng(cfg.seed, "mask", trial)
                masks.append((method, trial, random_mask(fine.params.groups, k, rng)))
        else:
            masks.append((method, 0, top_k_mask(importance_for(method, fine, task).values, k)))

    gap = fine_acc - pre_acc
    for method, trial, mask in masks:
        if trial == 0:
            _write_mask(ctx, method, mask)
        acc = held_out_accuracy(fine, apply_fish_reset(fine.params, pre.params, mask), task)
        seed = cfg.seed + trial
        rows.append(ctx.row(method, setting, "accuracy", acc, seed=seed))
        if gap > 0.0:
            rows.append(ctx.row(method, setting, "retained_gain", (acc - pre_acc) / gap, seed=seed))
        if section.sparse_epochs > 0:
            rows.append(ctx.row(method, setting, "sparse_finetune_accuracy", _sparse_finetune(ctx, pre, task, mask), seed=seed))
    return ctx.record(rows)


def _sparse_finetune(ctx: RunContext, pre: Checkpoint, task: Task, mask: Mask) -> float:
    """Re-train from the pretrained weights, updating only the kept coordinates."""
    settings = ctx.config.optimizer.settings(epochs=ctx.config.mask.sparse_epochs)
    result = train(
        pre.mlp_spec,
        pre.params,
        new_state(settings, pre.params),
        task.train,
        settings,
        derive_rng(ctx.config.seed, "mask", "sparse"),
        transform_grad=partial(mask_gradient, mask=mask),
    )
    return held_out_accuracy(pre, result.params, task)


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------


def cmd_embed(ctx: RunContext) -> List[ReportRow]:
    section = ctx.config.embed
    if not section.sources or not section.targets:
        raise ConfigError(["embed: at least one source and one target are required"])
    checkpoints: Dict[str, Checkpoint] = {
        name: load_required_checkpoint(path) for name, path in section.sources.items()
    }
    targets = {name: load_required_checkpoint(t.checkpoint) for name, t in section.targets.items()}
    golds = {name: t.gold for name, t in section.targets.items()}

    rows: List[ReportRow] = []
    table: List[Dict[str, object]] = []
    for method in section.methods:
        rankings: Dict[str, Ranking] = {}
        with Stopwatch() as sw:
            if method == "baseline":
                sizes = {name: c.provenance.dataset_size for name, c in checkpoints.items()}
                for name in targets:
                    rankings[name] = rank_by_size(sizes, golds[name])
            else:
                source_emb = {name: _embedding(method, c) for name, c in checkpoints.items()}
                target_emb = {name: _embedding(method, c) for name, c in targets.items()}
                for name, emb in target_emb.items():
                    rankings[name] = rank_sources(emb, source_emb, golds[name])
                _write_embeddings(ctx, method, source_emb, target_emb)
        for name, ranking in rankings.items():
            table.extend(ranking_rows(name, ranking, method))
            if ranking.reciprocal_rank is not None:
                rows.append(ctx.row(method, f"target={name}", "reciprocal_rank", ranking.reciprocal_rank))
        graded = [r for r in rankings.values() if r.gold is not None]
        if graded:
            rows.append(ctx.row(method, "all", "mrr", mean_reciprocal_rank(graded), wall_time_seconds=sw.seconds))
    write_rankings_csv(ctx.output("rankings.csv"), table)
    return ctx.record(rows)


def _embedding(method: str, ckpt: Checkpoint) -> TaskEmbedding:
    task = task_for(ckpt) if method == "fisher" else None
    return embed_task(importance_for(method, ckpt, task))


def _write_embeddings(
    ctx: RunContext, method: str, sources: Dict[str, TaskEmbedding], targets: Dict[str, TaskEmbedding]
) -> None:
    payload = {
        "sources": {k: v.to_json() for k, v in sources.items()},
        "targets": {k: v.to_json() for k, v in targets.items()},
    }
    ctx.output(f"embeddings_{method}.json").write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# ewc / ablate
# ---------------------------------------------------------------------------


_SOURCES: Final[Dict[str, ImportanceSource]] = {
    "fisher": ImportanceSource.FISHER,
    "squisher": ImportanceSource.SQUISHER,
    "joint": ImportanceSource.JOINT,
    "identity": ImportanceSource.IDENTITY,
    "baseline": ImportanceSource.NONE,
}


@dataclass(frozen=True)
class _ContinualJob:
    method: str
    setting: str
    source: ImportanceSource
    ewc: EwcConfig
    training: TrainSettings
    trial: int


def _continual_settings(ctx: RunContext, training: TrainSettings, trial: int) -> ContinualSettings:
    cfg = ctx.config
    return ContinualSettings(
        hidden=tuple(cfg.model.hidden),
        activation=cfg.model.activation,
        training=training,
        scenario=cfg.ewc.scenario,
        seed=cfg.seed + trial,
    )


def _run_continual(ctx: RunContext, jobs: Sequence[_ContinualJob], *, save_anchors: bool = False) -> List[ReportRow]:
    stream = generate(ctx.config.data)
    if len(stream) < 2:
        raise ConfigError(["data.num_tasks: continual learning needs at least two tasks"])

    def run(job: _ContinualJob) -> Tuple[_ContinualJob, float, ContinualResult]:
        with Stopwatch() as sw:
            result = run_task_incremental(
                stream, job.ewc, job.source, _continual_settings(ctx, job.training, job.trial)
            )
        return job, sw.seconds, result

    rows: List[ReportRow] = []
    matrix_rows: List[Dict[str, object]] = []
    for job, seconds, result in fan_out(run, jobs):
        seed = ctx.config.seed + job.trial
        matrix_rows.extend(result.matrix.to_rows(method=job.method, setting=job.setting, seed=seed))
        final = result.matrix.final
        rows.append(ctx.row(job.method, job.setting, "final_mean_accuracy", float(np.mean(final)), seed=seed, wall_time_seconds=seconds))
        rows.extend(
            ctx.row(job.method, job.setting, f"final_accuracy_task{t}", float(a), seed=seed)
            for t, a in enumerate(final)
        )
        if save_anchors and job.trial == 0:
            for anchor in result.anchors:
                save_anchor(anchor, ctx.output(f"anchors/{job.method}_{job.setting}_task{anchor.task_id}.sqsh"))

    path = ctx.output(f"{ctx.command}_accuracy.csv")
    pd.DataFrame(matrix_rows).to_csv(path, index=False)
    return ctx.record(rows)


def cmd_ewc(ctx: RunContext) -> List[ReportRow]:
    cfg = ctx.config
    section = cfg.ewc
    training = cfg.optimizer.settings()
    lams = [section.lam * g for g in section.lambda_grid] or [section.lam]
    jobs: List[_ContinualJob] = []
    for method in section.methods:
        source = _SOURCES[method]
        grid = [0.0] if source is ImportanceSource.NONE else lams
        for lam in grid:
            ewc = EwcConfig(lam, LambdaMode.SQUISHER_AUTO, section.anchor_policy)
            jobs.extend(
                _ContinualJob(method, f"lam={lam:g}", source, ewc, training, trial)
                for trial in range(cfg.trials)
            )
    return _run_continual(ctx, jobs, save_anchors=section.save_anchors)


def _ablation_jobs(ctx: RunContext) -> List[Tuple[str, str, ImportanceSource, LambdaMode, TrainSettings]]:
    cfg = ctx.config
    section = cfg.ablate
    base = cfg.optimizer.settings()
    lam = f"lam={section.lam:g}"
    variants: List[Tuple[str, str, ImportanceSource, LambdaMode, TrainSettings]] = []
    for name in section.variants:
        if name == "beta2":
            variants.extend(
                ("squisher_beta2", f"beta2={b}", ImportanceSource.SQUISHER, LambdaMode.SQUISHER_AUTO, cfg.optimizer.settings(beta2=b))
                for b in section.beta2_values
            )
        elif name == "squisher_no_norm":
            variants.append((name, lam, ImportanceSource.SQUISHER, LambdaMode.FISHER, base))
        else:
            variants.append((name, lam, _SOURCES[name], LambdaMode.SQUISHER_AUTO, base))
    return variants


def cmd_ablate(ctx: RunContext) -> List[ReportRow]:
    cfg = ctx.config
    jobs: List[_ContinualJob] = []
    for method, setting, source, mode, training in _ablation_jobs(ctx):
        lam = 0.0 if source is ImportanceSource.NONE else cfg.ablate.lam
        ewc = EwcConfig(lam, mode, cfg.ewc.anchor_policy)
        jobs.extend(_ContinualJob(method, setting, source, ewc, training, t) for t in range(cfg.trials))
    return _run_continual(ctx, jobs)


COMMANDS: Final[Dict[str, Command]] = {
    "train": cmd_train,
    "fisher": cmd_fisher,
    "merge": cmd_merge,
    "prune": cmd_prune,
    "mask": cmd_mask,
    "embed": cmd_embed,
    "ewc": cmd_ewc,
    "ablate": cmd_ablate,
}


def run_command(name: str, config: ExperimentConfig, run_id: str) -> Tuple[List[ReportRow], Path]:
    """Run *name* and write the manifest; return the rows and the manifest path."""
    try:
        command = COMMANDS[name]
    except KeyError as exc:
        raise InputError(f"unknown command '{name}'; known: {sorted(COMMANDS)}") from exc
    ctx = RunContext(config=config, run_id=run_id, command=name)
    rows = command(ctx)
    assert ctx.report is not None
    ctx.outputs.append(ctx.report.path)
    manifest = write_manifest(
        ctx.out_dir / "manifest.json",
        command=name,
        run_id=run_id,
        config=config.resolved(),
        config_checksum=config.checksum(),
        outputs=ctx.outputs,
        notes=ctx.notes,
    )
    return rows, manifest
