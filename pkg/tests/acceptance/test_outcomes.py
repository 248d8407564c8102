"""Experiment-level outcomes on small synthetic data; slower than the unit suite."""

from __future__ import annotations

import time
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
import pytest

from src.core.rng import derive_rng
from src.data.streams import GeneratorKind, GeneratorSpec, Split, Task, TaskStream, generate
from src.embed.tasks import TaskEmbedding, embed_task, mean_reciprocal_rank, rank_by_size, rank_sources
from src.ewc.continual import ContinualSettings, ImportanceSource, Scenario, run_task_incremental
from src.ewc.penalty import EwcConfig, LambdaMode
from src.fisher.estimators import empirical_fisher, squisher
from src.fisher.types import FisherDiagonal, Scaling
from src.nn.mlp import Activation, MlpSpec, accuracy
from src.optim.checkpoint import Checkpoint, Provenance
from src.optim.training import TrainSettings, new_state, train
from src.sparsify.masks import (
    Mask,
    apply_fish_reset,
    apply_prune,
    fraction_to_k,
    pruning_stats,
    random_mask,
    top_k_mask,
)
from tests.helpers import make_checkpoint

pytestmark = pytest.mark.acceptance

SEEDS = range(5)
LAMBDAS = (1.0, 10.0, 100.0, 1e3, 1e4, 1e5)


# ---------------------------------------------------------------------------
# Continual learning
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _split_stream(seed: int) -> TaskStream:
    """Ten classes cut into five two-class tasks."""
    return generate(
        GeneratorSpec(
            kind=GeneratorKind.SPLIT_CLASSES,
            dims=10,
            classes=10,
            classes_per_task=2,
            num_tasks=5,
            samples_per_class=50,
            test_samples_per_class=30,
            seed=seed,
        )
    )


def _continual_settings(seed: int, beta2: float = 0.999) -> ContinualSettings:
    return ContinualSettings(
        hidden=(32,),
        activation=Activation.TANH,
        training=TrainSettings(lr=0.01, beta2=beta2, batch_size=10, epochs=15),
        scenario=Scenario.DOMAIN,
        seed=seed,
    )


def _mean_final(source: ImportanceSource, cfg: EwcConfig, beta2: float = 0.999) -> float:
    finals = [
        run_task_incremental(_split_stream(s), cfg, source, _continual_settings(s, beta2)).matrix.final_mean()
        for s in SEEDS
    ]
    return float(np.mean(finals))


@pytest.fixture(scope="module")
def ewc_sweep() -> Dict[str, Tuple[float, float]]:
    """Best λ and its mean final accuracy per importance source; λ = 0 for the baseline."""
    sweep = {"baseline": (0.0, _mean_final(ImportanceSource.NONE, EwcConfig(0.0)))}
    for source in (ImportanceSource.FISHER, ImportanceSource.SQUISHER, ImportanceSource.JOINT):
        scores = {lam: _mean_final(source, EwcConfig(lam)) for lam in LAMBDAS}
        best = max(scores, key=lambda lam: scores[lam])
        sweep[source.value] = (best, scores[best])
    return sweep


def test_fisher_and_squisher_penalties_both_limit_forgetting(
    ewc_sweep: Dict[str, Tuple[float, float]]
) -> None:
    baseline = ewc_sweep["baseline"][1]
    fisher = ewc_sweep["fisher"][1]
    squished = ewc_sweep["squisher"][1]

    assert fisher >= baseline + 0.05
    assert squished >= baseline + 0.05
    assert abs(fisher - squished) <= 0.03


def test_ewc_ablations_move_in_the_expected_direction(
    ewc_sweep: Dict[str, Tuple[float, float]]
) -> None:
    baseline = ewc_sweep["baseline"][1]
    lam, squished = ewc_sweep["squisher"]

    no_norm = _mean_final(
        ImportanceSource.SQUISHER, EwcConfig(lam, lambda_mode=LambdaMode.FISHER)
    )
    low_beta2 = _mean_final(ImportanceSource.SQUISHER, EwcConfig(lam), beta2=0.95)

    assert no_norm < squished
    assert abs(ewc_sweep["joint"][1] - ewc_sweep["fisher"][1]) <= 0.03
    assert low_beta2 <= squished
    assert low_beta2 > baseline


# ---------------------------------------------------------------------------
# Pruning and sparse reset
# ---------------------------------------------------------------------------


def _with_nuisance(task: Task, extra: int, seed: int) -> Task:
    """Append *extra* low-variance features, so most first-layer weights barely matter."""
    rng = derive_rng(seed, "acceptance", "nuisance", task.task_id)

    def pad(split: Split) -> Split:
        xs, ys = split
        return np.hstack([xs, 0.01 * rng.standard_normal((xs.shape[0], extra))]), ys

    return Task(task.task_id, pad(task.train), pad(task.test), task.num_classes)


def _blob_stream(seed: int, num_tasks: int = 1) -> TaskStream:
    return generate(
        GeneratorSpec(
            dims=8,
            classes=4,
            samples_per_class=50,
            test_samples_per_class=30,
            num_tasks=num_tasks,
            seed=seed,
        )
    )


def _random_masks(ckpt: Checkpoint, k: int, seed: int) -> List[Mask]:
    return [random_mask(ckpt.params.groups, k, derive_rng(seed, "acceptance", "random", r)) for r in range(5)]


def test_importance_pruning_beats_random_masks() -> None:
    settings = TrainSettings(lr=0.01, batch_size=10, epochs=20)
    fisher_acc, squisher_acc, random_acc = [], [], []
    for seed in SEEDS:
        task = _with_nuisance(_blob_stream(seed)[0], 56, seed)
        spec = MlpSpec((task.dims, 16, task.num_classes), Activation.TANH)
        ckpt = make_checkpoint(spec, task, settings, seed=seed)
        xs, ys = task.test
        k = fraction_to_k(len(ckpt.params), 0.75)

        def pruned_accuracy(importance: FisherDiagonal) -> float:
            mask = top_k_mask(pruning_stats(ckpt.params, importance).rho, k)
            return accuracy(spec, apply_prune(ckpt.params, mask), xs, ys)

        fisher_acc.append(pruned_accuracy(empirical_fisher(spec, ckpt.params, task.train)))
        squisher_acc.append(pruned_accuracy(squisher(ckpt)))
        random_acc.extend(
            accuracy(spec, apply_prune(ckpt.params, mask), xs, ys)
            for mask in _random_masks(ckpt, k, seed)
        )

    fisher, squished, random = np.mean(fisher_acc), np.mean(squisher_acc), np.mean(random_acc)
    assert fisher >= random + 0.05
    assert squished >= random + 0.05
    assert abs(fisher - squished) <= 0.03


def _finetune(pretrained: Checkpoint, task: Task, settings: TrainSettings, seed: int) -> Checkpoint:
    params = pretrained.params
    result = train(
        pretrained.mlp_spec,
        params,
        new_state(settings, params),
        task.train,
        settings,
        derive_rng(seed, "acceptance", "finetune"),
    )
    provenance = Provenance(
        dataset_id="acceptance",
        dataset_size=task.n_train,
        batch_size=settings.batch_size,
        steps=result.state.t,
        seed=seed,
        task_index=task.task_id,
        dropped_partial_batches=result.dropped_partial_batches,
    )
    return Checkpoint(pretrained.mlp_spec, result.params, result.state, provenance)


def test_importance_resets_keep_most_of_the_finetuning_gain() -> None:
    settings = TrainSettings(lr=0.01, batch_size=10, epochs=20)
    retained: Dict[str, List[float]] = {"fisher": [], "squisher": [], "random": []}
    for seed in range(3):
        stream = _blob_stream(seed, num_tasks=2)
        source, target = (_with_nuisance(t, 24, seed) for t in stream.tasks)
        spec = MlpSpec((source.dims, 16, source.num_classes), Activation.TANH)
        pretrained = make_checkpoint(spec, source, settings, seed=seed)
        finetuned = _finetune(pretrained, target, settings, seed)

        xs, ys = target.test
        before = accuracy(spec, pretrained.params, xs, ys)
        after = accuracy(spec, finetuned.params, xs, ys)
        assert after - before > 0.3

        def kept_gain(mask: Mask) -> float:
            reset = apply_fish_reset(finetuned.params, pretrained.params, mask)
            return (accuracy(spec, reset, xs, ys) - before) / (after - before)

        k = fraction_to_k(len(finetuned.params), 0.5)
        fisher = empirical_fisher(spec, finetuned.params, target.train)
        retained["fisher"].append(kept_gain(top_k_mask(fisher.values, k)))
        retained["squisher"].append(kept_gain(top_k_mask(squisher(finetuned).values, k)))
        retained["random"].extend(kept_gain(m) for m in _random_masks(finetuned, k, seed))

    fisher, squished, random = (float(np.mean(retained[name])) for name in ("fisher", "squisher", "random"))
    assert fisher >= 0.9
    assert squished >= 0.9
    assert random < min(fisher, squished)


# ---------------------------------------------------------------------------
# Task embedding
# ---------------------------------------------------------------------------

_INPUT_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


def test_rankings_find_the_planted_near_duplicate_source() -> None:
    """Every target retrains on fresh draws from one source's distribution."""
    settings = TrainSettings(lr=0.01, batch_size=10, epochs=30)
    spec = MlpSpec((6, 16, 16, 3))

    sizes: Dict[str, int] = {}
    embeddings: Dict[str, Dict[str, TaskEmbedding]] = {"fisher": {}, "squisher": {}}
    targets: Dict[str, Dict[str, TaskEmbedding]] = {"fisher": {}, "squisher": {}}
    for i, scale in enumerate(_INPUT_SCALES):
        source = generate(
            GeneratorSpec(
                dims=6,
                classes=3,
                samples_per_class=20 + 10 * i,
                test_samples_per_class=30,
                centroid_scale=2.0 * scale,
                noise_scale=scale,
                seed=100 + i,
            )
        )[0]
        twin = Task(source.task_id, source.test, source.test, source.num_classes)
        name = f"source{i}"
        sizes[name] = source.n_train
        for task, store in ((source, embeddings), (twin, targets)):
            ckpt = make_checkpoint(spec, task, settings, seed=0)
            fisher = empirical_fisher(spec, ckpt.params, task.train, Scaling.MEAN_OVER_N)
            store["fisher"][name] = embed_task(fisher)
            store["squisher"][name] = embed_task(squisher(ckpt))

    mrr = {
        method: mean_reciprocal_rank(
            [rank_sources(targets[method][name], embeddings[method], gold=name) for name in sizes]
        )
        for method in ("fisher", "squisher")
    }
    by_size = mean_reciprocal_rank([rank_by_size(sizes, gold=name) for name in sizes])

    assert mrr["fisher"] >= 0.8
    assert mrr["squisher"] >= 0.8
    assert by_size < min(mrr.values())


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------


def test_squisher_costs_a_tiny_fraction_of_an_empirical_fisher() -> None:
    task = generate(GeneratorSpec(dims=8, classes=4, samples_per_class=2500, seed=7))[0]
    assert task.n_train == 10_000
    spec = MlpSpec((task.dims, 64, task.num_classes))
    ckpt = make_checkpoint(spec, task, TrainSettings(lr=0.01, batch_size=100, epochs=1))

    started = time.perf_counter()
    empirical_fisher(spec, ckpt.params, task.train)
    slow = time.perf_counter() - started

    fast = []
    for _ in range(5):
        started = time.perf_counter()
        squisher(ckpt)
        fast.append(time.perf_counter() - started)

    assert min(fast) < 0.01 * slow
