"""
Evaluation harness: leave-one-domain-out (LODO) repeats over seeds, and the
area under the accuracy curve over a sequence of increasingly shifted test
domains.

LODO repeats are independent jobs.  They can run in worker processes; the
results are merged in (test_domain, seed) order so the table does not depend
on the worker count or on completion order.
"""
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .data import ScenarioDataset
from .errors import ArgumentError, HduvaError, TrainingDivergenceError
from .model import HDUVA, ModelConfig
from .results import ResultRow
from .scenarios.manifest import ScenarioManifest
from .training import FitResult, TrainConfig, classification_accuracy, deep_all_fit, fit

logger = logging.getLogger(__name__)

ALGORITHMS = ("hduva", "lhduva", "deep_all")

# Published accuracies (mean, sd) for documentation next to evaluation
# output.  They come from full-scale training and are never asserted.
REFERENCE_RESULTS = {
    "color-hierarchical": {
        "HDUVA": {"d1": (0.93, 0.02), "d2": (0.69, 0.12), "d3": (0.55, 0.03)},
        "DIVA": {"d1": (0.88, 0.05), "d2": (0.56, 0.19), "d3": (0.50, 0.08)},
    },
    "color-sequential-vlag": {
        "HDUVA": {"d1": (0.69, 0.05), "d3": (0.71, 0.03)},
        "HDUVA-no-zx": {"d1": (0.68, 0.04), "d3": (0.70, 0.02)},
        "Deep-All": {"d1": (0.60, 0.05), "d3": (0.68, 0.04)},
        "DIVA": {"d1": (0.63, 0.05), "d3": (0.68, 0.03)},
    },
    "color-sequential-red_diverging": {
        "HDUVA": {"d1": (0.56, 0.05), "d3": (0.68, 0.05)},
        "HDUVA-no-zx": {"d1": (0.55, 0.08), "d3": (0.65, 0.04)},
        "Deep-All": {"d1": (0.53, 0.06), "d3": (0.61, 0.06)},
        "DIVA": {"d1": (0.53, 0.05), "d3": (0.63, 0.05)},
    },
    "rotated-overlap-erratum": {
        "HDUVA": {"all": (0.821, 0.007)},
        "DIVA": {"all": (0.821, 0.007)},
    },
    "virtual-hospitals": {
        "HDUVA": {"C1": (0.87, 0.05)},
        "HDUVA-no-zx": {"C1": (0.88, 0.05)},
        "LHDUVA": {"C1": (0.82, 0.06)},
        "Deep-All": {"C1": (0.84, 0.05)},
        "DIVA": {"C1": (0.83, 0.06)},
    },
    "pacs": {
        "HDUVA": {"art_painting": (0.65, 0.01), "cartoon": (0.66, 0.01),
                  "photo": (0.87, 0.01), "sketch": (0.58, 0.01), "average": (0.69, 0.0)},
        "Deep-All": {"art_painting": (0.64, 0.01), "cartoon": (0.67, 0.02),
                     "photo": (0.85, 0.02), "sketch": (0.56, 0.02), "average": (0.68, 0.0)},
    },
    "ablation-flat-prior": {
        "Agg-MMD": {"all": (0.9217, 0.025)},
        "no-Agg-MMD": {"all": (0.9140, 0.031)},
        "Agg-no-MMD": {"all": (0.9236, 0.025)},
        "no-Agg-no-MMD": {"all": (0.9221, 0.026)},
    },
}


def reference_for(scenario_id: str) -> dict:
    return REFERENCE_RESULTS.get(scenario_id, {})


@dataclass
class ScenarioSplits:
    """Datasets of one manifest: training split, validation split and all instances."""
    manifest: ScenarioManifest
    train: ScenarioDataset
    val: ScenarioDataset
    full: ScenarioDataset

    @classmethod
    def load(cls, manifest: ScenarioManifest, load: Callable, num_classes=None) -> 'ScenarioSplits':
        full = ScenarioDataset.from_manifest(manifest, load, num_classes=num_classes)
        num_classes = full.num_classes
        return cls(manifest,
                   ScenarioDataset.from_manifest(manifest, load, split="train",
                                                 num_classes=num_classes),
                   ScenarioDataset.from_manifest(manifest, load, split="val",
                                                 num_classes=num_classes),
                   full)


def check_hidden_labels(manifest: ScenarioManifest):
    """Every instance must carry its sub-domain even though training never sees it."""
    missing = [inst.image_path for inst in manifest.instances if not inst.sub_domain]
    if missing:
        raise ArgumentError(f"{len(missing)} instances of {manifest.scenario_id} lack a "
                            f"sub-domain, e.g. {missing[0]}")


def lodo_plan(manifest: ScenarioManifest,
              semi_supervised_domain: str | None = None) -> list[tuple[str, tuple[str, ...]]]:
    """
    (test_domain, training domains) pairs.  Scenarios with test-only domains
    pair each test-only domain with all training domains.
    Otherwise every domain that is neither a bridge nor the semi-supervised
    domain is held out in turn.
    """
    training = manifest.training_domains
    if manifest.test_only_domains:
        return [(test, training) for test in manifest.test_only_domains]
    eligible = [d for d in training
                if d not in manifest.bridge_domains and d != semi_supervised_domain]
    if len(eligible) < 2:
        raise ArgumentError(f"LODO needs at least 2 non-bridge domains, "
                            f"{manifest.scenario_id} has {len(eligible)}")
    return [(test, tuple(d for d in training if d != test)) for test in eligible]


def train_algorithm(algorithm: str, train: ScenarioDataset, model_config: ModelConfig,
                    config: TrainConfig, val: ScenarioDataset | None = None,
                    track_accuracy: bool = False, progress=None) -> FitResult:
    if algorithm not in ALGORITHMS:
        raise ArgumentError(f"Unknown algorithm {algorithm!r} (choose from {', '.join(ALGORITHMS)})")
    if algorithm == "deep_all":
        return deep_all_fit(train, model_config, config, val_dataset=val, progress=progress)
    if model_config.variant != algorithm:
        # re-resolve decoder_uses_s for the other variant
        model_config = replace(model_config, variant=algorithm, decoder_uses_s=None)
    return fit(train, model_config, config, val_dataset=val, track_accuracy=track_accuracy,
               progress=progress)


@dataclass
class LodoJob:
    """One training run scored on one or more held-out domains."""
    algorithm: str
    test_domains: tuple[str, ...]
    seed: int
    train: ScenarioDataset
    val: ScenarioDataset | None
    tests: tuple[ScenarioDataset, ...]
    model_config: ModelConfig
    config: TrainConfig


def _annotate(exc: HduvaError, job: LodoJob) -> HduvaError:
    where = f"[test_domain={','.join(job.test_domains)}, seed={job.seed}]"
    if isinstance(exc, TrainingDivergenceError):
        return TrainingDivergenceError(exc.term, f"{where} {exc}")
    return type(exc)(f"{where} {exc}")


def run_lodo_job(job: LodoJob) -> list[tuple[str, int, float]]:
    try:
        result = train_algorithm(job.algorithm, job.train, job.model_config,
                                 replace(job.config, seed=job.seed), val=job.val)
    except HduvaError as exc:
        raise _annotate(exc, job) from exc
    scores = []
    for test_domain, test in zip(job.test_domains, job.tests):
        images, labels = test.pooled()
        accuracy = classification_accuracy(result.model, images, labels)
        logger.info("%s held out %s, seed %d: accuracy %.3f", job.algorithm, test_domain,
                    job.seed, accuracy)
        scores.append((test_domain, job.seed, accuracy))
    return scores


def lodo_evaluate(algorithm: str, splits: ScenarioSplits, model_config: ModelConfig,
                  config: TrainConfig, n_repeats: int = 10, seeds=None, workers: int = 1,
                  progress: Callable[[int], None] | None = None) -> list[ResultRow]:
    """
    One row per test domain with the accuracies of `n_repeats` seeds.  The
    classifier is the auxiliary classifier at the z_y posterior mean.  Test
    domains that share their training domains (test-only domains) are scored
    with the same model, so there is one training run per seed and distinct
    training set.
    """
    if n_repeats < 1:
        raise ArgumentError(f"n_repeats must be >= 1, got {n_repeats}")
    seeds = list(range(n_repeats)) if seeds is None else list(seeds)
    if len(seeds) != n_repeats:
        raise ArgumentError(f"Got {len(seeds)} seeds for {n_repeats} repeats")
    manifest = splits.manifest
    check_hidden_labels(manifest)
    plan = lodo_plan(manifest, config.semi_supervised_domain)

    held_out: dict[tuple[str, ...], list[str]] = {}
    for test_domain, train_domains in plan:
        held_out.setdefault(train_domains, []).append(test_domain)

    jobs = []
    for train_domains, test_domains in held_out.items():
        train = splits.train.subset([d for d in train_domains if d in splits.train.domains])
        val_domains = [d for d in train_domains if d in splits.val.domains]
        val = splits.val.subset(val_domains) if val_domains else None
        tests = tuple(splits.full.subset([d]) for d in test_domains)
        for seed in seeds:
            jobs.append(LodoJob(algorithm, tuple(test_domains), seed, train, val, tests,
                                model_config, config))

    accuracies: dict[tuple[str, int], float] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_lodo_job, job) for job in jobs]
            for done, future in enumerate(as_completed(futures), start=1):
                for domain, seed, acc in future.result():
                    accuracies[(domain, seed)] = acc
                if progress is not None:
                    progress(int(100 * done / len(jobs)))
    else:
        for done, job in enumerate(jobs, start=1):
            for domain, seed, acc in run_lodo_job(job):
                accuracies[(domain, seed)] = acc
            if progress is not None:
                progress(int(100 * done / len(jobs)))

    rows = []
    for test_domain, _ in plan:
        rows.append(ResultRow(test_domain, [accuracies[(test_domain, s)] for s in seeds],
                              extra={'algorithm': algorithm,
                                     'manifest_hash': manifest.manifest_hash}))
    return rows


def shift_auc(accuracies) -> float:
    """Trapezoidal area under accuracy vs. shift index rescaled to [0, 1]."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.ndim != 1 or acc.size < 2:
        raise ArgumentError(f"A shift sequence needs at least 2 points, got {acc.size}")
    return float(np.sum(acc[1:] + acc[:-1]) / (2 * (acc.size - 1)))


@dataclass
class ShiftAucResult:
    shifts: list[str]
    accuracies: list[float]
    auc: float

    def as_rows(self) -> list[ResultRow]:
        rows = [ResultRow(shift, [acc]) for shift, acc in zip(self.shifts, self.accuracies)]
        rows.append(ResultRow("AUC", [self.auc]))
        return rows


def shift_auc_evaluate(model: HDUVA, sequence: list[ScenarioDataset]) -> ShiftAucResult:
    """
    Accuracy on each dataset of the sequence (ordered by increasing shift)
    and the area under that curve.
    """
    if len(sequence) < 2:
        raise ArgumentError(f"A shift sequence needs at least 2 points, got {len(sequence)}")
    shifts, accuracies = [], []
    for dataset in sequence:
        images, labels = dataset.pooled()
        shifts.append(",".join(dataset.domain_names))
        accuracies.append(classification_accuracy(model, images, labels))
    return ShiftAucResult(shifts, accuracies, shift_auc(accuracies))


def shift_sequence(dataset: ScenarioDataset, domains) -> list[ScenarioDataset]:
    """Splits a multi-domain dataset into single-domain steps in the given order."""
    return [dataset.subset([d]) for d in domains]
