"""
Training: beta warm-up, domain-stratified steps on the constrained loss,
model selection by the extended objective (or validation accuracy), early
stopping, the Deep-All baseline and the weak-supervision ablation matrix.
"""
import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import torch
from torch.nn import functional as F

from .checkpoint import Checkpoint
from .data import DomainBatch, DomainBatcher, DomainData, ScenarioDataset
from .errors import ArgumentError, TrainingDivergenceError
from .model import HDUVA, Betas, ElboBreakdown, ModelConfig
from .results import ResultRow
from .weak_supervision import ABLATION_CELLS, WeakSupConfig, WeakSupervisionStats, constrained_loss

logger = logging.getLogger(__name__)

SELECTIONS = ("extended_elbo", "val_accuracy")


@dataclass(frozen=True)
class TrainConfig:
    beta_targets: Betas = Betas()
    gamma_y: float = 1e5
    warmup_epochs: int = 100
    max_epochs: int = 500
    early_stop_patience: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    selection: str = "extended_elbo"
    weak: WeakSupConfig = field(default_factory=WeakSupConfig)
    grad_clip: float = 100.0
    min_improvement: float = 1e-6
    semi_supervised_domain: Optional[str] = "unlabeled"

    def __post_init__(self):
        if any(b < 0 for b in self.beta_targets) or self.gamma_y < 0:
            raise ArgumentError("All multipliers must be >= 0")
        if self.warmup_epochs < 0:
            raise ArgumentError("warmup_epochs must be >= 0")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ArgumentError("max_epochs and batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ArgumentError("early_stop_patience must be >= 1")
        if self.early_stop_patience > self.max_epochs:
            raise ArgumentError("early_stop_patience must not exceed max_epochs")
        if self.learning_rate < 0:
            raise ArgumentError("learning_rate must be >= 0")
        if self.selection not in SELECTIONS:
            raise ArgumentError(f"Unknown selection criterion: {self.selection!r}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d['beta_targets'] = list(self.beta_targets)
        return d


@dataclass
class EpochMetrics:
    epoch: int
    objective: float
    terms: dict
    betas: Betas
    accuracy: Optional[float] = None
    score: Optional[float] = None
    improved: bool = False

    def as_row(self) -> dict:
        row = {'epoch': self.epoch, 'objective': self.objective}
        row.update({f'mean_{k}': v for k, v in self.terms.items()})
        row.update({f'beta_{k}': v for k, v in self.betas._asdict().items()})
        row['accuracy'] = '' if self.accuracy is None else self.accuracy
        row['improved'] = int(self.improved)
        return row


@dataclass
class StepMetrics:
    objective: float
    terms: dict
    loss: float


@dataclass
class FitResult:
    model: HDUVA
    checkpoint: Checkpoint
    history: list[EpochMetrics]
    stats: WeakSupervisionStats

    @property
    def selected(self) -> EpochMetrics:
        return self.history[self.checkpoint.selected_epoch]


def warmup_beta(epoch: int, config: TrainConfig) -> Betas:
    """beta_target * min(1, epoch / T_warm); T_warm == 0 gives the targets."""
    if epoch < 0:
        raise ArgumentError(f"epoch must be >= 0, got {epoch}")
    if config.warmup_epochs == 0 or epoch >= config.warmup_epochs:
        return Betas(*config.beta_targets)
    ramp = epoch / config.warmup_epochs
    return Betas(*(b * ramp for b in config.beta_targets))


def _check_finite(breakdown: ElboBreakdown, domain: str):
    for name, value in breakdown.terms().items():
        if not torch.isfinite(value).all():
            raise TrainingDivergenceError(
                name, f"Training diverged: non-finite {name} on domain {domain!r}")


def train_step(model: HDUVA, optimizer: torch.optim.Optimizer, batches: list[DomainBatch],
               config: TrainConfig, betas: Betas,
               generator: torch.Generator | None = None,
               stats: WeakSupervisionStats | None = None) -> StepMetrics:
    """
    One gradient update from one batch per domain.  Labeled domains go
    through the constrained loss (aggregation / MMD as configured); the
    semi-supervised domain adds its objective with per-instance topics and
    stays out of both mechanisms.
    """
    if not batches:
        raise ArgumentError("train_step needs at least one domain batch")
    stats = stats if stats is not None else WeakSupervisionStats()
    weak = config.weak
    model.train()
    optimizer.zero_grad()

    labeled = [b for b in batches if b.domain != config.semi_supervised_domain]
    unlabeled = [b for b in batches if b.domain == config.semi_supervised_domain]

    objectives, zd_samples, breakdowns = [], [], []
    for batch in labeled:
        bd = model.elbo_terms(batch.x, batch.y, betas, generator,
                              aggregate=weak.use_aggregation)
        _check_finite(bd, batch.domain)
        objectives.append(bd.objective(config.gamma_y))
        zd_samples.append(bd.zd_samples)
        breakdowns.append(bd)
        if weak.use_aggregation:
            stats.aggregated_instances += batch.x.shape[0]
    if weak.use_mmd and weak.gamma_d > 0 and len(labeled) > 1:
        stats.mmd_instances += sum(b.x.shape[0] for b in labeled)

    loss = constrained_loss(objectives, zd_samples, weak) if labeled else 0.0
    for batch in unlabeled:
        bd = model.elbo_terms(batch.x, batch.y, betas, generator, aggregate=False)
        _check_finite(bd, batch.domain)
        f = bd.objective(config.gamma_y)
        objectives.append(f)
        breakdowns.append(bd)
        loss = loss - f
        stats.semi_supervised_instances += batch.x.shape[0]

    if not torch.isfinite(loss):
        raise TrainingDivergenceError("mmd" if weak.use_mmd else "objective")
    loss.backward()
    norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    if not torch.isfinite(norm):
        raise TrainingDivergenceError("gradient")
    optimizer.step()

    n = len(breakdowns)
    terms = {}
    for bd in breakdowns:
        for name, value in bd.as_floats().items():
            terms[name] = terms.get(name, 0.0) + value / n
    objective = sum(float(f.detach()) for f in objectives) / n
    logger.debug("step objective %.4f loss %.4f", objective, float(loss.detach()))
    return StepMetrics(objective=objective, terms=terms, loss=float(loss.detach()))


@torch.no_grad()
def classification_accuracy(model: HDUVA, images: torch.Tensor, labels: torch.Tensor,
                            batch_size: int = 256) -> float:
    """Accuracy of the auxiliary classifier at the z_y posterior mean."""
    if labels.numel() == 0:
        raise ArgumentError("Cannot compute accuracy on an empty set")
    was_training = model.training
    model.eval()
    try:
        correct = 0
        for start in range(0, labels.shape[0], batch_size):
            pred = model.predict(images[start:start + batch_size])
            correct += int((pred == labels[start:start + batch_size]).sum())
        return correct / labels.shape[0]
    finally:
        model.train(was_training)


def dataset_accuracy(model: HDUVA, dataset: ScenarioDataset) -> float:
    images, labels = dataset.pooled()
    return classification_accuracy(model, images, labels)


class ModelSelector:
    """
    Keeps the state with the highest score seen so far and counts epochs
    since the last improvement larger than `min_improvement`.
    """

    def __init__(self, patience: int, min_improvement: float):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best_score = -math.inf
        self.best_epoch = -1
        self.best_state = None
        self._reference = -math.inf
        self._waited = 0

    def update(self, epoch: int, score: float, model: torch.nn.Module) -> bool:
        improved = score > self.best_score
        if improved:
            self.best_score = score
            self.best_epoch = epoch
            self.best_state = copy.deepcopy(model.state_dict())
        if score > self._reference + self.min_improvement:
            self._reference = score
            self._waited = 0
        else:
            self._waited += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self._waited >= self.patience


def _resolve_model_config(model_config: ModelConfig, dataset: ScenarioDataset) -> ModelConfig:
    if tuple(model_config.image_shape) != tuple(dataset.image_shape):
        raise ArgumentError(f"Model expects images {model_config.image_shape}, "
                            f"data has {dataset.image_shape}")
    if dataset.num_classes > model_config.num_classes:
        raise ArgumentError(f"Data has {dataset.num_classes} classes, model "
                            f"{model_config.num_classes}")
    return model_config


def fit(dataset: ScenarioDataset, model_config: ModelConfig, config: TrainConfig,
        val_dataset: ScenarioDataset | None = None, track_accuracy: bool = False,
        progress: Callable[[int], None] | None = None) -> FitResult:
    """
    Trains a fresh model on every domain of `dataset`.  Selection uses the
    running mean of the extended objective over the epoch's training stream
    (no validation data), or validation accuracy when configured.
    """
    if len(dataset) == 0:
        raise ArgumentError("Training set is empty")
    if config.selection == "val_accuracy" and (val_dataset is None or len(val_dataset) == 0):
        raise ArgumentError("selection = val_accuracy needs a validation set")
    _resolve_model_config(model_config, dataset)

    torch.manual_seed(config.seed)
    model = HDUVA(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)
    batcher = DomainBatcher(dataset, config.batch_size, config.seed)
    selector = ModelSelector(config.early_stop_patience, config.min_improvement)
    stats = WeakSupervisionStats()
    history: list[EpochMetrics] = []

    logger.info("Training %s on %s (%d instances, %s)", model_config.variant,
                ", ".join(dataset.domain_names), len(dataset), config.weak.cell_name)
    for epoch in range(config.max_epochs):
        betas = warmup_beta(epoch, config)
        steps = [train_step(model, optimizer, batches, config, betas, generator, stats)
                 for batches in batcher.epoch(epoch)]
        objective = sum(s.objective for s in steps) / len(steps)
        terms = {k: sum(s.terms.get(k, 0.0) for s in steps) / len(steps) for k in steps[0].terms}
        accuracy = dataset_accuracy(model, dataset) if track_accuracy else None
        if config.selection == "val_accuracy":
            score = dataset_accuracy(model, val_dataset)
        else:
            score = objective
        improved = selector.update(epoch, score, model)
        history.append(EpochMetrics(epoch, objective, terms, betas, accuracy, score, improved))
        logger.info("epoch %d objective %.4f betas %s%s%s", epoch, objective,
                    tuple(round(b, 4) for b in betas),
                    '' if accuracy is None else f" accuracy {accuracy:.3f}",
                    ' *' if improved else '')
        if progress is not None:
            progress(int(100 * (epoch + 1) / config.max_epochs))
        if selector.should_stop:
            logger.info("Stopping after %d epochs without improvement", selector.patience)
            break

    model.load_state_dict(selector.best_state)
    checkpoint = Checkpoint.from_model(
        model, train_config=config.as_dict(), seed=config.seed,
        history=[m.as_row() for m in history],
        selected_epoch=selector.best_epoch, selected_score=selector.best_score)
    return FitResult(model, checkpoint, history, stats)


def deep_all_fit(dataset: ScenarioDataset, model_config: ModelConfig, config: TrainConfig,
                 val_dataset: ScenarioDataset | None = None,
                 progress: Callable[[int], None] | None = None) -> FitResult:
    """
    Baseline: pools every training domain and trains only the z_y encoder
    and the auxiliary classifier with cross-entropy.  Selection by
    validation accuracy when asked (and available), else by the training
    log-likelihood.
    """
    if len(dataset) == 0:
        raise ArgumentError("Training set is empty")
    if config.selection == "val_accuracy" and (val_dataset is None or len(val_dataset) == 0):
        raise ArgumentError("selection = val_accuracy needs a validation set")
    _resolve_model_config(model_config, dataset)

    torch.manual_seed(config.seed)
    model = HDUVA(model_config)
    params = list(model.encoder_zy.parameters()) + list(model.aux_classifier.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    images, labels = dataset.pooled()
    pooled = ScenarioDataset([_pool_domain(images, labels)], dataset.num_classes)
    batcher = DomainBatcher(pooled, config.batch_size, config.seed)
    selector = ModelSelector(config.early_stop_patience, config.min_improvement)
    history: list[EpochMetrics] = []

    logger.info("Training deep_all on %d pooled instances", len(labels))
    for epoch in range(config.max_epochs):
        model.train()
        total, count = 0.0, 0
        for (batch,) in batcher.epoch(epoch):
            optimizer.zero_grad()
            log_probs = model.classify_aux(model.encoder_zy(batch.x).mean)
            loss = F.nll_loss(log_probs, batch.y)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError("aux_class_loglik")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            total += -float(loss.detach()) * batch.y.shape[0]
            count += batch.y.shape[0]
        objective = total / count
        accuracy = classification_accuracy(model, images, labels)
        if config.selection == "val_accuracy":
            score = dataset_accuracy(model, val_dataset)
        else:
            score = objective
        improved = selector.update(epoch, score, model)
        history.append(EpochMetrics(epoch, objective, {'aux_class_loglik': objective},
                                    Betas(0.0, 0.0, 0.0, 0.0), accuracy, score, improved))
        logger.info("epoch %d log-lik %.4f accuracy %.3f%s", epoch, objective, accuracy,
                    ' *' if improved else '')
        if progress is not None:
            progress(int(100 * (epoch + 1) / config.max_epochs))
        if selector.should_stop:
            break

    model.load_state_dict(selector.best_state)
    checkpoint = Checkpoint.from_model(
        model, variant="deep_all", train_config=config.as_dict(), seed=config.seed,
        history=[m.as_row() for m in history],
        selected_epoch=selector.best_epoch, selected_score=selector.best_score)
    return FitResult(model, checkpoint, history, WeakSupervisionStats())


def _pool_domain(images, labels) -> DomainData:
    n = labels.shape[0]
    return DomainData("pooled", images, labels, [str(i) for i in range(n)], ["pooled"] * n)


def write_history_csv(history: list[EpochMetrics], path):
    """One row per epoch: objective, per-term means, effective betas."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [m.as_row() for m in history]
    fields = list(rows[0]) if rows else ['epoch', 'objective']
    with path.open('w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)


def run_ablation_matrix(dataset: ScenarioDataset, model_config: ModelConfig,
                        base_config: TrainConfig, test_dataset: ScenarioDataset | None = None,
                        seeds=(0,)) -> list[ResultRow]:
    """
    Fits every (aggregation, MMD) combination with the same seeds and data.
    Rows come in the order Agg-MMD, no-Agg-MMD, Agg-no-MMD, no-Agg-no-MMD;
    values are accuracies on `test_dataset` (training data when absent).
    """
    evaluate_on = test_dataset if test_dataset is not None else dataset
    split = dataset.split_hash()
    rows = []
    for (use_agg, use_mmd), cell in ABLATION_CELLS.items():
        row = ResultRow(cell, extra={'split_hash': split})
        for seed in seeds:
            weak = replace(base_config.weak, use_aggregation=use_agg, use_mmd=use_mmd)
            result = fit(dataset, model_config, replace(base_config, seed=seed, weak=weak))
            row.values.append(dataset_accuracy(result.model, evaluate_on))
        logger.info("%s: %.3f", cell, row.mean)
        rows.append(row)
    return rows
