import math
from dataclasses import replace

import pytest
import torch

from hduva.data import DomainBatch, DomainBatcher, ScenarioDataset
from hduva.errors import ArgumentError, TrainingDivergenceError
from hduva.figures import sample_topics, topic_silhouette
from hduva.model import HDUVA, Betas
from hduva.scenarios.color_mnist import gen_color_hierarchical
from hduva.scenarios.sources import SyntheticGlyphs
from hduva.training import (
    ModelSelector,
    TrainConfig,
    dataset_accuracy,
    deep_all_fit,
    fit,
    run_ablation_matrix,
    train_step,
    warmup_beta,
    write_history_csv,
)
from hduva.weak_supervision import WeakSupConfig, WeakSupervisionStats


def test_warmup_start_mid_end():
    config = TrainConfig(warmup_epochs=100)
    assert warmup_beta(0, config) == Betas(0.0, 0.0, 0.0, 0.0)
    assert warmup_beta(50, config) == Betas(0.5, 0.5, 0.5, 0.5)
    assert warmup_beta(100, config) == config.beta_targets
    assert warmup_beta(400, config) == config.beta_targets


def test_warmup_disabled():
    config = TrainConfig(warmup_epochs=0, beta_targets=Betas(2.0, 1.0, 1.0, 0.5))
    assert warmup_beta(0, config) == Betas(2.0, 1.0, 1.0, 0.5)


def test_warmup_is_monotone():
    config = TrainConfig(warmup_epochs=7, beta_targets=Betas(1.0, 3.0, 0.2, 1.0))
    values = [warmup_beta(e, config) for e in range(12)]
    for a, b in zip(values, values[1:]):
        assert all(x <= y for x, y in zip(a, b))


def test_train_config_validation():
    with pytest.raises(ArgumentError):
        TrainConfig(max_epochs=5, early_stop_patience=10)
    with pytest.raises(ArgumentError, match="early_stop_patience"):
        TrainConfig(early_stop_patience=0)
    with pytest.raises(ArgumentError):
        TrainConfig(gamma_y=-1.0)
    with pytest.raises(ArgumentError):
        TrainConfig(selection="loss")


def _batches(dataset, size=8):
    return [DomainBatch(name, d.images[:size], d.labels[:size]) for name, d in dataset.domains.items()]


def test_zero_learning_rate_leaves_parameters(tiny_model, toy_dataset):
    config = TrainConfig(gamma_y=0.0, learning_rate=0.0)
    before = {k: v.clone() for k, v in tiny_model.named_parameters()}
    optimizer = torch.optim.Adam(tiny_model.parameters(), lr=0.0)
    train_step(tiny_model, optimizer, _batches(toy_dataset), config, Betas(),
               torch.Generator().manual_seed(0))
    for name, value in tiny_model.named_parameters():
        assert torch.equal(value, before[name]), name


@pytest.mark.parametrize("agg,mmd", [(True, True), (False, True), (True, False), (False, False)])
def test_train_step_counts_weak_supervision(tiny_model, toy_dataset, agg, mmd):
    config = TrainConfig(gamma_y=1.0, weak=WeakSupConfig(use_aggregation=agg, use_mmd=mmd))
    optimizer = torch.optim.Adam(tiny_model.parameters(), lr=1e-4)
    stats = WeakSupervisionStats()
    step = train_step(tiny_model, optimizer, _batches(toy_dataset), config, Betas(),
                      torch.Generator().manual_seed(0), stats)
    assert math.isfinite(step.loss)
    assert stats.aggregated_instances == (24 if agg else 0)
    assert stats.mmd_instances == (24 if mmd else 0)
    assert stats.semi_supervised_instances == 0


def test_semi_supervised_domain_stays_out_of_weak_supervision(tiny_config, glyphs):
    scenario = gen_color_hierarchical(glyphs, seed=0, per_subdomain=10, semi_supervised=6)
    dataset = ScenarioDataset.from_generated(scenario)
    assert "unlabeled" in dataset.domains
    torch.manual_seed(0)
    model = HDUVA(tiny_config)
    config = TrainConfig(gamma_y=1.0, weak=WeakSupConfig(use_aggregation=True, use_mmd=True))
    stats = WeakSupervisionStats()
    train_step(model, torch.optim.Adam(model.parameters(), lr=1e-4), _batches(dataset, 6),
               config, Betas(), torch.Generator().manual_seed(0), stats)
    assert stats.semi_supervised_instances == 6
    assert stats.aggregated_instances == 18
    assert stats.mmd_instances == 18


def test_train_step_names_diverging_term(tiny_model, toy_dataset):
    with torch.no_grad():
        next(tiny_model.decoder.parameters()).fill_(float('nan'))
    optimizer = torch.optim.Adam(tiny_model.parameters(), lr=1e-4)
    with pytest.raises(TrainingDivergenceError) as info:
        train_step(tiny_model, optimizer, _batches(toy_dataset), TrainConfig(), Betas())
    assert info.value.term == "recon_loglik"
    assert info.value.exit_code == 4


def test_train_step_is_bit_reproducible(tiny_config, toy_dataset):
    def one_step():
        torch.manual_seed(0)
        model = HDUVA(tiny_config)
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        config = TrainConfig(gamma_y=10.0, weak=WeakSupConfig(use_aggregation=True, use_mmd=True))
        step = train_step(model, optimizer, _batches(toy_dataset), config, Betas(),
                          torch.Generator().manual_seed(5))
        return step, model.state_dict()

    step_a, state_a = one_step()
    step_b, state_b = one_step()
    assert step_a.loss == step_b.loss
    assert step_a.terms == step_b.terms
    for name, value in state_a.items():
        assert torch.equal(value, state_b[name]), name


def test_reconstruction_improves_with_training(tiny_config, toy_dataset):
    batches = _batches(toy_dataset, 17)
    assert sum(b.x.shape[0] for b in batches) == 51

    @torch.no_grad()
    def reconstruction(model):
        return sum(float(model.elbo_terms(b.x, b.y, generator=torch.Generator().manual_seed(1))
                         .recon_loglik) for b in batches) / len(batches)

    torch.manual_seed(0)
    model = HDUVA(tiny_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    config = TrainConfig(gamma_y=1.0)
    before = reconstruction(model)
    for step in range(40):
        train_step(model, optimizer, batches, config, Betas(), torch.Generator().manual_seed(step))
    assert reconstruction(model) > before


def test_train_step_needs_batches(tiny_model):
    with pytest.raises(ArgumentError):
        train_step(tiny_model, torch.optim.Adam(tiny_model.parameters()), [], TrainConfig(), Betas())


def test_batcher_is_seed_deterministic(toy_dataset):
    a = [[b.y.tolist() for b in step] for step in DomainBatcher(toy_dataset, 16, seed=3).epoch(1)]
    b = [[b.y.tolist() for b in step] for step in DomainBatcher(toy_dataset, 16, seed=3).epoch(1)]
    assert a == b
    assert len(a) == 3
    assert all(len(step) == 3 for step in a)


def test_batcher_one_domain_per_batch(toy_dataset):
    for step in DomainBatcher(toy_dataset, 16).epoch(0):
        assert [b.domain for b in step] == ["d1", "d2", "d3"]


def test_fit_single_epoch(toy_dataset, tiny_config, quick_train):
    result = fit(toy_dataset, tiny_config, replace(quick_train, max_epochs=1, early_stop_patience=1))
    assert len(result.history) == 1
    assert result.checkpoint.selected_epoch == 0
    assert result.checkpoint.variant == "hduva"


def test_fit_is_reproducible(toy_dataset, tiny_config, quick_train):
    a = fit(toy_dataset, tiny_config, quick_train)
    b = fit(toy_dataset, tiny_config, quick_train)
    assert a.checkpoint.checksum == b.checkpoint.checksum


def test_fit_selects_best_objective(toy_dataset, tiny_config, quick_train):
    result = fit(toy_dataset, tiny_config, replace(quick_train, max_epochs=4, early_stop_patience=4))
    best = max(m.objective for m in result.history)
    assert result.selected.objective == best
    assert result.checkpoint.selected_score == best


def test_fit_rejects_empty_and_mismatched(toy_dataset, tiny_config, quick_train):
    with pytest.raises(ArgumentError):
        fit(ScenarioDataset([]), tiny_config, quick_train)
    with pytest.raises(ArgumentError):
        fit(toy_dataset, replace(tiny_config, image_shape=(1, 16, 16)), quick_train)
    with pytest.raises(ArgumentError):
        fit(toy_dataset, tiny_config, replace(quick_train, selection="val_accuracy"))


def test_selector_stops_after_patience():
    selector = ModelSelector(patience=3, min_improvement=1e-6)
    module = torch.nn.Linear(1, 1)
    for epoch, score in enumerate([1.0, 2.0, 2.0, 1.5, 2.0]):
        selector.update(epoch, score, module)
    assert selector.best_epoch == 1
    assert selector.should_stop


def test_early_stopping_halts_training(toy_dataset, tiny_config, quick_train):
    # a huge improvement threshold makes every epoch after the first stagnate
    config = replace(quick_train, max_epochs=10, early_stop_patience=3, min_improvement=1e12)
    result = fit(toy_dataset, tiny_config, config)
    assert len(result.history) == 4


def test_deep_all_fit(toy_dataset, tiny_config, quick_train):
    result = deep_all_fit(toy_dataset, tiny_config, quick_train)
    assert result.checkpoint.variant == "deep_all"
    assert len(result.history) == 2
    assert 0.0 <= dataset_accuracy(result.model, toy_dataset) <= 1.0


def test_deep_all_leaves_generative_networks(toy_dataset, tiny_config, quick_train):
    torch.manual_seed(quick_train.seed)
    untouched = HDUVA(tiny_config).decoder.state_dict()
    result = deep_all_fit(toy_dataset, tiny_config, quick_train)
    for name, value in result.model.decoder.state_dict().items():
        assert torch.equal(value, untouched[name]), name


def test_history_csv(tmp_path, toy_dataset, tiny_config, quick_train):
    result = fit(toy_dataset, tiny_config, quick_train)
    path = tmp_path / "metrics.csv"
    write_history_csv(result.history, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("epoch,objective,mean_recon_loglik")
    assert "beta_s" in lines[0]
    assert len(lines) == 3


def test_ablation_matrix_rows(toy_dataset, tiny_config, quick_train):
    rows = run_ablation_matrix(toy_dataset, tiny_config, replace(quick_train, max_epochs=1,
                                                                 early_stop_patience=1))
    assert [r.label for r in rows] == ["Agg-MMD", "no-Agg-MMD", "Agg-no-MMD", "no-Agg-no-MMD"]
    assert len({r.extra['split_hash'] for r in rows}) == 1


@pytest.mark.slow
def test_objective_increases_during_training(toy_dataset, tiny_config):
    config = TrainConfig(gamma_y=10.0, warmup_epochs=0, max_epochs=20, early_stop_patience=20,
                         learning_rate=1e-3, batch_size=4, seed=0)
    result = fit(toy_dataset, tiny_config, config)
    assert result.history[19].objective > result.history[1].objective


@pytest.mark.slow
def test_deep_all_separates_glyphs(toy_dataset, tiny_config):
    config = TrainConfig(max_epochs=30, early_stop_patience=30, learning_rate=1e-3,
                         batch_size=16, seed=0)
    result = deep_all_fit(toy_dataset, tiny_config, config)
    assert dataset_accuracy(result.model, toy_dataset) >= 0.95


@pytest.mark.slow
def test_smoke_training_separates_classes_and_domains(tiny_config):
    scenario = gen_color_hierarchical(SyntheticGlyphs(count=600), seed=0, per_subdomain=100)
    dataset = ScenarioDataset.from_generated(scenario).subset(["d1", "d2"])
    config = TrainConfig(warmup_epochs=10, max_epochs=50, early_stop_patience=50,
                         learning_rate=1e-3, batch_size=32, seed=0)
    result = fit(dataset, tiny_config, config, track_accuracy=True)
    assert result.history[-1].accuracy >= 0.9
    topics, labels = sample_topics(result.model, dataset, max_per_domain=100)
    assert topic_silhouette(topics, labels) > 0.0
