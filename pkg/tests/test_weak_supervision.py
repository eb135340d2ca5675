import pytest
import torch

from hduva.distributions import DirichletParams
from hduva.errors import ArgumentError
from hduva.mmd import KernelSpec, pairwise_domain_mmd
from hduva.weak_supervision import (
    WeakSupConfig,
    aggregate_concentration,
    constrained_loss,
    shared_topic_sample,
)


def params(*values):
    return DirichletParams.from_values(values)


def test_aggregate_mean():
    agg = aggregate_concentration([params(1.0, 2.0, 3.0), params(3.0, 2.0, 1.0)])
    assert agg.concentration.tolist() == [2.0, 2.0, 2.0]


def test_aggregate_single_element():
    agg = aggregate_concentration([params(0.3, 4.0)])
    assert agg.concentration.tolist() == pytest.approx([0.3, 4.0])


def test_aggregate_identical_batch():
    agg = aggregate_concentration([params(0.7, 1.1, 2.9)] * 5)
    assert agg.concentration.tolist() == pytest.approx([0.7, 1.1, 2.9])


def test_aggregate_is_permutation_invariant():
    batch = torch.rand(17, 4, generator=torch.Generator().manual_seed(0), dtype=torch.float64) + 0.1
    perm = torch.randperm(17, generator=torch.Generator().manual_seed(1))
    a = aggregate_concentration(DirichletParams(batch))
    b = aggregate_concentration(DirichletParams(batch[perm]))
    assert torch.equal(a.concentration, b.concentration)


@pytest.mark.parametrize("factor", [0.25, 2.0, 8.0])
def test_aggregate_commutes_with_scaling(factor):
    batch = torch.rand(9, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64) + 0.1
    scaled = aggregate_concentration(DirichletParams(batch * factor))
    plain = aggregate_concentration(DirichletParams(batch))
    assert torch.equal(scaled.concentration, factor * plain.concentration)


def test_aggregate_errors():
    with pytest.raises(ArgumentError):
        aggregate_concentration([])
    with pytest.raises(ArgumentError):
        aggregate_concentration([params(1.0, 1.0), params(1.0, 1.0, 1.0)])


def test_shared_topic_sample_broadcasts():
    s = shared_topic_sample(params(1.0, 2.0, 3.0), 6, torch.Generator().manual_seed(0))
    assert s.shape == (6, 3)
    assert torch.equal(s, s[:1].expand(6, 3))
    assert float(s[0].sum()) == pytest.approx(1.0)


def objectives():
    return [torch.tensor(-10.0, dtype=torch.float64), torch.tensor(-4.0, dtype=torch.float64)]


def zd_batches():
    gen = torch.Generator().manual_seed(0)
    return [torch.randn(8, 3, generator=gen, dtype=torch.float64),
            torch.randn(8, 3, generator=gen, dtype=torch.float64) + 2.0]


def test_loss_without_mmd_is_negative_objective_sum():
    loss = constrained_loss(objectives(), zd_batches(), WeakSupConfig(use_mmd=False))
    assert float(loss) == 14.0


def test_zero_gamma_matches_mmd_off():
    off = constrained_loss(objectives(), zd_batches(), WeakSupConfig(use_mmd=False))
    zero = constrained_loss(objectives(), zd_batches(), WeakSupConfig(use_mmd=True, gamma_d=0.0))
    assert float(off) == float(zero)


def test_identical_zd_batches_give_no_penalty():
    zd = zd_batches()[0]
    loss = constrained_loss(objectives(), [zd, zd.clone()], WeakSupConfig(use_mmd=True, gamma_d=5.0))
    assert float(loss) == pytest.approx(14.0, abs=1e-10)


def test_mmd_penalty_lowers_loss_for_separated_domains():
    loss = constrained_loss(objectives(), zd_batches(),
                            WeakSupConfig(use_mmd=True, gamma_d=1.0, kernel=KernelSpec((1.0,))))
    assert float(loss) < 14.0


def test_loss_is_monotone_in_mmd():
    cfg = WeakSupConfig(use_mmd=True, gamma_d=3.0, kernel=KernelSpec((1.0,)))
    base = zd_batches()[0]
    points = []
    for shift in (0.0, 0.5, 1.0, 2.0, 4.0):
        zd = [base, base.flip(0) + shift]
        penalty = float(pairwise_domain_mmd(zd, cfg.kernel, standardize=True))
        loss = float(constrained_loss(objectives(), zd, cfg))
        assert loss == pytest.approx(14.0 - 3.0 * penalty, rel=1e-12)
        points.append((penalty, loss))
    points.sort()
    assert points[0][0] < points[-1][0]
    losses = [loss for _, loss in points]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_loss_shape_errors():
    cfg = WeakSupConfig(use_mmd=True)
    with pytest.raises(ArgumentError):
        constrained_loss([], [], cfg)
    with pytest.raises(ArgumentError):
        constrained_loss(objectives(), zd_batches()[:1], cfg)
    with pytest.raises(ArgumentError):
        constrained_loss(objectives(), [torch.zeros(0, 3), torch.zeros(0, 3)], cfg)


@pytest.mark.parametrize("agg,mmd,name", [(True, True, "Agg-MMD"), (False, True, "no-Agg-MMD"),
                                          (True, False, "Agg-no-MMD"),
                                          (False, False, "no-Agg-no-MMD")])
def test_cell_names(agg, mmd, name):
    assert WeakSupConfig(use_aggregation=agg, use_mmd=mmd).cell_name == name


def test_negative_gamma_rejected():
    with pytest.raises(ArgumentError):
        WeakSupConfig(gamma_d=-1.0)
