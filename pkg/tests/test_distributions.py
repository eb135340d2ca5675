import math

import pytest
import torch
from scipy.special import digamma, gammaln
from torch.distributions import Dirichlet

from hduva.distributions import (
    CONCENTRATION_FLOOR,
    DirichletParams,
    LatentGaussian,
    SimplexPoint,
    dirichlet_sample,
    gaussian_reparam,
    hierarchical_log_ratio,
    kl_diag_gaussians,
    kl_dirichlet,
    log_normal_density,
    sample_gaussian,
)
from hduva.errors import ArgumentError


def gaussian(mean, log_variance):
    return LatentGaussian.from_values(mean, log_variance)


def test_reparam_zero_noise_is_mean():
    out = gaussian_reparam(gaussian([2.0, -1.0], [0.0, 0.0]), torch.zeros(2, dtype=torch.float64))
    assert out.tolist() == [2.0, -1.0]


def test_reparam_unit_case():
    out = gaussian_reparam(gaussian([0.0], [0.0]), torch.ones(1, dtype=torch.float64))
    assert out.tolist() == [1.0]


def test_reparam_dimension_mismatch():
    with pytest.raises(ArgumentError):
        gaussian_reparam(gaussian([0.0, 0.0], [0.0, 0.0]), torch.zeros(3))


def test_reparam_is_differentiable():
    mean = torch.zeros(3, requires_grad=True)
    log_var = torch.zeros(3, requires_grad=True)
    gaussian_reparam(LatentGaussian(mean, log_var), torch.ones(3)).sum().backward()
    assert torch.allclose(mean.grad, torch.ones(3))
    assert torch.allclose(log_var.grad, torch.full((3,), 0.5))


def test_non_finite_log_variance_rejected():
    with pytest.raises(ArgumentError):
        gaussian([0.0], [float('inf')])


def test_kl_identical_is_zero():
    q = gaussian([0.0, 0.0], [0.0, 0.0])
    assert float(kl_diag_gaussians(q, q)) == 0.0


def test_kl_shifted_mean():
    assert float(kl_diag_gaussians(gaussian([1.0], [0.0]), gaussian([0.0], [0.0]))) == pytest.approx(0.5)


def test_kl_wider_variance():
    kl = kl_diag_gaussians(gaussian([0.0], [1.0]), gaussian([0.0], [0.0]))
    assert float(kl) == pytest.approx((math.e - 2) / 2, abs=1e-12)


def test_kl_matches_monte_carlo_log_ratio():
    torch.manual_seed(0)
    q, p = gaussian([1.0, -0.5], [0.3, -0.2]), gaussian([0.0, 0.0], [0.0, 0.5])
    q_batch = LatentGaussian(q.mean.expand(20000, 2), q.log_variance.expand(20000, 2))
    samples = sample_gaussian(q_batch)
    ratio = log_normal_density(samples, q) - log_normal_density(samples, p)
    se = float(ratio.std()) / math.sqrt(ratio.numel())
    assert abs(float(ratio.mean()) - float(kl_diag_gaussians(q, p))) < 3 * se


def test_dirichlet_degenerate_simplex():
    s = dirichlet_sample(DirichletParams.from_values([3.7]))
    assert s.tolist() == [1.0]


def test_dirichlet_sample_lies_on_simplex():
    params = DirichletParams.from_values([[0.5, 1.0, 2.0], [5.0, 5.0, 5.0]])
    s = dirichlet_sample(params, torch.Generator().manual_seed(0))
    SimplexPoint(s)
    assert s.shape == (2, 3)


def test_dirichlet_sample_reproducible_with_generator():
    params = DirichletParams.from_values([0.5, 1.0, 2.0])
    a = dirichlet_sample(params, torch.Generator().manual_seed(3), (10,))
    b = dirichlet_sample(params, torch.Generator().manual_seed(3), (10,))
    assert torch.equal(a, b)


def test_dirichlet_nonpositive_rejected():
    with pytest.raises(ArgumentError):
        DirichletParams.from_values([1.0, 0.0])


def test_dirichlet_floor_applies_before_sampling():
    params = DirichletParams(torch.tensor([1e-9, 1.0], dtype=torch.float64))
    assert float(params.floored()[0]) == CONCENTRATION_FLOOR
    assert torch.isfinite(dirichlet_sample(params, torch.Generator().manual_seed(0))).all()


def test_dirichlet_pathwise_gradient_matches_analytic():
    """d E[s_k] / d alpha_j = (delta_jk A - alpha_k) / A^2 with A = sum(alpha)."""
    alpha0 = torch.tensor([2.0, 3.0, 1.5], dtype=torch.float64)
    total = float(alpha0.sum())
    n = 100_000
    gen = torch.Generator().manual_seed(0)
    for k in range(3):
        # one concentration row per sample gives per-sample gradients
        rows = alpha0.repeat(n, 1).requires_grad_(True)
        samples = dirichlet_sample(DirichletParams(rows), gen)
        samples[:, k].sum().backward()
        for j in range(3):
            expected = ((total if j == k else 0.0) - float(alpha0[k])) / total ** 2
            assert _within_3se(rows.grad[:, j], expected), (k, j)


def test_kl_dirichlet_identical_is_zero():
    q = DirichletParams.from_values([1.0, 1.0, 1.0])
    assert float(kl_dirichlet(q, q)) == pytest.approx(0.0, abs=1e-12)


def test_kl_dirichlet_closed_form():
    kl = kl_dirichlet(DirichletParams.from_values([2.0, 1.0]), DirichletParams.from_values([1.0, 1.0]))
    assert float(kl) == pytest.approx(math.log(2) - 0.5, abs=1e-10)


def test_kl_dirichlet_against_scipy_oracle():
    a, b = [0.7, 2.5, 4.0], [1.5, 1.0, 0.3]
    expected = (gammaln(sum(a)) - sum(gammaln(a)) - gammaln(sum(b)) + sum(gammaln(b))
                + sum((ai - bi) * (digamma(ai) - digamma(sum(a))) for ai, bi in zip(a, b)))
    kl = kl_dirichlet(DirichletParams.from_values(a), DirichletParams.from_values(b))
    assert float(kl) == pytest.approx(expected, rel=1e-9)


def test_kl_dirichlet_dimension_mismatch():
    with pytest.raises(ArgumentError):
        kl_dirichlet(DirichletParams.from_values([1.0, 1.0]), DirichletParams.from_values([1.0] * 3))


def test_log_ratio_identical_is_exactly_zero():
    q = gaussian([0.3, -1.0], [0.1, 0.2])
    assert float(hierarchical_log_ratio(q, q, torch.tensor([0.7, 2.0]))) == 0.0


def test_log_ratio_single_point():
    value = hierarchical_log_ratio(gaussian([1.0], [0.0]), gaussian([0.0], [0.0]),
                                   torch.tensor([0.0]))
    assert float(value) == pytest.approx(-0.5)


def test_log_ratio_averages_to_kl():
    torch.manual_seed(1)
    q, p = gaussian([0.5], [0.2]), gaussian([0.0], [0.0])
    q_batch = LatentGaussian(q.mean.expand(20000, 1), q.log_variance.expand(20000, 1))
    ratio = hierarchical_log_ratio(q, p, sample_gaussian(q_batch))
    se = float(ratio.std()) / math.sqrt(ratio.numel())
    assert abs(float(ratio.mean()) - float(kl_diag_gaussians(q, p))) < 3 * se


def _within_3se(samples: torch.Tensor, expected: float) -> bool:
    se = float(samples.std()) / math.sqrt(samples.numel())
    return abs(float(samples.mean()) - expected) <= 3 * se


def test_dirichlet_sample_mean():
    alpha = [0.5, 1.0, 2.5]
    s = dirichlet_sample(DirichletParams.from_values(alpha), torch.Generator().manual_seed(11),
                         (100_000,))
    for k, a in enumerate(alpha):
        assert _within_3se(s[:, k], a / sum(alpha))


def test_dirichlet_merging_components():
    """s_1 + s_2 of Dir(a0, a1, a2) is Beta(a1 + a2, a0) distributed."""
    a0, a1, a2 = 1.5, 0.7, 2.0
    s = dirichlet_sample(DirichletParams.from_values([a0, a1, a2]),
                         torch.Generator().manual_seed(5), (100_000,))
    merged = s[:, 1] + s[:, 2]
    a, total = a1 + a2, a0 + a1 + a2
    assert _within_3se(merged, a / total)
    assert _within_3se(merged ** 2, a * (a + 1) / (total * (total + 1)))


def test_reparam_is_affine_in_noise():
    params = gaussian([0.5, -2.0, 1.0], [0.3, -1.2, 0.8])
    gen = torch.Generator().manual_seed(2)
    n1, n2 = torch.randn(2, 3, generator=gen, dtype=torch.float64)
    a, b = 1.7, -0.4
    combined = gaussian_reparam(params, a * n1 + b * n2)
    expected = (a * gaussian_reparam(params, n1) + b * gaussian_reparam(params, n2)
                - (a + b - 1.0) * params.mean)
    torch.testing.assert_close(combined, expected, rtol=1e-12, atol=1e-12)


def test_kl_gaussian_nonnegative_on_random_pairs():
    gen = torch.Generator().manual_seed(3)
    for _ in range(100):
        dim = int(torch.randint(1, 8, (1,), generator=gen))
        q = LatentGaussian(*(2.0 * torch.randn(2, dim, generator=gen, dtype=torch.float64)))
        p = LatentGaussian(*(2.0 * torch.randn(2, dim, generator=gen, dtype=torch.float64)))
        assert float(kl_diag_gaussians(q, p)) >= 0.0


def test_kl_dirichlet_nonnegative_on_random_pairs():
    gen = torch.Generator().manual_seed(4)
    for _ in range(100):
        k = int(torch.randint(2, 8, (1,), generator=gen))
        q, p = torch.exp(1.5 * torch.randn(2, k, generator=gen, dtype=torch.float64))
        assert float(kl_dirichlet(DirichletParams(q), DirichletParams(p))) >= 0.0


def test_kl_dirichlet_matches_monte_carlo_log_ratio():
    q_alpha = torch.tensor([2.0, 1.0, 3.0], dtype=torch.float64)
    p_alpha = torch.tensor([1.0, 1.5, 0.8], dtype=torch.float64)
    s = dirichlet_sample(DirichletParams(q_alpha), torch.Generator().manual_seed(8), (200_000,))
    ratio = Dirichlet(q_alpha).log_prob(s) - Dirichlet(p_alpha).log_prob(s)
    expected = float(kl_dirichlet(DirichletParams(q_alpha), DirichletParams(p_alpha)))
    assert _within_3se(ratio, expected)
