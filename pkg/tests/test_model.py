import math
import random
from dataclasses import replace

import pytest
import torch
from torch.nn import functional as F

from hduva.checkpoint import Checkpoint, load_checkpoint
from hduva.distributions import (
    CONCENTRATION_FLOOR,
    DirichletParams,
    LatentGaussian,
    gaussian_reparam,
    hierarchical_log_ratio,
    kl_diag_gaussians,
    kl_dirichlet,
    sample_gaussian,
)
from hduva.errors import ArgumentError, MissingArtifactError, StateError
from hduva.model import HDUVA, Betas, ElboBreakdown, ModelConfig, extended_objective, ladder_correct
from hduva.networks import ConcentrationHead, GaussianHead


def gaussian(mean, log_variance):
    return LatentGaussian(torch.tensor(mean, dtype=torch.float64),
                          torch.tensor(log_variance, dtype=torch.float64))


VARIANTS = [(variant, with_zx) for variant in ("hduva", "lhduva") for with_zx in (True, False)]


@pytest.mark.parametrize("variant,with_zx", VARIANTS)
def test_encode_shapes(tiny_config, image_batch, variant, with_zx):
    torch.manual_seed(0)
    model = HDUVA(replace(tiny_config, variant=variant, with_zx=with_zx))
    out = model.encode(image_batch, torch.Generator().manual_seed(0))
    assert out.q_zy.mean.shape == (5, 4)
    assert out.q_zd.mean.shape == (5, 4)
    assert out.q_s.concentration.shape == (5, 3)
    assert out.s.shape == (5, 3)
    assert (out.q_zx is None) == (not with_zx)
    assert (out.zd is not None) == (variant == "lhduva")


def test_encode_rejects_wrong_shape(tiny_model):
    with pytest.raises(ArgumentError):
        tiny_model.encode(torch.rand(2, 1, 16, 16))


def test_aggregated_topic_is_shared(tiny_model, image_batch):
    out = tiny_model.encode(image_batch, torch.Generator().manual_seed(0), aggregate=True)
    assert torch.equal(out.s, out.s[:1].expand_as(out.s))


def test_prior_zy_same_label_same_row(tiny_model):
    prior = tiny_model.prior_zy(torch.tensor([1, 1, 2]))
    assert torch.equal(prior.mean[0], prior.mean[1])
    assert torch.equal(prior.log_variance[0], prior.log_variance[1])


@pytest.mark.parametrize("labels", [[0, 3], [-1]])
def test_prior_zy_out_of_range(tiny_model, labels):
    with pytest.raises(ArgumentError):
        tiny_model.prior_zy(torch.tensor(labels))


def test_prior_zd_deterministic_and_checked(tiny_model):
    s = torch.tensor([[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]])
    prior = tiny_model.prior_zd(s)
    assert torch.equal(prior.mean[0], prior.mean[1])
    with pytest.raises(ArgumentError):
        tiny_model.prior_zd(torch.tensor([[0.5, 0.5, 0.5]]))
    with pytest.raises(ArgumentError):
        tiny_model.prior_zd(torch.tensor([[0.5, 0.5]]))


def test_prior_zd_gradient_matches_finite_difference(tiny_model):
    s = torch.tensor([0.2, 0.3, 0.5], dtype=torch.float64)
    model = tiny_model.double()

    def f(topic):
        return model.prior_zd(topic, validate=False).mean.sum()

    s_var = s.clone().requires_grad_(True)
    f(s_var).backward()
    eps = 1e-6
    for k in range(3):
        step = torch.zeros(3, dtype=torch.float64)
        step[k] = eps
        numeric = (f(s + step) - f(s - step)) / (2 * eps)
        assert float(s_var.grad[k]) == pytest.approx(float(numeric), abs=1e-5)


def test_ladder_fixed_point():
    q = gaussian([0.5, -1.0], [0.3, 0.1])
    out = ladder_correct(q, q)
    assert torch.allclose(out.mean, q.mean)
    assert torch.allclose(out.log_variance, q.log_variance - torch.log(torch.tensor(2.0)))


def test_ladder_flat_prior_leaves_q():
    q = gaussian([0.5, -1.0], [0.3, 0.1])
    out = ladder_correct(q, gaussian([10.0, 10.0], [40.0, 40.0]))
    assert torch.allclose(out.mean, q.mean, atol=1e-6)
    assert torch.allclose(out.log_variance, q.log_variance, atol=1e-6)


def test_ladder_precision_weighting():
    out = ladder_correct(gaussian([0.0], [0.0]), gaussian([2.0], [0.0]))
    assert float(out.mean) == pytest.approx(1.0)
    assert float(out.variance) == pytest.approx(0.5)


def test_ladder_dimension_mismatch():
    with pytest.raises(ArgumentError):
        ladder_correct(gaussian([0.0], [0.0]), gaussian([0.0, 0.0], [0.0, 0.0]))


def test_decode_shape_and_zero_latents(tiny_model, tiny_config):
    s = torch.full((2, 3), 1 / 3)
    logits = tiny_model.decode(s, torch.zeros(2, 4), torch.zeros(2, 4), torch.zeros(2, 4))
    assert logits.shape == (2, *tiny_config.image_shape)
    assert torch.isfinite(logits).all()


def test_decode_needs_zx(tiny_model):
    with pytest.raises(ArgumentError):
        tiny_model.decode(torch.full((1, 3), 1 / 3), torch.zeros(1, 4), None, torch.zeros(1, 4))


def test_decoder_uses_s_defaults(tiny_config):
    assert ModelConfig(variant="hduva").decoder_uses_s is True
    assert ModelConfig(variant="lhduva").decoder_uses_s is False
    no_s = replace(tiny_config, decoder_uses_s=False)
    assert no_s.decoder_input_dim == tiny_config.decoder_input_dim - 3


def test_classify_aux_is_log_probability(tiny_model):
    log_probs = tiny_model.classify_aux(torch.randn(6, 4))
    assert torch.allclose(log_probs.exp().sum(-1), torch.ones(6), atol=1e-5)


@pytest.mark.parametrize("variant,with_zx", VARIANTS)
def test_elbo_terms_finite(tiny_config, image_batch, variant, with_zx):
    torch.manual_seed(0)
    model = HDUVA(replace(tiny_config, variant=variant, with_zx=with_zx, topic_samples=2))
    bd = model.elbo_terms(image_batch, torch.tensor([0, 1, 2, 0, 1]),
                          generator=torch.Generator().manual_seed(0))
    for name, value in bd.terms().items():
        assert torch.isfinite(value), name
    assert (bd.kl_zx is None) == (not with_zx)
    assert float(bd.kl_zy) >= 0 and float(bd.kl_s) >= 0
    assert bd.zd_samples.shape == (5, 4)


def test_elbo_terms_invalid_labels(tiny_model, image_batch):
    with pytest.raises(ArgumentError):
        tiny_model.elbo_terms(image_batch, torch.tensor([0, 1, 2, 3, 0]))
    with pytest.raises(ArgumentError):
        tiny_model.elbo_terms(image_batch, torch.tensor([0, 1]))


def test_elbo_zero_betas_is_reconstruction(tiny_model, image_batch):
    bd = tiny_model.elbo_terms(image_batch, torch.tensor([0, 1, 2, 0, 1]),
                               betas=Betas(0.0, 0.0, 0.0, 0.0),
                               generator=torch.Generator().manual_seed(0))
    assert torch.equal(bd.elbo, bd.recon_loglik)


def _breakdown(aux: float) -> ElboBreakdown:
    t = torch.tensor
    return ElboBreakdown(recon_loglik=t(-50.0, dtype=torch.float64), kl_zx=t(1.0), kl_zy=t(2.0),
                         zd_log_ratio=t(0.5), kl_s=t(0.25), aux_class_loglik=t(aux))


def test_extended_objective_without_classifier_is_elbo():
    bd = _breakdown(-0.3)
    assert float(extended_objective(bd, 0.0)) == float(bd.elbo)


def test_extended_objective_weighting():
    bd = _breakdown(-0.01)
    assert float(extended_objective(bd, 1e5)) == pytest.approx(float(bd.elbo) - 1000.0)


def test_extended_objective_negative_gamma():
    with pytest.raises(ArgumentError):
        extended_objective(_breakdown(0.0), -1.0)


@pytest.mark.parametrize("variant", ["hduva", "lhduva"])
def test_conditional_generate_grid(tiny_config, variant):
    torch.manual_seed(0)
    model = HDUVA(replace(tiny_config, variant=variant, num_classes=10))
    seed_x = torch.rand(3, 16, 16)
    grid = model.conditional_generate(seed_x, list(range(10)), torch.Generator().manual_seed(4))
    assert grid.shape == (10, 3, 16, 16)
    again = model.conditional_generate(seed_x, list(range(10)), torch.Generator().manual_seed(4))
    assert torch.equal(grid, again)


def test_conditional_generate_nan_parameters(tiny_model):
    with torch.no_grad():
        next(tiny_model.decoder.parameters()).fill_(float('nan'))
    with pytest.raises(StateError):
        tiny_model.conditional_generate(torch.rand(3, 16, 16), [0, 1])


def test_conditional_generate_empty_sweep(tiny_model):
    with pytest.raises(ArgumentError):
        tiny_model.conditional_generate(torch.rand(3, 16, 16), [])


def test_model_config_validation():
    with pytest.raises(ArgumentError):
        ModelConfig(variant="diva")
    with pytest.raises(ArgumentError):
        ModelConfig(topic_dim=3, prior_alpha=(1.0, 1.0))
    with pytest.raises(ArgumentError):
        ModelConfig(latent_dim_zd=0)


def test_shared_trunk(tiny_config):
    model = HDUVA(replace(tiny_config, shared_trunk=True))
    assert model.encoder_zy.trunk is model.encoder_zd.trunk


def test_checkpoint_roundtrip(tmp_path, tiny_model):
    path = tmp_path / "model.pt"
    checkpoint = Checkpoint.from_model(tiny_model, seed=3, history=[{'epoch': 0}])
    checkpoint.save(path)
    loaded = load_checkpoint(path)
    assert loaded.checksum == checkpoint.checksum
    assert loaded.model_config == tiny_model.config
    rebuilt = loaded.build_model()
    x = torch.rand(2, 3, 16, 16)
    tiny_model.eval()
    assert torch.equal(rebuilt.predict(x), tiny_model.predict(x))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_checkpoint(tmp_path / "absent.pt")


@pytest.mark.parametrize("variant", ["hduva", "lhduva"])
def test_encode_is_deterministic_under_generator(tiny_config, image_batch, variant):
    torch.manual_seed(0)
    model = HDUVA(replace(tiny_config, variant=variant)).eval()
    a = model.encode(image_batch, torch.Generator().manual_seed(9))
    b = model.encode(image_batch, torch.Generator().manual_seed(9))
    assert torch.equal(a.s, b.s)
    assert torch.equal(a.q_s.concentration, b.q_s.concentration)
    assert torch.equal(a.q_zd.mean, b.q_zd.mean)
    assert torch.equal(a.q_zy.log_variance, b.q_zy.log_variance)
    if variant == "lhduva":
        assert torch.equal(a.zd, b.zd)


def test_topics_differ_per_instance_without_aggregation(tiny_model, image_batch):
    out = tiny_model.encode(image_batch, torch.Generator().manual_seed(0), aggregate=False)
    assert len({tuple(row.tolist()) for row in out.s}) == image_batch.shape[0]


def test_elbo_terms_vanish_when_posteriors_equal_priors(tiny_config, image_batch):
    torch.manual_seed(0)
    model = HDUVA(tiny_config).eval()
    x = image_batch[:1]
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, GaussianHead):
                for weight in module.parameters():
                    weight.zero_()
            elif isinstance(module, ConcentrationHead):
                module.linear.weight.zero_()
                module.linear.bias.fill_(0.5)
        model.prior_alpha.copy_(model.encoder_s(x).concentration[0].double())
    terms = model.elbo_terms(x, torch.tensor([1]), generator=torch.Generator().manual_seed(0))
    assert float(terms.kl_zx) == 0.0
    assert float(terms.kl_zy) == 0.0
    assert float(terms.zd_log_ratio) == 0.0
    assert float(terms.kl_s) == 0.0


def test_zd_log_ratio_is_nonnegative_in_expectation(tiny_model, image_batch):
    model = tiny_model.eval()
    n = 10_000
    with torch.no_grad():
        x = image_batch[:1]
        s = model.encoder_s(x).mean()
        q_zd = model.encoder_zd(x, s)
        p_zd = model.prior_zd(s)
        fresh = LatentGaussian(q_zd.mean.expand(n, -1), q_zd.log_variance.expand(n, -1))
        ratio = hierarchical_log_ratio(q_zd, p_zd, sample_gaussian(fresh, torch.Generator().manual_seed(0)))
    se = float(ratio.std()) / math.sqrt(n)
    assert float(ratio.mean()) >= -3 * se


def _toy_objective(theta: torch.Tensor) -> torch.Tensor:
    """
    Extended objective of a one-instance model with 1-d z_y and z_d, three
    topics and ten weights:  q(z_y) = N(t0, e^t1), p(z_y | y) = N(t2, 1),
    q(s) = Dir(softplus(t3..t5)), q(z_d) = N(t6, e^t7), p(z_d | s) = N(t8 s_0, 1),
    decoder logits (t9 z_y + z_d, z_y - z_d).
    """
    x = torch.tensor([1.0, 0.0], dtype=torch.float64)
    q_zy = LatentGaussian(theta[0:1], theta[1:2])
    p_zy = LatentGaussian(theta[2:3], torch.zeros(1, dtype=torch.float64))
    q_s = DirichletParams(F.softplus(theta[3:6]) + CONCENTRATION_FLOOR)
    s = q_s.mean()
    q_zd = LatentGaussian(theta[6:7], theta[7:8])
    p_zd = LatentGaussian(theta[8:9] * s[:1], torch.zeros(1, dtype=torch.float64))
    zy = gaussian_reparam(q_zy, torch.tensor([0.3], dtype=torch.float64))
    zd = gaussian_reparam(q_zd, torch.tensor([-0.7], dtype=torch.float64))
    logits = torch.cat([theta[9:10] * zy + zd, zy - zd])
    breakdown = ElboBreakdown(
        recon_loglik=-F.binary_cross_entropy_with_logits(logits, x, reduction='sum'),
        kl_zx=None,
        kl_zy=kl_diag_gaussians(q_zy, p_zy),
        zd_log_ratio=hierarchical_log_ratio(q_zd, p_zd, zd),
        kl_s=kl_dirichlet(q_s, DirichletParams(torch.ones(3, dtype=torch.float64))),
        aux_class_loglik=F.log_softmax(torch.cat([zy, -zy]), dim=0)[0],
        effective_betas=Betas(1.0, 0.5, 2.0, 1.0))
    return extended_objective(breakdown, gamma_y=3.0)


def test_extended_objective_gradient_matches_finite_differences():
    theta = torch.tensor([0.4, -0.3, -0.2, 0.1, 0.8, -0.5, 0.6, 0.2, 1.5, -0.9],
                         dtype=torch.float64)
    param = theta.clone().requires_grad_(True)
    _toy_objective(param).backward()
    eps = 1e-6
    for i in range(theta.numel()):
        step = torch.zeros_like(theta)
        step[i] = eps
        numeric = (_toy_objective(theta + step) - _toy_objective(theta - step)) / (2 * eps)
        assert float(param.grad[i]) == pytest.approx(float(numeric), rel=1e-3, abs=1e-8), i


def test_prior_zy_kl_gradient_matches_finite_differences(tiny_model):
    model = tiny_model.double()
    gen = torch.Generator().manual_seed(4)
    y = torch.tensor([0, 2, 1])
    q = LatentGaussian(torch.randn(3, 4, generator=gen, dtype=torch.float64),
                       0.5 * torch.randn(3, 4, generator=gen, dtype=torch.float64))

    def kl():
        return kl_diag_gaussians(q, model.prior_zy(y)).sum()

    model.zero_grad()
    kl().backward()
    eps = 1e-6
    with torch.no_grad():
        for name, weight in model.prior_zy_net.named_parameters():
            flat, grad = weight.view(-1), weight.grad.view(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + eps
                upper = float(kl())
                flat[i] = original - eps
                lower = float(kl())
                flat[i] = original
                numeric = (upper - lower) / (2 * eps)
                assert float(grad[i]) == pytest.approx(numeric, rel=1e-3, abs=1e-6), (name, i)


def test_classify_aux_separates_linearly_separable_codes(tiny_model):
    gen = torch.Generator().manual_seed(3)
    labels = torch.arange(3).repeat_interleave(20)
    codes = 3.0 * torch.eye(3, 4)[labels] + 0.3 * torch.randn(60, 4, generator=gen)
    optimizer = torch.optim.Adam(tiny_model.aux_classifier.parameters(), lr=0.05)
    for _ in range(300):
        optimizer.zero_grad()
        F.nll_loss(tiny_model.classify_aux(codes), labels).backward()
        optimizer.step()
    with torch.no_grad():
        predicted = tiny_model.classify_aux(codes).argmax(-1)
    assert torch.equal(predicted, labels)


def test_forward_passes_are_finite_for_random_configurations():
    rng = random.Random(0)
    gen = torch.Generator().manual_seed(0)
    for trial in range(100):
        config = ModelConfig(num_classes=rng.randint(2, 5),
                             image_shape=(rng.choice((1, 3)), 16, 16),
                             variant=rng.choice(("hduva", "lhduva")),
                             latent_dim_zx=rng.randint(1, 6),
                             latent_dim_zy=rng.randint(1, 6),
                             latent_dim_zd=rng.randint(1, 6),
                             topic_dim=rng.randint(1, 5),
                             with_zx=rng.random() < 0.5,
                             topic_samples=rng.randint(1, 2),
                             shared_trunk=rng.random() < 0.5,
                             hidden_dim=rng.randint(2, 8))
        torch.manual_seed(trial)
        model = HDUVA(config)
        x = torch.rand(3, *config.image_shape, generator=gen)
        y = torch.randint(0, config.num_classes, (3,), generator=gen)
        terms = model.elbo_terms(x, y, generator=gen, aggregate=rng.random() < 0.5)
        for name, value in terms.terms().items():
            assert torch.isfinite(value), (trial, config, name)
        assert torch.isfinite(terms.objective(10.0)), (trial, config)
