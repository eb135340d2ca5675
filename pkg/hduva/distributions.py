"""
Sampling and KL-divergence primitives for the two distribution families the
model uses: diagonal Gaussians (z_x, z_y, z_d and their conditional priors)
and Dirichlets (the topic s).

All functions are pure given their arguments and an optional
`torch.Generator`; KL terms and log densities are accumulated in float64.
"""
import math
from dataclasses import dataclass

import torch
from torch.distributions import Dirichlet, kl_divergence

from .errors import ArgumentError

# Concentrations are clamped to this value before any sampling or digamma
# evaluation.
CONCENTRATION_FLOOR = 1e-4

LOG_2PI = math.log(2.0 * math.pi)


def _check_same_dim(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape[-1:] != b.shape[-1:]:
        raise ArgumentError(
            f"{what}: dimension mismatch ({a.shape[-1]} vs {b.shape[-1]})")


@dataclass(frozen=True)
class LatentGaussian:
    """
    Diagonal Gaussian given by its mean and log-variance.  Both tensors have
    shape (..., D); leading dimensions are batch dimensions.
    """
    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.dim() == 0 or self.mean.shape[-1] < 1:
            raise ArgumentError("LatentGaussian needs a dimension D >= 1")
        if self.mean.shape != self.log_variance.shape:
            raise ArgumentError(
                f"mean and log_variance shapes differ: {tuple(self.mean.shape)}"
                f" vs {tuple(self.log_variance.shape)}")

    @classmethod
    def from_values(cls, mean, log_variance) -> 'LatentGaussian':
        """
        Builds a validated Gaussian from array-likes.  Raises ArgumentError if
        the log-variance is not finite.
        """
        mean = torch.as_tensor(mean, dtype=torch.float64)
        log_variance = torch.as_tensor(log_variance, dtype=torch.float64)
        params = cls(mean, log_variance)
        params.validate()
        return params

    @classmethod
    def standard(cls, like: torch.Tensor) -> 'LatentGaussian':
        """N(0, I) with the shape, dtype and device of `like`."""
        zeros = torch.zeros_like(like)
        return cls(zeros, zeros.clone())

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def variance(self) -> torch.Tensor:
        return self.log_variance.exp()

    def validate(self):
        if not torch.isfinite(self.log_variance).all():
            raise ArgumentError("log_variance must be finite")
        if not torch.isfinite(self.mean).all():
            raise ArgumentError("mean must be finite")

    def detach(self) -> 'LatentGaussian':
        return LatentGaussian(self.mean.detach(), self.log_variance.detach())


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet concentration vector(s), shape (..., K)."""
    concentration: torch.Tensor

    def __post_init__(self):
        conc = self.concentration
        if conc.dim() == 0 or conc.shape[-1] < 1:
            raise ArgumentError("DirichletParams needs K >= 1")
        # NaN is not rejected here; training reports it as a non-finite term.
        if (conc <= 0).any():
            raise ArgumentError("concentration entries must be > 0")

    @classmethod
    def from_values(cls, concentration) -> 'DirichletParams':
        params = cls(torch.as_tensor(concentration, dtype=torch.float64))
        if not torch.isfinite(params.concentration).all():
            raise ArgumentError("concentration entries must be finite")
        return params

    @property
    def dim(self) -> int:
        return self.concentration.shape[-1]

    def mean(self) -> torch.Tensor:
        return self.concentration / self.concentration.sum(-1, keepdim=True)

    def floored(self) -> torch.Tensor:
        return self.concentration.clamp_min(CONCENTRATION_FLOOR)


@dataclass(frozen=True)
class SimplexPoint:
    """A point (or batch of points) on the K-1 simplex."""
    weights: torch.Tensor

    TOLERANCE = 1e-6

    def __post_init__(self):
        w = self.weights
        if w.dim() == 0 or w.shape[-1] < 1:
            raise ArgumentError("SimplexPoint needs K >= 1")
        if ((w < 0) | (w > 1)).any() or not torch.isfinite(w).all():
            raise ArgumentError("simplex weights must lie in [0, 1]")
        total = w.detach().double().sum(-1)
        if ((total - 1.0).abs() > self.TOLERANCE).any():
            raise ArgumentError("simplex weights must sum to 1")


def gaussian_reparam(params: LatentGaussian, noise: torch.Tensor) -> torch.Tensor:
    """
    Location-scale reparameterization: mean + exp(0.5 * log_variance) * noise.
    Differentiable with respect to both parameter tensors.
    """
    _check_same_dim(params.mean, noise, "gaussian_reparam")
    return params.mean + torch.exp(0.5 * params.log_variance) * noise


def sample_gaussian(params: LatentGaussian,
                    generator: torch.Generator | None = None) -> torch.Tensor:
    """Draws one reparameterized sample per batch row."""
    noise = torch.randn(params.mean.shape, generator=generator,
                        dtype=params.mean.dtype, device=params.mean.device)
    return gaussian_reparam(params, noise)


def log_normal_density(x: torch.Tensor, params: LatentGaussian) -> torch.Tensor:
    """
    log N(x; mean, exp(log_variance)) summed over the last dimension, in
    float64.  Uses the log-variance directly.
    """
    _check_same_dim(params.mean, x, "log_normal_density")
    x = x.double()
    mean = params.mean.double()
    log_var = params.log_variance.double()
    return -0.5 * (LOG_2PI + log_var + (x - mean).pow(2) * torch.exp(-log_var)).sum(-1)


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """
    Closed-form KL(q || p) between diagonal Gaussians, summed over the last
    dimension.  Returns a float64 tensor with the broadcast batch shape.
    """
    _check_same_dim(q.mean, p.mean, "kl_diag_gaussians")
    q_mean, q_lv = q.mean.double(), q.log_variance.double()
    p_mean, p_lv = p.mean.double(), p.log_variance.double()
    ratio = torch.exp(q_lv - p_lv)
    mahalanobis = (p_mean - q_mean).pow(2) * torch.exp(-p_lv)
    kl = 0.5 * (ratio + mahalanobis - 1.0 + p_lv - q_lv).sum(-1)
    return kl.clamp_min(0.0)


def _derived_seed(generator: torch.Generator) -> int:
    return int(torch.randint(0, 2 ** 62, (1,), generator=generator).item())


def dirichlet_sample(params: DirichletParams,
                     generator: torch.Generator | None = None,
                     sample_shape: torch.Size | tuple = ()) -> torch.Tensor:
    """
    Reparameterized Dirichlet draw of shape sample_shape + batch + (K,).

    Samples are normalized Gamma(alpha_k, 1) draws; gradients with respect to
    the concentration flow through torch's implicit (pathwise) Gamma
    gradient.  Concentrations are floored at CONCENTRATION_FLOOR first.

    torch's Dirichlet sampler only reads the global RNG, so when a generator
    is given the draw runs inside a forked RNG seeded from that generator.
    """
    conc = params.floored()
    if params.dim == 1:
        return torch.ones(torch.Size(sample_shape) + conc.shape,
                          dtype=conc.dtype, device=conc.device)
    dist = Dirichlet(conc, validate_args=False)
    if generator is None:
        return dist.rsample(torch.Size(sample_shape))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(_derived_seed(generator))
        return dist.rsample(torch.Size(sample_shape))


def kl_dirichlet(q: DirichletParams, p: DirichletParams) -> torch.Tensor:
    """
    Closed-form KL(q || p) between Dirichlets (log-gamma partition terms plus
    digamma expectations), float64, broadcast over batch dimensions.
    """
    if q.dim != p.dim:
        raise ArgumentError(f"kl_dirichlet: dimension mismatch ({q.dim} vs {p.dim})")
    kl = kl_divergence(Dirichlet(q.floored().double(), validate_args=False),
                       Dirichlet(p.floored().double(), validate_args=False))
    return kl.clamp_min(0.0)


def hierarchical_log_ratio(q_zd: LatentGaussian, p_zd_given_s: LatentGaussian,
                           zd_sample: torch.Tensor) -> torch.Tensor:
    """
    Single-sample estimate of the two-level term
    E[log q(z_d | x, s) - log p(z_d | s)] for a z_d drawn from q at a fixed
    topic s.  Individual values may be negative; the expectation is the
    Gaussian KL and therefore nonnegative.
    """
    _check_same_dim(q_zd.mean, p_zd_given_s.mean, "hierarchical_log_ratio")
    return log_normal_density(zd_sample, q_zd) - log_normal_density(zd_sample, p_zd_given_s)
