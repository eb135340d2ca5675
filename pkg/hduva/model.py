"""
The hierarchical domain-unsupervised VAE.

Latents: z_x (residual noise, optional), z_y (class), z_d (domain) and the
topic s on the K-1 simplex that conditions the prior of z_d.  Two inference
variants share the generative side:

* ``hduva``: q(s | x) from the image, q(z_d | x, s) from image and topic.
* ``lhduva``: q(z_d | x) bottom-up, q(s | z_d) from a z_d sample, and the
  bottom-up z_d posterior corrected top-down with p(z_d | s).
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import torch
from torch import nn
from torch.nn import functional as F

from .distributions import (
    DirichletParams,
    LatentGaussian,
    SimplexPoint,
    dirichlet_sample,
    hierarchical_log_ratio,
    kl_diag_gaussians,
    kl_dirichlet,
    sample_gaussian,
)
from .errors import ArgumentError, StateError
from .networks import (
    ConditionalGaussianPrior,
    ConvTrunk,
    Decoder,
    DirichletEncoder,
    GaussianEncoder,
    TopicFromLatent,
)
from .weak_supervision import aggregate_concentration, shared_topic_sample

logger = logging.getLogger(__name__)

VARIANTS = ("hduva", "lhduva")


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture of one model.  decoder_uses_s=None resolves to True for
    hduva and False for lhduva.  prior_alpha=None is the flat Dirichlet
    prior (all ones).
    """
    num_classes: int = 10
    image_shape: tuple[int, int, int] = (3, 28, 28)
    variant: str = "hduva"
    latent_dim_zx: int = 64
    latent_dim_zy: int = 64
    latent_dim_zd: int = 64
    topic_dim: int = 3
    with_zx: bool = True
    decoder_uses_s: Optional[bool] = None
    topic_samples: int = 1
    shared_trunk: bool = False
    hidden_dim: int = 64
    prior_alpha: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArgumentError(f"Unknown model variant: {self.variant!r}")
        for name in ("latent_dim_zx", "latent_dim_zy", "latent_dim_zd", "topic_dim",
                     "num_classes", "topic_samples", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.image_shape) != 3:
            raise ArgumentError(f"image_shape must be (C, H, W), got {self.image_shape}")
        if self.decoder_uses_s is None:
            object.__setattr__(self, 'decoder_uses_s', self.variant == "hduva")
        if self.prior_alpha is not None:
            if len(self.prior_alpha) != self.topic_dim:
                raise ArgumentError(
                    f"prior_alpha has {len(self.prior_alpha)} entries, topic_dim is {self.topic_dim}")
            if any(a <= 0 for a in self.prior_alpha):
                raise ArgumentError("prior_alpha entries must be > 0")

    @property
    def ladder(self) -> bool:
        return self.variant == "lhduva"

    @property
    def decoder_input_dim(self) -> int:
        dim = self.latent_dim_zd + self.latent_dim_zy
        if self.with_zx:
            dim += self.latent_dim_zx
        if self.decoder_uses_s:
            dim += self.topic_dim
        return dim


class Betas(NamedTuple):
    x: float = 1.0
    y: float = 1.0
    d: float = 1.0
    s: float = 1.0


@dataclass
class EncoderOutputs:
    """
    Posterior parameters for one batch.  `s` is the topic draw that q_zd was
    conditioned on (hduva) or drawn from q_s (lhduva); `zd` is the bottom-up
    z_d draw that fed the topic encoder (lhduva only).
    """
    q_zx: Optional[LatentGaussian]
    q_zy: LatentGaussian
    q_s: DirichletParams
    q_zd: LatentGaussian
    s: torch.Tensor
    zd: Optional[torch.Tensor] = None


@dataclass
class ElboBreakdown:
    """Batch-mean Monte-Carlo estimates of each term, float64 tensors."""
    recon_loglik: torch.Tensor
    kl_zx: Optional[torch.Tensor]
    kl_zy: torch.Tensor
    zd_log_ratio: torch.Tensor
    kl_s: torch.Tensor
    aux_class_loglik: torch.Tensor
    effective_betas: Betas = field(default_factory=Betas)
    zd_samples: Optional[torch.Tensor] = None

    TERMS = ("recon_loglik", "kl_zx", "kl_zy", "zd_log_ratio", "kl_s", "aux_class_loglik")

    @property
    def elbo(self) -> torch.Tensor:
        b = self.effective_betas
        value = (self.recon_loglik
                 - b.y * self.kl_zy
                 - b.d * self.zd_log_ratio
                 - b.s * self.kl_s)
        if self.kl_zx is not None:
            value = value - b.x * self.kl_zx
        return value

    def objective(self, gamma_y: float) -> torch.Tensor:
        return self.elbo + gamma_y * self.aux_class_loglik

    def terms(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in self.TERMS
                if getattr(self, name) is not None}

    def as_floats(self) -> dict[str, float]:
        return {name: float(value.detach()) for name, value in self.terms().items()}


def extended_objective(breakdown: ElboBreakdown, gamma_y: float) -> torch.Tensor:
    """F = ELBO + gamma_y * E[log q_w(y | z_y)]."""
    if gamma_y < 0:
        raise ArgumentError(f"gamma_y must be >= 0, got {gamma_y}")
    return breakdown.objective(gamma_y)


def ladder_correct(q_zd: LatentGaussian, p_zd_given_s: LatentGaussian) -> LatentGaussian:
    """
    Precision-weighted merge of the bottom-up posterior with the top-down
    prior: precisions add, the mean is the precision-weighted average.
    Computed in log space so an effectively flat prior leaves q unchanged.
    """
    if q_zd.mean.shape[-1] != p_zd_given_s.mean.shape[-1]:
        raise ArgumentError(
            f"ladder_correct: dimension mismatch ({q_zd.dim} vs {p_zd_given_s.dim})")
    log_prec_q = -q_zd.log_variance
    log_prec_p = -p_zd_given_s.log_variance
    log_prec = torch.logaddexp(log_prec_q, log_prec_p)
    weight_q = torch.exp(log_prec_q - log_prec)
    weight_p = torch.exp(log_prec_p - log_prec)
    mean = weight_q * q_zd.mean + weight_p * p_zd_given_s.mean
    return LatentGaussian(mean, -log_prec)


class HDUVA(nn.Module):
    """
    Encoders, conditional priors, decoder and auxiliary classifier of the
    model, with ELBO assembly.  Every network is separate unless
    `shared_trunk` is set, in which case all image encoders share one
    convolutional trunk.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        shared = ConvTrunk(config.image_shape) if config.shared_trunk else None

        def trunk():
            return shared if shared is not None else ConvTrunk(config.image_shape)

        self.encoder_zx = GaussianEncoder(trunk(), config.latent_dim_zx) if config.with_zx else None
        self.encoder_zy = GaussianEncoder(trunk(), config.latent_dim_zy)
        if config.ladder:
            self.encoder_zd = GaussianEncoder(trunk(), config.latent_dim_zd)
            self.encoder_s = TopicFromLatent(config.latent_dim_zd, config.topic_dim, config.hidden_dim)
        else:
            self.encoder_s = DirichletEncoder(trunk(), config.topic_dim)
            self.encoder_zd = GaussianEncoder(trunk(), config.latent_dim_zd,
                                              condition_dim=config.topic_dim)
        self.prior_zy_net = ConditionalGaussianPrior(config.num_classes, config.latent_dim_zy,
                                                     config.hidden_dim)
        self.prior_zd_net = ConditionalGaussianPrior(config.topic_dim, config.latent_dim_zd,
                                                     config.hidden_dim)
        self.decoder = Decoder(config.decoder_input_dim, config.image_shape)
        self.aux_classifier = nn.Sequential(nn.ReLU(),
                                            nn.Linear(config.latent_dim_zy, config.num_classes))
        alpha = config.prior_alpha or (1.0,) * config.topic_dim
        self.register_buffer('prior_alpha', torch.tensor(alpha, dtype=torch.float64))

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _check_images(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or tuple(x.shape[1:]) != tuple(self.config.image_shape):
            raise ArgumentError(
                f"Expected images of shape (B, {', '.join(map(str, self.config.image_shape))}),"
                f" got {tuple(x.shape)}")
        return x.to(self.dtype)

    def _check_labels(self, y: torch.Tensor) -> torch.Tensor:
        y = torch.as_tensor(y)
        if torch.is_floating_point(y) or y.dim() != 1:
            raise ArgumentError("Labels must be a 1-d integer tensor")
        if y.numel() and (y.min() < 0 or y.max() >= self.config.num_classes):
            raise ArgumentError(
                f"Labels must lie in [0, {self.config.num_classes}), got "
                f"[{int(y.min())}, {int(y.max())}]")
        return y

    # priors

    def prior_zy(self, y) -> LatentGaussian:
        y = self._check_labels(y)
        one_hot = F.one_hot(y, self.config.num_classes).to(self.dtype)
        return self.prior_zy_net(one_hot)

    def prior_zd(self, s: torch.Tensor, validate: bool = True) -> LatentGaussian:
        if s.shape[-1] != self.config.topic_dim:
            raise ArgumentError(
                f"Topic has {s.shape[-1]} entries, topic_dim is {self.config.topic_dim}")
        if validate:
            SimplexPoint(s.detach())
        return self.prior_zd_net(s.to(self.dtype))

    def prior_s(self) -> DirichletParams:
        return DirichletParams(self.prior_alpha)

    # inference

    def _topic_draw(self, q_s: DirichletParams, generator, aggregate: bool) -> torch.Tensor:
        if aggregate:
            batch = q_s.concentration.shape[0]
            return shared_topic_sample(aggregate_concentration(q_s), batch, generator)
        return dirichlet_sample(q_s, generator)

    def encode(self, x: torch.Tensor, generator: torch.Generator | None = None,
               aggregate: bool = False) -> EncoderOutputs:
        x = self._check_images(x)
        q_zx = self.encoder_zx(x) if self.encoder_zx is not None else None
        q_zy = self.encoder_zy(x)
        if self.config.ladder:
            q_zd = self.encoder_zd(x)
            zd = sample_gaussian(q_zd, generator)
            q_s = self.encoder_s(zd)
            s = self._topic_draw(q_s, generator, aggregate)
            return EncoderOutputs(q_zx, q_zy, q_s, q_zd, s, zd)
        q_s = self.encoder_s(x)
        s = self._topic_draw(q_s, generator, aggregate)
        q_zd = self.encoder_zd(x, s)
        return EncoderOutputs(q_zx, q_zy, q_s, q_zd, s)

    # generation

    def decode(self, s, z_d, z_x, z_y) -> torch.Tensor:
        parts = []
        if self.config.decoder_uses_s:
            if s is None:
                raise ArgumentError("decode needs s when decoder_uses_s is set")
            parts.append(s)
        parts.append(z_d)
        if self.config.with_zx:
            if z_x is None:
                raise ArgumentError("decode needs z_x when the model has a z_x latent")
            parts.append(z_x)
        parts.append(z_y)
        z = torch.cat([p.to(self.dtype) for p in parts], dim=-1)
        if z.shape[-1] != self.config.decoder_input_dim:
            raise ArgumentError(
                f"Latent code has {z.shape[-1]} entries, decoder expects "
                f"{self.config.decoder_input_dim}")
        return self.decoder(z)

    def classify_aux(self, z_y: torch.Tensor) -> torch.Tensor:
        if z_y.shape[-1] != self.config.latent_dim_zy:
            raise ArgumentError(
                f"z_y has {z_y.shape[-1]} entries, expected {self.config.latent_dim_zy}")
        return F.log_softmax(self.aux_classifier(z_y.to(self.dtype)), dim=-1)

    # objective

    def _domain_pass(self, x, q_zx_sample, zy, generator, aggregate):
        """
        One topic sample: returns (recon, zd_log_ratio, kl_s, zd) per instance,
        plus the posterior used for the topic.
        """
        if self.config.ladder:
            q_zd_up = self.encoder_zd(x)
            zd_up = sample_gaussian(q_zd_up, generator)
            q_s = self.encoder_s(zd_up)
            s = self._topic_draw(q_s, generator, aggregate)
            p_zd = self.prior_zd(s, validate=False)
            q_zd = ladder_correct(q_zd_up, p_zd)
        else:
            q_s = self.encoder_s(x)
            s = self._topic_draw(q_s, generator, aggregate)
            p_zd = self.prior_zd(s, validate=False)
            q_zd = self.encoder_zd(x, s)
        zd = sample_gaussian(q_zd, generator)
        logits = self.decode(s, zd, q_zx_sample, zy)
        recon = -F.binary_cross_entropy_with_logits(
            logits, x, reduction='none').flatten(1).sum(1).double()
        ratio = hierarchical_log_ratio(q_zd, p_zd, zd)
        q_s_kl = aggregate_concentration(q_s) if aggregate else q_s
        kl_s = kl_dirichlet(q_s_kl, self.prior_s())
        return recon, ratio, kl_s, zd

    def elbo_terms(self, x: torch.Tensor, y, betas: Betas = Betas(),
                   generator: torch.Generator | None = None,
                   aggregate: bool = False) -> ElboBreakdown:
        """
        Batch-mean estimates of every ELBO term.  z_x and z_y are drawn once;
        the topic branch (s, z_d, reconstruction) is averaged over
        `topic_samples` draws.  With `aggregate` the topic of every instance
        is one shared draw from the batch-mean concentration.
        """
        if any(b < 0 for b in betas):
            raise ArgumentError(f"betas must be >= 0, got {tuple(betas)}")
        x = self._check_images(x)
        y = self._check_labels(y)
        if y.shape[0] != x.shape[0]:
            raise ArgumentError(f"{x.shape[0]} images but {y.shape[0]} labels")

        kl_zx = None
        zx = None
        if self.encoder_zx is not None:
            q_zx = self.encoder_zx(x)
            zx = sample_gaussian(q_zx, generator)
            kl_zx = kl_diag_gaussians(q_zx, LatentGaussian.standard(q_zx.mean)).mean()
        q_zy = self.encoder_zy(x)
        zy = sample_gaussian(q_zy, generator)
        kl_zy = kl_diag_gaussians(q_zy, self.prior_zy(y)).mean()
        aux = self.classify_aux(zy).gather(1, y.unsqueeze(1)).squeeze(1).double().mean()

        passes = [self._domain_pass(x, zx, zy, generator, aggregate)
                  for _ in range(self.config.topic_samples)]
        n = float(len(passes))
        recon = sum(p[0] for p in passes).mean() / n
        ratio = sum(p[1] for p in passes).mean() / n
        kl_s = sum(p[2].mean() for p in passes) / n
        return ElboBreakdown(recon_loglik=recon, kl_zx=kl_zx, kl_zy=kl_zy,
                             zd_log_ratio=ratio, kl_s=kl_s, aux_class_loglik=aux,
                             effective_betas=Betas(*betas), zd_samples=passes[0][3])

    # inspection

    @torch.no_grad()
    def posterior_topics(self, x: torch.Tensor) -> torch.Tensor:
        """Per-instance posterior mean topics (no aggregation)."""
        x = self._check_images(x)
        if self.config.ladder:
            return self.encoder_s(self.encoder_zd(x).mean).mean()
        return self.encoder_s(x).mean()

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        """Class predicted by the auxiliary classifier at the z_y posterior mean."""
        x = self._check_images(x)
        return self.classify_aux(self.encoder_zy(x).mean).argmax(-1)

    def check_finite(self):
        for name, param in self.named_parameters():
            if not torch.isfinite(param).all():
                raise StateError(f"Model parameter {name} holds non-finite values")

    @torch.no_grad()
    def conditional_generate(self, seed_x: torch.Tensor, class_sweep,
                             generator: torch.Generator | None = None) -> torch.Tensor:
        """
        Keeps the domain representation of `seed_x` (posterior-mean s and z_d),
        sets z_x to zero and decodes one image per swept label with z_y drawn
        from p(z_y | y).  Returns sigmoid probabilities, (len(sweep), C, H, W).
        """
        self.check_finite()
        if len(class_sweep) == 0:
            raise ArgumentError("class_sweep is empty")
        was_training = self.training
        self.eval()
        try:
            x = self._check_images(seed_x.unsqueeze(0) if seed_x.dim() == 3 else seed_x)[:1]
            if self.config.ladder:
                q_zd_up = self.encoder_zd(x)
                s = self.encoder_s(q_zd_up.mean).mean()
                zd = ladder_correct(q_zd_up, self.prior_zd(s, validate=False)).mean
            else:
                s = self.encoder_s(x).mean()
                zd = self.encoder_zd(x, s).mean
            n = len(class_sweep)
            labels = torch.as_tensor(list(class_sweep), dtype=torch.long)
            zy = sample_gaussian(self.prior_zy(labels), generator)
            zx = (torch.zeros(n, self.config.latent_dim_zx, dtype=self.dtype)
                  if self.config.with_zx else None)
            logits = self.decode(s.expand(n, -1), zd.expand(n, -1), zx, zy)
            return torch.sigmoid(logits)
        finally:
            self.train(was_training)
