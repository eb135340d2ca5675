"""
Weak domain supervision: mini-batch aggregation of topic concentrations and
the pairwise-MMD term of the Lagrangian objective.

Both mechanisms assume a mini-batch holds instances of a single nominal
domain; the trainer stratifies batches accordingly.
"""
import logging
from dataclasses import dataclass, field

import torch

from .distributions import DirichletParams, dirichlet_sample
from .errors import ArgumentError
from .mmd import KernelSpec, pairwise_domain_mmd

logger = logging.getLogger(__name__)

ABLATION_CELLS = {
    (True, True): "Agg-MMD",
    (False, True): "no-Agg-MMD",
    (True, False): "Agg-no-MMD",
    (False, False): "no-Agg-no-MMD",
}


@dataclass(frozen=True)
class WeakSupConfig:
    """
    use_aggregation / use_mmd switch the two mechanisms.  gamma_d is the
    fixed Lagrange multiplier of the MMD term.  The inequality constants of
    the constrained form are never instantiated; only the Lagrangian is used.
    """
    use_aggregation: bool = False
    use_mmd: bool = False
    gamma_d: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if self.gamma_d < 0:
            raise ArgumentError(f"weak.gamma_d must be >= 0, got {self.gamma_d}")

    @property
    def cell_name(self) -> str:
        return ABLATION_CELLS[(self.use_aggregation, self.use_mmd)]


@dataclass
class WeakSupervisionStats:
    """
    Instance counters filled by the trainer.  Semi-supervised (domain
    unlabeled) instances must never be counted in the first two.
    """
    mmd_instances: int = 0
    aggregated_instances: int = 0
    semi_supervised_instances: int = 0

    def reset(self):
        self.mmd_instances = 0
        self.aggregated_instances = 0
        self.semi_supervised_instances = 0


def aggregate_concentration(batch_concentrations) -> DirichletParams:
    """
    Per-coordinate arithmetic mean of the instance concentrations of one
    mini-batch.  Accepts a list of DirichletParams (each of shape (K,)) or a
    single DirichletParams of shape (M, K).

    Values are sorted along the batch axis before summation so the result is
    bit-identical under any permutation of the batch.
    """
    if isinstance(batch_concentrations, DirichletParams):
        stacked = batch_concentrations.concentration
        if stacked.dim() == 1:
            stacked = stacked.unsqueeze(0)
    else:
        if len(batch_concentrations) == 0:
            raise ArgumentError("aggregate_concentration needs a nonempty batch")
        dims = {p.dim for p in batch_concentrations}
        if len(dims) != 1:
            raise ArgumentError(f"Concentrations have differing K: {sorted(dims)}")
        stacked = torch.stack([p.concentration for p in batch_concentrations])
    if stacked.shape[0] == 0:
        raise ArgumentError("aggregate_concentration needs a nonempty batch")
    ordered, _ = torch.sort(stacked, dim=0)
    return DirichletParams(ordered.sum(0) / stacked.shape[0])


def shared_topic_sample(aggregated: DirichletParams, batch_size: int,
                        generator: torch.Generator | None = None) -> torch.Tensor:
    """
    One Dirichlet draw from the aggregated concentration, broadcast to every
    row of the mini-batch.  Training only; evaluation uses per-instance
    posterior concentrations.
    """
    s = dirichlet_sample(aggregated, generator)
    return s.unsqueeze(0).expand(batch_size, -1)


def constrained_loss(per_domain_objectives: list, per_domain_zd_samples: list,
                     cfg: WeakSupConfig) -> torch.Tensor:
    """
    L = -sum F - gamma_d * sum_{pairs} MMD^2(z_d batches).

    The penalty enters with a negative sign, so minimizing L rewards larger
    separation between the z_d embeddings of different nominal domains.
    Without MMD (or with gamma_d == 0) the loss is exactly -sum F.
    """
    if len(per_domain_objectives) == 0:
        raise ArgumentError("constrained_loss needs at least one domain")
    loss = -sum(torch.as_tensor(f) for f in per_domain_objectives)
    if not cfg.use_mmd or cfg.gamma_d == 0:
        return loss
    if len(per_domain_zd_samples) != len(per_domain_objectives):
        raise ArgumentError(
            f"Got {len(per_domain_objectives)} objectives but "
            f"{len(per_domain_zd_samples)} z_d batches")
    for i, zd in enumerate(per_domain_zd_samples):
        if zd.dim() != 2 or zd.shape[0] == 0:
            raise ArgumentError(f"z_d batch {i} must be a nonempty matrix")
    penalty = pairwise_domain_mmd(per_domain_zd_samples, cfg.kernel, standardize=True)
    return loss - cfg.gamma_d * penalty.to(loss.dtype)
