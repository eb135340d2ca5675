"""
Maximum mean discrepancy with a composite Gaussian kernel

    k(u, v) = sum_j exp(-a_j * ||u - v||^2)

The biased estimator is the squared RKHS distance between empirical mean
embeddings and is always >= 0; it is the one used in the training loss.  The
paired unbiased estimator drops the i == j terms and can be negative.
"""
import itertools
from dataclasses import dataclass

import torch

from .errors import ArgumentError

DEFAULT_BANDWIDTHS = (0.1, 1.0, 10.0)


@dataclass(frozen=True)
class KernelSpec:
    """
    Kernel description.  `bandwidths` are the a_j scale coefficients of the
    Gaussian superposition.  kind="linear" selects k(u, v) = u . v and ignores
    the bandwidths.
    """
    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ArgumentError(f"Unknown kernel kind: {self.kind}")
        if self.kind == "gaussian":
            if len(self.bandwidths) == 0:
                raise ArgumentError("KernelSpec needs at least one bandwidth")
            for bw in self.bandwidths:
                if not (0 < bw < float('inf')):
                    raise ArgumentError(f"Bandwidths must be positive and finite, got {bw}")

    @classmethod
    def linear(cls) -> 'KernelSpec':
        return cls(bandwidths=(), kind="linear")

    def scaled(self, factor: float) -> 'KernelSpec':
        return KernelSpec(tuple(bw * factor for bw in self.bandwidths), self.kind)


@dataclass(frozen=True)
class GramBlocks:
    Kxx: torch.Tensor
    Kyy: torch.Tensor
    Kxy: torch.Tensor


def _as_matrix(x, name: str) -> torch.Tensor:
    x = torch.as_tensor(x)
    if not torch.is_floating_point(x):
        x = x.double()
    if x.dim() == 1:
        x = x.unsqueeze(-1)
    if x.dim() != 2:
        raise ArgumentError(f"{name} must be a matrix (rows = samples)")
    if x.shape[0] < 1:
        raise ArgumentError(f"{name} is empty")
    return x.double()


def _kernel_matrix(a: torch.Tensor, b: torch.Tensor, spec: KernelSpec) -> torch.Tensor:
    if spec.kind == "linear":
        return a @ b.T
    # Exact squared distances (no |a|^2 + |b|^2 - 2ab cancellation), so the
    # diagonal of a self-Gram block is exactly J.
    sq_dist = (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(-1)
    return sum(torch.exp(-bw * sq_dist) for bw in spec.bandwidths)


def kernel_eval(u, v, spec: KernelSpec) -> float:
    """k(u, v) for two vectors of the same dimension."""
    u = torch.as_tensor(u, dtype=torch.float64).reshape(-1)
    v = torch.as_tensor(v, dtype=torch.float64).reshape(-1)
    if u.shape != v.shape:
        raise ArgumentError(f"kernel_eval: dimension mismatch ({u.numel()} vs {v.numel()})")
    return float(_kernel_matrix(u.unsqueeze(0), v.unsqueeze(0), spec)[0, 0])


def gram_blocks(X, Y, spec: KernelSpec) -> GramBlocks:
    """Kxx (M x M), Kyy (N x N) and Kxy (M x N) under `spec`."""
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ArgumentError(f"Feature dimension mismatch ({X.shape[1]} vs {Y.shape[1]})")
    return GramBlocks(_kernel_matrix(X, X, spec),
                      _kernel_matrix(Y, Y, spec),
                      _kernel_matrix(X, Y, spec))


def _ordered_mean(block: torch.Tensor) -> torch.Tensor:
    # Kyx is Kxy transposed; summing sorted entries makes the order irrelevant.
    return torch.sort(block.flatten()).values.sum() / block.numel()


def mmd2_biased(X, Y, spec: KernelSpec) -> torch.Tensor:
    """
    (1/M^2) sum Kxx + (1/N^2) sum Kyy - (2/MN) sum Kxy.  Accepts M != N.
    Returns a float64 scalar tensor (differentiable in X and Y).  The result
    is bit-identical when X and Y are swapped.
    """
    blocks = gram_blocks(X, Y, spec)
    return blocks.Kxx.mean() + blocks.Kyy.mean() - 2.0 * _ordered_mean(blocks.Kxy)


def mmd2_unbiased_paired(X, Y, spec: KernelSpec) -> torch.Tensor:
    """
    Paired estimator for z_i = (x_i, y_i):

        [sum Kxx - tr Kxx + sum Kyy - tr Kyy - 2 sum Kxy + 2 tr Kxy] / (M (M - 1))

    The 1/(M(M-1)) prefactor also multiplies the cross terms.  The value can
    be negative.
    """
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    m = X.shape[0]
    if m < 2:
        raise ArgumentError("mmd2_unbiased_paired needs at least 2 paired samples")
    if Y.shape[0] != m:
        raise ArgumentError(
            f"mmd2_unbiased_paired needs paired samples ({m} vs {Y.shape[0]} rows)")
    blocks = gram_blocks(X, Y, spec)
    total = (blocks.Kxx.sum() - blocks.Kxx.trace()
             + blocks.Kyy.sum() - blocks.Kyy.trace()
             - 2.0 * blocks.Kxy.sum() + 2.0 * blocks.Kxy.trace())
    return total / (m * (m - 1))


def standardize_jointly(batches: list[torch.Tensor]) -> list[torch.Tensor]:
    """
    Standardizes every feature with the mean and std of all batches pooled
    together, so relative offsets between batches survive.
    """
    pooled = torch.cat(batches, dim=0)
    mean = pooled.mean(0, keepdim=True)
    std = pooled.std(0, unbiased=False, keepdim=True).clamp_min(1e-6)
    return [(batch - mean) / std for batch in batches]


def pairwise_domain_mmd(embeddings_by_domain: list, spec: KernelSpec,
                        standardize: bool = False) -> torch.Tensor:
    """
    Sum of mmd2_biased over all unordered pairs of domains.  A single domain
    gives 0.
    """
    if len(embeddings_by_domain) == 0:
        raise ArgumentError("pairwise_domain_mmd needs at least one domain")
    batches = [_as_matrix(e, f"domain {i}") for i, e in enumerate(embeddings_by_domain)]
    if standardize and len(batches) > 1:
        batches = standardize_jointly(batches)
    total = torch.zeros((), dtype=torch.float64)
    for a, b in itertools.combinations(batches, 2):
        total = total + mmd2_biased(a, b, spec)
    return total


def moment_match_check(X, Y) -> torch.Tensor:
    """
    mmd2_biased under the linear kernel.  With feature map phi(x) = x this
    equals ||mean(X) - mean(Y)||^2.
    """
    return mmd2_biased(X, Y, KernelSpec.linear())
