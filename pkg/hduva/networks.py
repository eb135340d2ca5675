"""
Neural building blocks: the small-image convolutional encoder trunk, gated
dense/convolution layers for the decoder, and heads that parameterize
Gaussian and Dirichlet distributions.
"""
import torch
from torch import nn
from torch.nn import functional as F

from .distributions import CONCENTRATION_FLOOR, DirichletParams, LatentGaussian
from .errors import ArgumentError

# Channels of the image volume produced by the decoder's dense layer.
DECODER_VOLUME_CHANNELS = 3
DECODER_CONV_CHANNELS = 64


class GatedDense(nn.Module):
    """h(x) * sigmoid(g(x))."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.h = nn.Linear(in_features, out_features)
        self.g = nn.Linear(in_features, out_features)

    def forward(self, x):
        return self.h(x) * torch.sigmoid(self.g(x))


class GatedConv2d(nn.Module):
    """Gated convolution, kernel 3, stride 1, padding 1 by default."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, dilation: int = 1):
        super().__init__()
        self.h = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding, dilation)
        self.g = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding, dilation)

    def forward(self, x):
        return self.h(x) * torch.sigmoid(self.g(x))


def trunk_output_size(height: int, width: int) -> tuple[int, int]:
    """Spatial size after two (conv5, maxpool2) stages without padding."""
    h = ((height - 4) // 2 - 4) // 2
    w = ((width - 4) // 2 - 4) // 2
    return h, w


class ConvTrunk(nn.Module):
    """
    Encoder for small images: conv(C->32, k5) + BN + ReLU + maxpool(2),
    conv(32->64, k5) + BN + ReLU + maxpool(2), flattened.
    """

    def __init__(self, image_shape: tuple[int, int, int]):
        super().__init__()
        channels, height, width = image_shape
        out_h, out_w = trunk_output_size(height, width)
        if out_h < 1 or out_w < 1:
            raise ArgumentError(
                f"Images of {height}x{width} are too small for the encoder (min 14x14)")
        self.layers = nn.Sequential(
            nn.Conv2d(channels, 32, kernel_size=5, stride=1),
            nn.BatchNorm2d(32),
            nn.ReLU(),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(32, 64, kernel_size=5, stride=1),
            nn.BatchNorm2d(64),
            nn.ReLU(),
            nn.MaxPool2d(2, 2),
        )
        self.out_features = 64 * out_h * out_w

    def forward(self, x):
        return self.layers(x).flatten(1)


class GaussianHead(nn.Module):
    """Linear maps from features to (mean, log_variance)."""

    def __init__(self, in_features: int, latent_dim: int):
        super().__init__()
        self.mean = nn.Linear(in_features, latent_dim)
        self.log_variance = nn.Linear(in_features, latent_dim)

    def forward(self, h) -> LatentGaussian:
        return LatentGaussian(self.mean(h), self.log_variance(h))


class ConcentrationHead(nn.Module):
    """Linear map followed by softplus and the concentration floor."""

    def __init__(self, in_features: int, topic_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_features, topic_dim)

    def forward(self, h) -> DirichletParams:
        return DirichletParams(F.softplus(self.linear(h)) + CONCENTRATION_FLOOR)


class GaussianEncoder(nn.Module):
    """Conv trunk (own or shared) plus a Gaussian head, optionally fed an
    extra conditioning vector concatenated to the trunk features."""

    def __init__(self, trunk: ConvTrunk, latent_dim: int, condition_dim: int = 0):
        super().__init__()
        self.trunk = trunk
        self.head = GaussianHead(trunk.out_features + condition_dim, latent_dim)

    def forward(self, x, condition=None) -> LatentGaussian:
        h = self.trunk(x)
        if condition is not None:
            h = torch.cat([h, condition.to(h.dtype)], dim=-1)
        return self.head(h)


class ConditionalGaussianPrior(nn.Module):
    """Maps a conditioning vector (one-hot label or topic) to a Gaussian."""

    def __init__(self, in_features: int, latent_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden = nn.Sequential(nn.Linear(in_features, hidden_dim), nn.ReLU())
        self.head = GaussianHead(hidden_dim, latent_dim)

    def forward(self, c) -> LatentGaussian:
        return self.head(self.hidden(c))


class Decoder(nn.Module):
    """
    Gated dense map from the concatenated latent code to a 3 x H x W volume,
    two gated convolutions (3 -> 64 -> 64) and a 1x1 projection to the image
    channels.  Returns per-pixel Bernoulli logits.
    """

    def __init__(self, latent_dim: int, image_shape: tuple[int, int, int]):
        super().__init__()
        channels, height, width = image_shape
        self.volume_shape = (DECODER_VOLUME_CHANNELS, height, width)
        self.dense = GatedDense(latent_dim, DECODER_VOLUME_CHANNELS * height * width)
        self.convs = nn.Sequential(
            GatedConv2d(DECODER_VOLUME_CHANNELS, DECODER_CONV_CHANNELS),
            GatedConv2d(DECODER_CONV_CHANNELS, DECODER_CONV_CHANNELS),
        )
        self.project = nn.Conv2d(DECODER_CONV_CHANNELS, channels, kernel_size=1)

    def forward(self, z):
        volume = self.dense(z).view(-1, *self.volume_shape)
        return self.project(self.convs(volume))


class DirichletEncoder(nn.Module):
    """Conv trunk plus a concentration head: x -> q(s | x)."""

    def __init__(self, trunk: ConvTrunk, topic_dim: int):
        super().__init__()
        self.trunk = trunk
        self.head = ConcentrationHead(trunk.out_features, topic_dim)

    def forward(self, x) -> DirichletParams:
        return self.head(self.trunk(x))


class TopicFromLatent(nn.Module):
    """Small MLP from a z_d sample to topic concentrations (ladder inference)."""

    def __init__(self, latent_dim: int, topic_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden = nn.Sequential(nn.Linear(latent_dim, hidden_dim), nn.ReLU())
        self.head = ConcentrationHead(hidden_dim, topic_dim)

    def forward(self, z) -> DirichletParams:
        return self.head(self.hidden(z))
