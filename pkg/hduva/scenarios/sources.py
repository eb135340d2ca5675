"""
Base image sources for the scenario generators: MNIST read from a local
torchvision dataset directory, and a small procedural glyph set for
desk-scale experiments and tests.
"""
import logging
import os
from abc import ABC, abstractmethod
from pathlib import Path

import torch
from torchvision.datasets import MNIST

from ..errors import ArgumentError, DataIOError

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "HDUVA_DATA_DIR"


def default_data_root() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


class ImageSource(ABC):
    """Grayscale uint8 images of shape (1, H, W) with integer class labels."""

    name: str = ''

    @property
    @abstractmethod
    def num_classes(self) -> int:
        pass

    @abstractmethod
    def __len__(self) -> int:
        pass

    @abstractmethod
    def image(self, index: int) -> torch.Tensor:
        pass

    @abstractmethod
    def labels(self) -> torch.Tensor:
        """All labels as a 1-d long tensor."""

    def label(self, index: int) -> int:
        return int(self.labels()[index])

    def sample_indices(self, count: int, generator: torch.Generator) -> list[int]:
        if count > len(self):
            raise ArgumentError(f"Cannot sample {count} images from {len(self)} in {self.name}")
        return torch.randperm(len(self), generator=generator)[:count].tolist()

    def sample_balanced(self, count: int, generator: torch.Generator) -> list[int]:
        """`count` indices with an equal number per class (count // classes each)."""
        per_class = count // self.num_classes
        labels = self.labels()
        order = torch.randperm(len(self), generator=generator)
        chosen = []
        for c in range(self.num_classes):
            members = order[labels[order] == c][:per_class]
            if members.numel() < per_class:
                raise ArgumentError(f"Class {c} of {self.name} has fewer than {per_class} images")
            chosen.extend(members.tolist())
        rank = torch.empty_like(order)
        rank[order] = torch.arange(order.numel())
        return sorted(chosen, key=lambda i: int(rank[i]))


class MnistSource(ImageSource):
    """
    MNIST from a local torchvision directory (<root>/MNIST/raw).  Nothing is
    downloaded.
    """

    name = 'mnist'

    def __init__(self, root, train: bool = True):
        self.root = Path(root)
        self.train = train
        self._dataset = None

    def _load(self):
        if self._dataset is None:
            try:
                self._dataset = MNIST(str(self.root), train=self.train, download=False)
            except RuntimeError as exc:
                raise DataIOError(
                    f"MNIST not found under {self.root / 'MNIST'}; place the raw files there "
                    f"or set {DATA_DIR_ENV}") from exc
            logger.debug("Loaded MNIST (%s) from %s", 'train' if self.train else 'test', self.root)
        return self._dataset

    @property
    def num_classes(self) -> int:
        return 10

    def __len__(self):
        return len(self._load().targets)

    def image(self, index: int) -> torch.Tensor:
        return self._load().data[index].unsqueeze(0).clone()

    def labels(self) -> torch.Tensor:
        return self._load().targets


def _glyph_templates(size: int) -> list[torch.Tensor]:
    """Ten class templates drawn on a size x size canvas."""
    lo, hi, mid = size // 4, size - size // 4, size // 2
    diagonal = torch.eye(size)
    diagonal = ((diagonal + torch.roll(diagonal, 1, dims=1)) > 0).float()
    diagonal[:lo] = 0
    diagonal[hi:] = 0
    strokes = [
        [(slice(mid - 1, mid + 1), slice(lo, hi))],                          # bar
        [(slice(lo, hi), slice(mid - 1, mid + 1))],                          # pillar
        [],                                                                   # diagonal
        [(slice(lo, hi), slice(lo, lo + 2)), (slice(lo, hi), slice(hi - 2, hi)),
         (slice(lo, lo + 2), slice(lo, hi)), (slice(hi - 2, hi), slice(lo, hi))],  # box
        [(slice(mid - 1, mid + 1), slice(lo, hi)),
         (slice(lo, hi), slice(mid - 1, mid + 1))],                          # cross
        [(slice(lo, hi), slice(lo, lo + 2)), (slice(hi - 2, hi), slice(lo, hi))],  # L
        [(slice(lo, lo + 2), slice(lo, hi)), (slice(lo, hi), slice(mid - 1, mid + 1))],  # T
        [(slice(mid - 2, mid + 2), slice(mid - 2, mid + 2))],                # dot
        [(slice(lo, hi), slice(lo, lo + 2)), (slice(lo, hi), slice(hi - 2, hi))],  # rails
        [],                                                                   # anti-diagonal
    ]
    templates = []
    for i, parts in enumerate(strokes):
        if i == 2:
            glyph = diagonal.clone()
        elif i == 9:
            glyph = torch.flip(diagonal, dims=(1,))
        else:
            glyph = torch.zeros(size, size)
            for rows, cols in parts:
                glyph[rows, cols] = 1
        templates.append(glyph)
    return templates


class SyntheticGlyphs(ImageSource):
    """
    Procedural class glyphs with a random shift of up to `jitter` pixels and
    a random stroke intensity.  Labels cycle through the classes, so every
    class has (almost) the same count.  Fully determined by `seed`.
    """

    name = 'glyphs'

    def __init__(self, num_classes: int = 3, size: int = 16, count: int = 2000,
                 seed: int = 0, jitter: int = 1):
        if not 1 <= num_classes <= 10:
            raise ArgumentError(f"SyntheticGlyphs supports 1..10 classes, got {num_classes}")
        if size < 14:
            raise ArgumentError(f"Glyph size must be >= 14, got {size}")
        self._num_classes = num_classes
        self.size = size
        self.count = count
        self._templates = _glyph_templates(size)[:num_classes]
        gen = torch.Generator().manual_seed(seed)
        self._shifts = torch.randint(-jitter, jitter + 1, (count, 2), generator=gen)
        self._intensity = 0.7 + 0.3 * torch.rand(count, generator=gen)
        self._labels = torch.arange(count) % num_classes

    @property
    def num_classes(self) -> int:
        return self._num_classes

    def __len__(self):
        return self.count

    def image(self, index: int) -> torch.Tensor:
        template = self._templates[int(self._labels[index])]
        dy, dx = self._shifts[index].tolist()
        shifted = torch.roll(template, shifts=(dy, dx), dims=(0, 1))
        return (shifted * self._intensity[index] * 255).round().to(torch.uint8).unsqueeze(0)

    def labels(self) -> torch.Tensor:
        return self._labels


def make_source(kind: str, root=None, train: bool = True, **kwargs) -> ImageSource:
    if kind == 'mnist':
        return MnistSource(root or default_data_root(), train=train)
    if kind == 'glyphs':
        return SyntheticGlyphs(**kwargs)
    raise ArgumentError(f"Unknown image source {kind!r} (mnist or glyphs)")
