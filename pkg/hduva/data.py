"""
In-memory datasets built from scenario manifests, and the domain-stratified
batcher the trainer consumes.
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import torch
from torchvision.io import ImageReadMode, read_image

from .errors import ArgumentError, DataIOError
from .scenarios.manifest import GeneratedScenario, Instance, ScenarioManifest, read_manifest

logger = logging.getLogger(__name__)


@dataclass
class DomainData:
    name: str
    images: torch.Tensor  # (N, C, H, W), float in [0, 1]
    labels: torch.Tensor  # (N,), long
    paths: list[str]
    sub_domains: list[str]

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class DomainBatch:
    domain: str
    x: torch.Tensor
    y: torch.Tensor


def _to_float(image: torch.Tensor) -> torch.Tensor:
    return image.to(torch.float32) / 255.0


def directory_loader(directory) -> Callable[[str], torch.Tensor]:
    """Image loader for a scenario directory written by write_scenario."""
    directory = Path(directory)

    def load(image_path: str) -> torch.Tensor:
        file = directory / image_path
        if not file.exists():
            raise DataIOError(f"Image {file} listed in the manifest is missing")
        return read_image(str(file), ImageReadMode.UNCHANGED)

    return load


class ScenarioDataset:
    """
    Images grouped by nominal domain.  Sub-domain labels are kept as
    metadata but never handed to the model.
    """

    def __init__(self, domains: list[DomainData], num_classes: int | None = None):
        domains = [d for d in domains if len(d) > 0]
        self.domains = {d.name: d for d in domains}
        shapes = {tuple(d.images.shape[1:]) for d in domains}
        if len(shapes) > 1:
            raise ArgumentError(f"Domains have differing image shapes: {sorted(shapes)}")
        self.image_shape = shapes.pop() if shapes else None
        inferred = max((int(d.labels.max()) + 1 for d in domains), default=0)
        self.num_classes = max(num_classes or 0, inferred)

    @classmethod
    def _build(cls, instances: list[Instance], load, num_classes=None) -> 'ScenarioDataset':
        grouped: dict[str, list[Instance]] = {}
        for inst in instances:
            grouped.setdefault(inst.nominal_domain, []).append(inst)
        cache: dict[str, torch.Tensor] = {}
        domains = []
        for name, members in grouped.items():
            images = []
            for inst in members:
                if inst.image_path not in cache:
                    cache[inst.image_path] = _to_float(load(inst.image_path))
                images.append(cache[inst.image_path])
            domains.append(DomainData(
                name=name,
                images=torch.stack(images),
                labels=torch.tensor([inst.class_label for inst in members], dtype=torch.long),
                paths=[inst.image_path for inst in members],
                sub_domains=[inst.sub_domain for inst in members],
            ))
        return cls(domains, num_classes)

    @classmethod
    def from_generated(cls, scenario: GeneratedScenario, domains=None, split=None,
                       num_classes=None) -> 'ScenarioDataset':
        """Renders the scenario's images in memory."""
        instances = scenario.manifest.select(domains=domains, split=split)
        return cls._build(instances, scenario.render, num_classes)

    @classmethod
    def from_directory(cls, directory, domains=None, split=None,
                       num_classes=None) -> 'ScenarioDataset':
        """Reads a scenario written by write_scenario."""
        manifest = read_manifest(directory)
        return cls._build(manifest.select(domains=domains, split=split),
                          directory_loader(directory), num_classes)

    @classmethod
    def from_manifest(cls, manifest: ScenarioManifest, load, domains=None, split=None,
                      num_classes=None) -> 'ScenarioDataset':
        return cls._build(manifest.select(domains=domains, split=split), load, num_classes)

    @property
    def domain_names(self) -> list[str]:
        return list(self.domains)

    def __len__(self):
        return sum(len(d) for d in self.domains.values())

    def subset(self, names) -> 'ScenarioDataset':
        missing = [n for n in names if n not in self.domains]
        if missing:
            raise ArgumentError(f"Unknown domains: {', '.join(missing)}")
        return ScenarioDataset([self.domains[n] for n in names], self.num_classes)

    def pooled(self) -> tuple[torch.Tensor, torch.Tensor]:
        """All domains concatenated in domain order."""
        if not self.domains:
            raise ArgumentError("Dataset is empty")
        return (torch.cat([d.images for d in self.domains.values()]),
                torch.cat([d.labels for d in self.domains.values()]))

    def split_hash(self) -> str:
        """sha256 over (domain, path, label) triples; identifies a data split."""
        digest = hashlib.sha256()
        for name in sorted(self.domains):
            d = self.domains[name]
            for path, label in zip(d.paths, d.labels.tolist()):
                digest.update(f"{name}\t{path}\t{label}\n".encode())
        return digest.hexdigest()


class DomainBatcher:
    """
    Yields one mini-batch per domain per step.  An epoch lasts as long as the
    largest domain needs; smaller domains cycle through fresh permutations.
    The order depends only on (seed, epoch).
    """

    def __init__(self, dataset: ScenarioDataset, batch_size: int, seed: int = 0):
        if len(dataset) == 0:
            raise ArgumentError("Training set is empty")
        if batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed

    def steps_per_epoch(self) -> int:
        largest = max(len(d) for d in self.dataset.domains.values())
        return math.ceil(largest / self.batch_size)

    def _order(self, n: int, epoch: int, domain_index: int, needed: int) -> torch.Tensor:
        gen = torch.Generator().manual_seed(
            (self.seed * 1_000_003 + epoch * 10_007 + domain_index) % (2 ** 63))
        chunks = []
        while sum(c.numel() for c in chunks) < needed:
            chunks.append(torch.randperm(n, generator=gen))
        return torch.cat(chunks)[:needed]

    def epoch(self, epoch: int) -> Iterator[list[DomainBatch]]:
        steps = self.steps_per_epoch()
        orders = {}
        for i, (name, d) in enumerate(self.dataset.domains.items()):
            needed = steps * self.batch_size if len(d) >= self.batch_size else steps * len(d)
            orders[name] = self._order(len(d), epoch, i, needed)
        for step in range(steps):
            batches = []
            for name, d in self.dataset.domains.items():
                size = min(self.batch_size, len(d))
                idx = orders[name][step * size:(step + 1) * size]
                batches.append(DomainBatch(name, d.images[idx], d.labels[idx]))
            yield batches
