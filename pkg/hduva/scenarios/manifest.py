"""
Scenario manifests: the list of instances of a benchmark with their class,
nominal domain, hidden sub-domain, transform and split, written as a CSV file
plus a JSON sidecar.  A GeneratedScenario pairs a manifest with the recipes
that render each image, so scenarios can be used in memory or written to
disk.
"""
import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torchvision.io import write_png

from ..errors import ArgumentError, DataIOError, MissingArtifactError

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "1"
MANIFEST_FILE = "manifest.csv"
SIDECAR_FILE = "manifest.json"
MANIFEST_HEADER = ("path", "class", "nominal_domain", "sub_domain", "transform", "split")


@dataclass(frozen=True)
class Instance:
    image_path: str
    class_label: int
    nominal_domain: str
    sub_domain: str
    transform: str
    split: str = "train"

    def row(self) -> tuple:
        return (self.image_path, self.class_label, self.nominal_domain,
                self.sub_domain, self.transform, self.split)


@dataclass
class ScenarioManifest:
    """
    `domains` lists every nominal domain in order.  Bridge domains are never
    used as LODO test domains; test-only domains are never trained on.
    """
    scenario_id: str
    seed: int
    instances: list[Instance]
    domains: tuple[str, ...]
    bridge_domains: tuple[str, ...] = ()
    test_only_domains: tuple[str, ...] = ()
    generator_version: str = GENERATOR_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.domains)
        for extra in (*self.bridge_domains, *self.test_only_domains):
            if extra not in known:
                raise ArgumentError(f"Domain {extra!r} is not declared in {self.scenario_id}")
        for inst in self.instances:
            if inst.nominal_domain not in known:
                raise ArgumentError(
                    f"Instance {inst.image_path} has undeclared domain {inst.nominal_domain!r}")

    def select(self, domains=None, split=None) -> list[Instance]:
        if domains is not None:
            unknown = [d for d in domains if d not in self.domains]
            if unknown:
                raise ArgumentError(f"Unknown domains: {', '.join(unknown)}")
            domains = set(domains)
        return [inst for inst in self.instances
                if (domains is None or inst.nominal_domain in domains)
                and (split is None or inst.split == split)]

    def domain_sizes(self, split=None) -> dict[str, int]:
        sizes = {d: 0 for d in self.domains}
        for inst in self.instances:
            if split is None or inst.split == split:
                sizes[inst.nominal_domain] += 1
        return sizes

    @property
    def training_domains(self) -> tuple[str, ...]:
        return tuple(d for d in self.domains if d not in self.test_only_domains)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        for inst in self.instances:
            writer.writerow(inst.row())
        return buf.getvalue()

    @property
    def manifest_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    def sidecar(self, content_hash: str = '') -> dict:
        return {
            'scenario_id': self.scenario_id,
            'seed': self.seed,
            'generator_version': self.generator_version,
            'domains': list(self.domains),
            'bridge_domains': list(self.bridge_domains),
            'test_only_domains': list(self.test_only_domains),
            'manifest_hash': self.manifest_hash,
            'content_hash': content_hash,
            'metadata': self.metadata,
        }


def read_manifest(directory) -> ScenarioManifest:
    directory = Path(directory)
    csv_path = directory / MANIFEST_FILE
    sidecar_path = directory / SIDECAR_FILE
    if not csv_path.exists() or not sidecar_path.exists():
        raise MissingArtifactError(f"No scenario manifest in {directory}")
    try:
        meta = json.loads(sidecar_path.read_text())
        with csv_path.open(newline='') as f:
            reader = csv.reader(f)
            header = tuple(next(reader))
            if header != MANIFEST_HEADER:
                raise DataIOError(f"{csv_path} has an unexpected header: {header}")
            instances = [Instance(path, int(label), domain, sub, transform, split)
                         for path, label, domain, sub, transform, split in reader]
    except (OSError, ValueError, StopIteration) as exc:
        if isinstance(exc, DataIOError):
            raise
        raise DataIOError(f"Could not read scenario manifest in {directory}: {exc}") from exc
    return ScenarioManifest(
        scenario_id=meta['scenario_id'],
        seed=meta['seed'],
        instances=instances,
        domains=tuple(meta['domains']),
        bridge_domains=tuple(meta.get('bridge_domains', ())),
        test_only_domains=tuple(meta.get('test_only_domains', ())),
        generator_version=meta['generator_version'],
        metadata=meta.get('metadata', {}),
    )


@dataclass
class GeneratedScenario:
    """
    A manifest plus one zero-argument recipe per distinct image path that
    returns the image as a uint8 tensor (C, H, W).  Instances sharing an
    image share its path and recipe.
    """
    manifest: ScenarioManifest
    recipes: dict[str, Callable[[], torch.Tensor]]

    def __post_init__(self):
        missing = {inst.image_path for inst in self.manifest.instances} - set(self.recipes)
        if missing:
            raise ArgumentError(f"{len(missing)} manifest paths have no recipe")

    def render(self, image_path: str) -> torch.Tensor:
        return self.recipes[image_path]()

    def unique_paths(self) -> list[str]:
        return list(dict.fromkeys(inst.image_path for inst in self.manifest.instances))

    def content_hash(self, workers: int = 1) -> str:
        digest = hashlib.sha256()
        paths = self.unique_paths()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for path, image in zip(paths, pool.map(self.render, paths)):
                _update_digest(digest, path, image)
        return digest.hexdigest()


def _update_digest(digest, path: str, image: torch.Tensor):
    digest.update(path.encode())
    digest.update(str(tuple(image.shape)).encode())
    digest.update(image.contiguous().numpy().tobytes())


def image_hash(image: torch.Tensor) -> str:
    return hashlib.sha256(image.contiguous().numpy().tobytes()).hexdigest()


def write_scenario(scenario: GeneratedScenario, out_dir, workers: int = 1,
                   progress: Callable[[int], None] | None = None) -> dict:
    """
    Renders every distinct image to a PNG under `out_dir` (in a thread pool)
    and writes the manifest and its sidecar.  The output does not depend on
    the worker count.  Returns the sidecar dictionary.
    """
    out_dir = Path(out_dir)
    paths = scenario.unique_paths()
    for directory in sorted({(out_dir / p).parent for p in paths}):
        directory.mkdir(parents=True, exist_ok=True)

    def render_and_write(path):
        image = scenario.render(path)
        write_png(image, str(out_dir / path))
        return image

    digest = hashlib.sha256()
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, (path, image) in enumerate(zip(paths, pool.map(render_and_write, paths))):
                _update_digest(digest, path, image)
                if progress is not None and (i + 1) % 500 == 0:
                    progress(int(100 * (i + 1) / len(paths)))
    except OSError as exc:
        raise DataIOError(f"Could not write scenario images to {out_dir}: {exc}") from exc

    manifest = scenario.manifest
    sidecar = manifest.sidecar(digest.hexdigest())
    (out_dir / MANIFEST_FILE).write_text(manifest.to_csv())
    (out_dir / SIDECAR_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    logger.info("Wrote %s: %d instances, %d images, manifest %s", manifest.scenario_id,
                len(manifest.instances), len(paths), manifest.manifest_hash[:12])
    return sidecar
