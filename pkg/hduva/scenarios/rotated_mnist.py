"""
Rotated-MNIST scenarios with overlapping rotation angles between nominal
domains, and rotation sequences of increasing shift.
"""
import logging
from functools import partial

import torch
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

from ..errors import ArgumentError
from .base import COMMON_SCHEMA, BaseScenario
from .manifest import GeneratedScenario, Instance, ScenarioManifest
from .sources import ImageSource

logger = logging.getLogger(__name__)

TRAIN_ANGLES = ((15, 30, 45), (30, 45, 60))
TEST_ANGLES = (0, 22, 75)
MODES = ("workshop", "erratum")


def rotate_image(gray: torch.Tensor, angle: float) -> torch.Tensor:
    """Bilinear rotation about the image center, zero padding; uint8 in and out."""
    rotated = TF.rotate(gray.to(torch.float32), float(angle),
                        interpolation=InterpolationMode.BILINEAR, fill=0.0)
    return rotated.round().clamp(0, 255).to(torch.uint8)


def _render(source: ImageSource, index: int, angle: float) -> torch.Tensor:
    return rotate_image(source.image(index), angle)


def _rotated_instances(source, indices, angle, domain, split, recipes, prefix=''):
    instances = []
    sub_domain = f"rot{angle:02d}"
    for idx in indices:
        path = f"{prefix}{sub_domain}/{idx:05d}.png"
        recipes.setdefault(path, partial(_render, source, idx, angle))
        instances.append(Instance(path, source.label(idx), domain, sub_domain,
                                  f"rotate:{angle};bilinear;fill=0", split))
    return instances


def gen_rotated_overlap(mode: str, source: ImageSource, seed: int, per_angle: int = 1000,
                        test_source: ImageSource | None = None,
                        test_size: int = 1000) -> GeneratedScenario:
    """
    Two training domains built from the same `per_angle` base images, rotated
    by 15/30/45 (d1) and 30/45/60 (d2) degrees; the 30 and 45 degree images
    are shared files.  Test-only domains rotate by 0, 22 and 75 degrees:
    `test_size` fresh images in workshop mode, every image of `test_source`
    in erratum mode.
    """
    if mode not in MODES:
        raise ArgumentError(f"Unknown rotated-overlap mode {mode!r} (workshop or erratum)")
    test_source = test_source or source
    gen = torch.Generator().manual_seed(seed)
    base = source.sample_indices(per_angle, gen)
    recipes = {}
    instances = []
    train_domains = ("d1", "d2")
    for domain, angles in zip(train_domains, TRAIN_ANGLES):
        for angle in angles:
            instances += _rotated_instances(source, base, angle, domain, "train", recipes)

    if mode == "erratum":
        test_indices = list(range(len(test_source)))
    else:
        test_indices = test_source.sample_indices(test_size, gen)
    test_domains = tuple(f"rot{a:02d}" for a in TEST_ANGLES)
    for domain, angle in zip(test_domains, TEST_ANGLES):
        instances += _rotated_instances(test_source, test_indices, angle, domain, "test",
                                        recipes, prefix="test/")
    manifest = ScenarioManifest(
        scenario_id=f"rotated-overlap-{mode}", seed=seed, instances=instances,
        domains=train_domains + test_domains, test_only_domains=test_domains,
        metadata={'mode': mode, 'source': source.name, 'test_source': test_source.name,
                  'per_angle': per_angle, 'train_angles': [list(a) for a in TRAIN_ANGLES],
                  'test_angles': list(TEST_ANGLES), 'interpolation': 'bilinear'})
    logger.info("rotated-overlap (%s): %d training, %d test instances", mode,
                len(manifest.select(split="train")), len(manifest.select(split="test")))
    return GeneratedScenario(manifest, recipes)


def gen_rotation_shift(source: ImageSource, seed: int,
                       angles=(0, 15, 30, 45, 60, 75, 90),
                       count: int = 1000) -> GeneratedScenario:
    """
    One test-only domain per angle, all rotating the same `count` base
    images.  Domains are listed in order of increasing shift.
    """
    if len(angles) < 2:
        raise ArgumentError("A shift sequence needs at least two angles")
    if len(set(angles)) != len(angles):
        raise ArgumentError(f"Shift angles must be distinct, got {list(angles)}")
    gen = torch.Generator().manual_seed(seed)
    base = source.sample_indices(count, gen)
    recipes = {}
    instances = []
    domains = tuple(f"rot{a:02d}" for a in angles)
    for domain, angle in zip(domains, angles):
        instances += _rotated_instances(source, base, angle, domain, "test", recipes)
    manifest = ScenarioManifest(
        scenario_id="rotation-shift", seed=seed, instances=instances,
        domains=domains, test_only_domains=domains,
        metadata={'angles': list(angles), 'source': source.name, 'count': count,
                  'interpolation': 'bilinear'})
    return GeneratedScenario(manifest, recipes)


def gen_rotation_shift_sequence(source: ImageSource, seed: int,
                                angles=(0, 15, 30, 45, 60, 75, 90),
                                count: int = 1000) -> list[GeneratedScenario]:
    """gen_rotation_shift split into one single-domain scenario per angle."""
    combined = gen_rotation_shift(source, seed, angles, count)
    sequence = []
    for domain, angle in zip(combined.manifest.domains, angles):
        instances = combined.manifest.select(domains=[domain])
        manifest = ScenarioManifest(
            scenario_id=f"rotation-shift-{angle:02d}", seed=seed, instances=instances,
            domains=(domain,), test_only_domains=(domain,),
            metadata={'angle': angle, 'source': source.name, 'count': count})
        recipes = {inst.image_path: combined.recipes[inst.image_path] for inst in instances}
        sequence.append(GeneratedScenario(manifest, recipes))
    return sequence


class RotatedOverlapScenario(BaseScenario):
    """Two rotated domains sharing the 30 and 45 degree images."""

    def __init__(self, config: dict | None = None):
        super().__init__("rotated-overlap",
                         "Rotated digits, 15/30/45 vs 30/45/60 degrees, tested at 0/22/75",
                         config)

    def get_config_schema(self) -> dict:
        return {
            **COMMON_SCHEMA,
            "mode": {"dtype": str, "default": "workshop", "opts": list(MODES),
                     "description": "workshop: sampled test sets; erratum: full test source"},
            "per_angle": {"dtype": int, "default": 1000, "description": "Base images per angle"},
            "test_size": {"dtype": int, "default": 1000,
                          "description": "Test images per angle in workshop mode"},
        }

    def generate(self) -> GeneratedScenario:
        c = self._config
        # erratum mode rotates the full training split of MNIST as its test set
        test_train_split = c["mode"] == "erratum"
        return gen_rotated_overlap(c["mode"], self.make_source(), c["seed"],
                                   per_angle=c["per_angle"],
                                   test_source=self.make_source(train=test_train_split,
                                                                seed_offset=1),
                                   test_size=c["test_size"])


class RotationShiftScenario(BaseScenario):
    """Test domains of increasing rotation for the shift AUC."""

    def __init__(self, config: dict | None = None):
        super().__init__("rotation-shift",
                         "Same digits rotated by increasing angles, one domain per angle",
                         config)

    def get_config_schema(self) -> dict:
        return {
            **COMMON_SCHEMA,
            "angles": {"dtype": tuple, "item": int, "default": (0, 15, 30, 45, 60, 75, 90),
                       "description": "Rotation angles in order of increasing shift"},
            "count": {"dtype": int, "default": 1000, "description": "Base images per angle"},
        }

    def generate(self) -> GeneratedScenario:
        c = self._config
        return gen_rotation_shift(self.make_source(train=False, seed_offset=1), c["seed"],
                                  angles=c["angles"], count=c["count"])
