"""
Color-MNIST scenarios: digits with both foreground and background colored by
a sub-domain's color scheme.

* hierarchical: three nominal domains of two color schemes each.
* sequential: seven schemes from a smooth palette; nominal domains take
  schemes 1-3, 3-5 and 5-7, so neighbouring domains share one scheme and the
  middle domain bridges the outer two.
"""
import logging
from functools import partial

import torch

from ..errors import ArgumentError
from .base import COMMON_SCHEMA, BaseScenario
from .manifest import GeneratedScenario, Instance, ScenarioManifest
from .palettes import PALETTES, ColorScheme, PaletteSpec, get_palette, three_domain_basic
from .sources import ImageSource

logger = logging.getLogger(__name__)

# Pixels brighter than this fraction of the image maximum are foreground.
FOREGROUND_THRESHOLD = 0.1

SEQUENTIAL_GROUPS = ((0, 1, 2), (2, 3, 4), (4, 5, 6))


def foreground_mask(gray: torch.Tensor) -> torch.Tensor:
    """Boolean (H, W) mask of a (1, H, W) grayscale image."""
    g = gray[0].to(torch.float32)
    peak = g.max()
    if peak <= 0:
        return torch.zeros_like(g, dtype=torch.bool)
    return g > FOREGROUND_THRESHOLD * peak


def colorize(gray: torch.Tensor, scheme: ColorScheme) -> torch.Tensor:
    """uint8 (3, H, W): scheme foreground on the mask, background elsewhere."""
    mask = foreground_mask(gray)
    fg = torch.tensor(scheme.foreground, dtype=torch.uint8).view(3, 1, 1)
    bg = torch.tensor(scheme.background, dtype=torch.uint8).view(3, 1, 1)
    return torch.where(mask.unsqueeze(0), fg, bg)


def _render(source: ImageSource, index: int, scheme: ColorScheme) -> torch.Tensor:
    return colorize(source.image(index), scheme)


def _colored_instances(source, indices, scheme, domain, recipes, prefix=''):
    instances = []
    for idx in indices:
        path = f"{prefix}{scheme.name}/{idx:05d}.png"
        recipes.setdefault(path, partial(_render, source, idx, scheme))
        instances.append(Instance(path, source.label(idx), domain, scheme.name,
                                  scheme.describe(), "train"))
    return instances


def gen_color_hierarchical(source: ImageSource, seed: int, per_subdomain: int = 1000,
                           semi_supervised: int = 0,
                           palette: PaletteSpec | None = None,
                           semi_supervised_domain: str = "unlabeled") -> GeneratedScenario:
    """
    Three nominal domains (d1, d2, d3), each the union of two color-scheme
    sub-domains of `per_subdomain` random base images.  With
    `semi_supervised` > 0, that many class-balanced extra images colored with
    the first scheme are added under `semi_supervised_domain`.
    """
    palette = palette or three_domain_basic()
    schemes = palette.schemes()
    if len(schemes) != 6:
        raise ArgumentError(f"The hierarchical scenario needs 6 color schemes, got {len(schemes)}")
    gen = torch.Generator().manual_seed(seed)
    recipes = {}
    instances = []
    domains = ("d1", "d2", "d3")
    for j, scheme in enumerate(schemes):
        indices = source.sample_indices(per_subdomain, gen)
        instances += _colored_instances(source, indices, scheme, domains[j // 2], recipes)
    if semi_supervised > 0:
        indices = source.sample_balanced(semi_supervised, gen)
        instances += _colored_instances(source, indices, schemes[0], semi_supervised_domain,
                                        recipes, prefix=f"{semi_supervised_domain}/")
        domains = domains + (semi_supervised_domain,)
    manifest = ScenarioManifest(
        scenario_id="color-hierarchical", seed=seed, instances=instances, domains=domains,
        metadata={'palette': palette.as_dict(), 'source': source.name,
                  'per_subdomain': per_subdomain, 'semi_supervised': semi_supervised,
                  'foreground_threshold': FOREGROUND_THRESHOLD})
    logger.info("color-hierarchical: %d instances over %s", len(instances), ", ".join(domains))
    return GeneratedScenario(manifest, recipes)


def gen_color_sequential(palette: PaletteSpec, source: ImageSource, seed: int,
                         per_subdomain: int = 1000,
                         val_fraction: float = 0.5) -> GeneratedScenario:
    """
    Seven zipped color schemes grouped into overlapping nominal domains.
    Each nominal domain draws one base subset that all its schemes share;
    a scheme shared by two domains keeps the subset of the first, so the
    overlapping images are the same files.  Half of every nominal domain is
    training data, the rest validation.  d2 is the bridge domain.
    """
    schemes = palette.schemes()
    if len(schemes) != 7:
        raise ArgumentError(f"The sequential scenario needs 7 color schemes, got {len(schemes)}")
    if not 0.0 <= val_fraction < 1.0:
        raise ArgumentError(f"val_fraction must be in [0, 1), got {val_fraction}")
    domains = tuple(f"d{l + 1}" for l in range(len(SEQUENTIAL_GROUPS)))
    generators = [torch.Generator().manual_seed(seed * 7919 + l) for l in range(len(domains))]
    subsets = [source.sample_indices(per_subdomain, g) for g in generators]
    owner = {}
    for l, group in enumerate(SEQUENTIAL_GROUPS):
        for k in group:
            owner.setdefault(k, l)

    recipes = {}
    instances = []
    for l, group in enumerate(SEQUENTIAL_GROUPS):
        members = []
        for k in group:
            members += _colored_instances(source, subsets[owner[k]], schemes[k], domains[l], recipes)
        order = torch.randperm(len(members), generator=generators[l]).tolist()
        n_train = round(len(members) * (1.0 - val_fraction))
        train = set(order[:n_train])
        instances += [inst if i in train else
                      Instance(inst.image_path, inst.class_label, inst.nominal_domain,
                               inst.sub_domain, inst.transform, "val")
                      for i, inst in enumerate(members)]
    manifest = ScenarioManifest(
        scenario_id=f"color-sequential-{palette.name}", seed=seed, instances=instances,
        domains=domains, bridge_domains=(domains[1],),
        metadata={'palette': palette.as_dict(), 'source': source.name,
                  'per_subdomain': per_subdomain, 'val_fraction': val_fraction,
                  'groups': [list(g) for g in SEQUENTIAL_GROUPS],
                  'foreground_threshold': FOREGROUND_THRESHOLD})
    logger.info("color-sequential (%s): %d instances", palette.name, len(instances))
    return GeneratedScenario(manifest, recipes)


class ColorHierarchicalScenario(BaseScenario):
    """Three nominal domains, two hidden color sub-domains each."""

    def __init__(self, config: dict | None = None):
        super().__init__("color-hierarchical",
                         "Color-MNIST with two color-scheme sub-domains per nominal domain",
                         config)

    def get_config_schema(self) -> dict:
        return {
            **COMMON_SCHEMA,
            "per_subdomain": {"dtype": int, "default": 1000,
                              "description": "Base images per color scheme"},
            "semi_supervised": {"dtype": int, "default": 0,
                                "description": "Extra instances without domain label"},
            "semi_supervised_domain": {"dtype": str, "default": "unlabeled",
                                       "description": "Domain name of the extra instances"},
        }

    def generate(self) -> GeneratedScenario:
        c = self._config
        return gen_color_hierarchical(self.make_source(), c["seed"],
                                      per_subdomain=c["per_subdomain"],
                                      semi_supervised=c["semi_supervised"],
                                      semi_supervised_domain=c["semi_supervised_domain"])


class ColorSequentialScenario(BaseScenario):
    """Seven palette schemes in three overlapping nominal domains."""

    def __init__(self, config: dict | None = None):
        super().__init__("color-sequential",
                         "Color-MNIST along a palette; the middle domain bridges the outer two",
                         config)

    def get_config_schema(self) -> dict:
        return {
            **COMMON_SCHEMA,
            "palette": {"dtype": str, "default": "vlag",
                        "opts": [name for name in PALETTES if name != "three_domain_basic"],
                        "description": "Seven-scheme palette"},
            "per_subdomain": {"dtype": int, "default": 1000,
                              "description": "Base images per nominal domain"},
            "val_fraction": {"dtype": float, "default": 0.5,
                             "description": "Share of each nominal domain held out for validation"},
        }

    def generate(self) -> GeneratedScenario:
        c = self._config
        return gen_color_sequential(get_palette(c["palette"]), self.make_source(), c["seed"],
                                    per_subdomain=c["per_subdomain"],
                                    val_fraction=c["val_fraction"])
