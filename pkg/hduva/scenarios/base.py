"""
Base class for scenario generators.
"""
from abc import ABC, abstractmethod

from ..schema import SchemaConfigurable
from .manifest import GeneratedScenario
from .sources import ImageSource, default_data_root, make_source

COMMON_SCHEMA = {
    "seed": {"dtype": int, "default": 0, "description": "Generator seed"},
    "source": {"dtype": str, "default": "mnist", "opts": ["mnist", "glyphs"],
               "description": "Base images: local MNIST or procedural glyphs"},
    "data_root": {"dtype": str, "default": default_data_root,
                  "description": "Dataset root for MNIST"},
    "glyph_classes": {"dtype": int, "default": 3, "description": "Classes of the glyph source"},
    "glyph_size": {"dtype": int, "default": 16, "description": "Side length of glyph images"},
    "glyph_count": {"dtype": int, "default": 2000, "description": "Images in the glyph source"},
}


class BaseScenario(SchemaConfigurable, ABC):
    """
    A named benchmark generator.  The configuration schema declares every
    parameter the generator takes; generate() turns the current
    configuration into a GeneratedScenario.
    """

    def __init__(self, name: str, description: str = '', config: dict | None = None):
        self.name = name
        self.description = description
        self._config = self._generate_default_config()
        if config:
            self.set_config(config)

    def make_source(self, train: bool = True, seed_offset: int = 0) -> ImageSource:
        """The configured base image source (MNIST train/test split or glyphs)."""
        c = self._config
        if c["source"] == "glyphs":
            return make_source("glyphs", num_classes=c["glyph_classes"], size=c["glyph_size"],
                               count=c["glyph_count"], seed=c["seed"] + seed_offset)
        return make_source("mnist", root=c["data_root"], train=train)

    @abstractmethod
    def get_config_schema(self) -> dict:
        """
        Parameter schema, in the layout described by SchemaConfigurable.
        """

    @abstractmethod
    def generate(self) -> GeneratedScenario:
        """
        Builds the scenario.  Identical configurations give identical
        manifests and image contents.
        """
