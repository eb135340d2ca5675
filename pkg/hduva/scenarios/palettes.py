"""
Color schemes for the color-MNIST scenarios.  A scheme is a (foreground,
background) color pair; palettes zip 7 background hues with 7 foreground
hues.  HSL values are fixed here and versioned with the generator, and are
recorded in every manifest sidecar.
"""
from dataclasses import dataclass

import numpy as np
# pylint: disable=no-name-in-module
from PySide6.QtGui import QColor

from ..errors import ArgumentError
from ..name_filter import unknown_name_error

PALETTE_VERSION = "1"

BACKGROUND_SATURATION = 0.55
BACKGROUND_LIGHTNESS = 0.45
FOREGROUND_SATURATION = 0.9
FOREGROUND_LIGHTNESS = 0.75

# Hue span (degrees) of the backgrounds, walked in the listed direction.
# vlag runs from its blue end through violet to its red end.
VLAG_HUE_RANGE = (220.0, 370.0)
RED_DIVERGING_HUE_RANGE = (0.0, 350.0)


def hsl_to_rgb(hue: float, saturation: float, lightness: float) -> tuple[int, int, int]:
    """HSL (hue in degrees) to 8-bit RGB."""
    color = QColor.fromHslF((hue % 360.0) / 360.0, saturation, lightness)
    return color.red(), color.green(), color.blue()


@dataclass(frozen=True)
class ColorScheme:
    name: str
    foreground_hsl: tuple[float, float, float]
    background_hsl: tuple[float, float, float]

    @property
    def foreground(self) -> tuple[int, int, int]:
        return hsl_to_rgb(*self.foreground_hsl)

    @property
    def background(self) -> tuple[int, int, int]:
        return hsl_to_rgb(*self.background_hsl)

    def describe(self) -> str:
        fg = '#%02x%02x%02x' % self.foreground
        bg = '#%02x%02x%02x' % self.background
        return f"color:fg={fg};bg={bg}"

    def as_dict(self) -> dict:
        return {'name': self.name,
                'foreground_hsl': list(self.foreground_hsl),
                'background_hsl': list(self.background_hsl),
                'foreground_rgb': list(self.foreground),
                'background_rgb': list(self.background)}


@dataclass(frozen=True)
class PaletteSpec:
    """
    Background and foreground HSL triples zipped into schemes.  The
    sequential palettes have seven of each, with foreground hues equally
    spaced over the full hue circle.
    """
    name: str
    background: tuple[tuple[float, float, float], ...]
    foreground: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.background) != len(self.foreground):
            raise ArgumentError("Palette needs as many foreground as background colors")

    def schemes(self) -> list[ColorScheme]:
        return [ColorScheme(f"{self.name}{i}", fg, bg)
                for i, (fg, bg) in enumerate(zip(self.foreground, self.background))]

    def as_dict(self) -> dict:
        return {'name': self.name, 'version': PALETTE_VERSION,
                'schemes': [s.as_dict() for s in self.schemes()]}


def _foreground_circle(n: int = 7) -> tuple:
    return tuple((k * 360.0 / n, FOREGROUND_SATURATION, FOREGROUND_LIGHTNESS) for k in range(n))


def _background_span(hue_range: tuple[float, float], n: int = 7) -> tuple:
    hues = np.linspace(hue_range[0], hue_range[1], n)
    return tuple((float(h % 360.0), BACKGROUND_SATURATION, BACKGROUND_LIGHTNESS) for h in hues)


def vlag_palette() -> PaletteSpec:
    return PaletteSpec("vlag", _background_span(VLAG_HUE_RANGE), _foreground_circle())


def red_diverging_palette() -> PaletteSpec:
    return PaletteSpec("red_diverging", _background_span(RED_DIVERGING_HUE_RANGE),
                       _foreground_circle())


# Six (foreground, background) pairs for the hierarchical scenario: two
# sub-domains per nominal domain.
THREE_DOMAIN_BASIC = (
    ((0.0, 0.9, 0.5), (120.0, 0.6, 0.2)),     # red on dark green
    ((60.0, 0.9, 0.5), (240.0, 0.6, 0.25)),   # yellow on navy
    ((180.0, 0.9, 0.5), (0.0, 0.6, 0.25)),    # cyan on maroon
    ((300.0, 0.9, 0.6), (60.0, 0.6, 0.2)),    # magenta on olive
    ((120.0, 0.9, 0.5), (300.0, 0.6, 0.2)),   # green on purple
    ((30.0, 0.0, 0.95), (210.0, 0.6, 0.3)),   # white on steel blue
)


def three_domain_basic() -> PaletteSpec:
    return PaletteSpec("basic", tuple(bg for _, bg in THREE_DOMAIN_BASIC),
                       tuple(fg for fg, _ in THREE_DOMAIN_BASIC))


PALETTES = {
    'vlag': vlag_palette,
    'red_diverging': red_diverging_palette,
    'three_domain_basic': three_domain_basic,
}


def get_palette(name: str) -> PaletteSpec:
    if name not in PALETTES:
        raise unknown_name_error("palette", name, list(PALETTES))
    return PALETTES[name]()
