# pylint: disable=missing-module-docstring

from ..name_filter import unknown_name_error
from .base import BaseScenario
from .color_mnist import ColorHierarchicalScenario, ColorSequentialScenario
from .malaria import VirtualHospitalsScenario
from .manifest import GeneratedScenario, ScenarioManifest, read_manifest, write_scenario
from .rotated_mnist import RotatedOverlapScenario, RotationShiftScenario

SCENARIOS = {
    "color-hierarchical": ColorHierarchicalScenario,
    "color-sequential": ColorSequentialScenario,
    "rotated-overlap": RotatedOverlapScenario,
    "rotation-shift": RotationShiftScenario,
    "virtual-hospitals": VirtualHospitalsScenario,
}


def get_scenario(name: str, config: dict | None = None) -> BaseScenario:
    if name not in SCENARIOS:
        raise unknown_name_error("scenario", name, list(SCENARIOS))
    return SCENARIOS[name](config)
