"""
Virtual hospitals from the Malaria cell-image corpus.

Cell image file names start with the patient ID (``C<digits>P<digits>``);
the first digit after the ``C`` names the virtual hospital.  Hospitals C6, C8
and C9 provide the training domains, C1 is the held-out test hospital.  The
corpus is not redistributed and must be unpacked locally.
"""
import logging
import os
import re
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import torch
from torchvision.io import ImageReadMode, read_image
from torchvision.transforms import functional as TF

from ..errors import ArgumentError, DataIOError
from .base import BaseScenario
from .manifest import GeneratedScenario, Instance, ScenarioManifest

logger = logging.getLogger(__name__)

CORPUS_URL = "https://data.lhncbc.nlm.nih.gov/public/Malaria/cell_images.zip"
MALARIA_DIR_ENV = "HDUVA_MALARIA_DIR"
CLASS_DIRS = {"Uninfected": 0, "Parasitized": 1}
PATIENT_RE = re.compile(r"^(C(\d)\d*P\d+)")

TRAIN_HOSPITALS = ("C6", "C8", "C9")
TEST_HOSPITAL = "C1"

# hospital: (patients, infected images, total images)
EXPECTED_COUNTS = {
    "C1": (90, 8023, 14190),
    "C6": (10, 1061, 1748),
    "C8": (10, 957, 1638),
    "C9": (10, 1284, 1964),
}


@dataclass(frozen=True)
class CellImage:
    path: str  # relative to the corpus root
    patient: str
    hospital: str
    label: int


def _default_corpus() -> str:
    return os.environ.get(MALARIA_DIR_ENV, "data/malaria")


def _corpus_dir(root) -> Path:
    root = Path(root)
    for candidate in (root, root / "cell_images", root / "cell_images" / "cell_images"):
        if all((candidate / name).is_dir() for name in CLASS_DIRS):
            return candidate
    raise DataIOError(
        f"Malaria corpus not found under {root} (expected Parasitized/ and Uninfected/ "
        f"directories); download {CORPUS_URL} and unpack it there")


def scan_corpus(root) -> tuple[Path, list[CellImage]]:
    """
    Lists every cell image with its patient and hospital, sorted by path.
    Files whose name carries no patient ID are skipped.
    """
    base = _corpus_dir(root)
    cells = []
    skipped = 0
    for class_dir, label in CLASS_DIRS.items():
        for file in sorted((base / class_dir).glob("*.png")):
            match = PATIENT_RE.match(file.name)
            if match is None:
                skipped += 1
                continue
            cells.append(CellImage(f"{class_dir}/{file.name}", match.group(1),
                                   f"C{match.group(2)}", label))
    if skipped:
        logger.debug("Skipped %d files without patient ID", skipped)
    cells.sort(key=lambda c: c.path)
    return base, cells


def hospital_summary(cells: list[CellImage]) -> dict[str, tuple[int, int, int]]:
    """hospital -> (patients, infected images, total images)"""
    patients: dict[str, set] = {}
    infected: dict[str, int] = {}
    total: dict[str, int] = {}
    for cell in cells:
        patients.setdefault(cell.hospital, set()).add(cell.patient)
        infected[cell.hospital] = infected.get(cell.hospital, 0) + cell.label
        total[cell.hospital] = total.get(cell.hospital, 0) + 1
    return {h: (len(patients[h]), infected[h], total[h]) for h in sorted(patients)}


def check_counts(summary: dict[str, tuple[int, int, int]]) -> list[str]:
    """Compares against the published corpus counts; returns the mismatches."""
    mismatches = []
    for hospital, expected in EXPECTED_COUNTS.items():
        found = summary.get(hospital, (0, 0, 0))
        if found != expected:
            msg = (f"{hospital}: found {found[0]} patients, {found[1]} infected, "
                   f"{found[2]} images; expected {expected[0]}/{expected[1]}/{expected[2]}")
            logger.warning(msg)
            mismatches.append(msg)
    return mismatches


def _load_cell(file: Path, size: int) -> torch.Tensor:
    try:
        image = read_image(str(file), ImageReadMode.RGB)
    except RuntimeError as exc:
        raise DataIOError(f"Could not read {file}: {exc}") from exc
    return TF.resize(image, [size, size], antialias=True)


def gen_virtual_hospitals(corpus_root, seed: int, train_fraction: float = 0.2,
                          image_size: int = 32) -> GeneratedScenario:
    """
    Training domains: a `train_fraction` sample of each of C6, C8 and C9.
    Test-only domain: every image of C1.  Images are resized to
    image_size x image_size RGB.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ArgumentError(f"train_fraction must be in (0, 1], got {train_fraction}")
    base, cells = scan_corpus(corpus_root)
    summary = hospital_summary(cells)
    check_counts(summary)

    gen = torch.Generator().manual_seed(seed)
    recipes = {}
    instances = []

    def add(cell: CellImage, split: str):
        recipes.setdefault(cell.path, partial(_load_cell, base / cell.path, image_size))
        instances.append(Instance(cell.path, cell.label, cell.hospital, cell.patient,
                                  f"resize:{image_size}", split))

    for hospital in TRAIN_HOSPITALS:
        members = [c for c in cells if c.hospital == hospital]
        if not members:
            raise DataIOError(f"No images of hospital {hospital} under {base}")
        keep = round(len(members) * train_fraction)
        for i in sorted(torch.randperm(len(members), generator=gen)[:keep].tolist()):
            add(members[i], "train")
    for cell in cells:
        if cell.hospital == TEST_HOSPITAL:
            add(cell, "test")

    manifest = ScenarioManifest(
        scenario_id="virtual-hospitals", seed=seed, instances=instances,
        domains=TRAIN_HOSPITALS + (TEST_HOSPITAL,), test_only_domains=(TEST_HOSPITAL,),
        metadata={'train_fraction': train_fraction, 'image_size': image_size,
                  'hospitals': {h: list(v) for h, v in summary.items()}})
    logger.info("virtual-hospitals: %d training, %d test instances",
                len(manifest.select(split="train")), len(manifest.select(split="test")))
    return GeneratedScenario(manifest, recipes)


class VirtualHospitalsScenario(BaseScenario):
    """Malaria cell images grouped into hospitals by patient ID."""

    def __init__(self, config: dict | None = None):
        super().__init__("virtual-hospitals",
                         "Malaria cells, train on hospitals C6/C8/C9, test on C1", config)

    def get_config_schema(self) -> dict:
        return {
            "seed": {"dtype": int, "default": 0, "description": "Sampling seed"},
            "corpus": {"dtype": str, "default": _default_corpus,
                       "description": f"Unpacked corpus directory (or ${MALARIA_DIR_ENV})"},
            "train_fraction": {"dtype": float, "default": 0.2,
                               "description": "Share of each training hospital kept"},
            "image_size": {"dtype": int, "default": 32, "description": "Side length after resizing"},
        }

    def generate(self) -> GeneratedScenario:
        c = self._config
        return gen_virtual_hospitals(c["corpus"], c["seed"], train_fraction=c["train_fraction"],
                                     image_size=c["image_size"])
