"""
Static figures: topic posteriors on the 2-d simplex and image grids.

Plots are drawn with pyqtgraph in an offscreen Qt application and exported
to PNG; nothing is shown on screen.
"""
import logging
import math
import os
from pathlib import Path

import numpy as np
import pyqtgraph as pg
import torch
from pyqtgraph.exporters import ImageExporter
from sklearn.metrics import silhouette_score
from torchvision.io import write_png
from torchvision.utils import make_grid

from .data import ScenarioDataset
from .errors import ArgumentError, DataIOError
from .model import HDUVA

logger = logging.getLogger(__name__)

# Corners of the reference triangle for topics (1,0,0), (0,1,0), (0,0,1).
TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


def barycentric(topics) -> np.ndarray:
    """
    (N, K) simplex points to (N, 2) plane coordinates inside TRIANGLE.  For
    K != 3 the first three coordinates are renormalized (K < 3 is padded).
    """
    points = np.asarray(topics, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ArgumentError(f"Expected a non-empty (N, K) topic matrix, got {points.shape}")
    k = points.shape[1]
    if k != 3:
        logger.warning("Topic dimension is %d; plotting the first 3 coordinates renormalized", k)
        if k < 3:
            points = np.pad(points, ((0, 0), (0, 3 - k)))
        points = points[:, :3]
        totals = points.sum(axis=1, keepdims=True)
        points = np.divide(points, totals, out=np.full_like(points, 1.0 / 3.0),
                           where=totals > 0)
    return points @ TRIANGLE


def sample_topics(model: HDUVA, dataset: ScenarioDataset, max_per_domain: int = 500,
                  seed: int = 0) -> tuple[np.ndarray, list[str]]:
    """
    Posterior mean topics of up to `max_per_domain` instances per domain,
    picked by a seeded permutation.  Returns (topics, domain label per row).
    """
    gen = torch.Generator().manual_seed(seed)
    topics, labels = [], []
    for name, domain in dataset.domains.items():
        idx = torch.randperm(len(domain), generator=gen)[:max_per_domain].sort().values
        topics.append(model.posterior_topics(domain.images[idx]).to(torch.float64).numpy())
        labels += [name] * idx.numel()
    if not topics:
        raise ArgumentError("No instances to plot")
    return np.concatenate(topics), labels


def topic_silhouette(points: np.ndarray, labels: list[str]) -> float:
    """Silhouette of the domain grouping; nan when fewer than two domains."""
    if len(set(labels)) < 2 or len(set(labels)) >= len(labels):
        return float('nan')
    return float(silhouette_score(points, labels))


def _qt_app():
    os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
    return pg.mkQApp()


def plot_topics(xy: np.ndarray, labels: list[str], path, title: str = '', size: int = 600):
    """Scatter of simplex coordinates, one color per domain, over the triangle outline."""
    _app = _qt_app()
    pg.setConfigOptions(antialias=False, background='w', foreground='k')
    plot = pg.PlotWidget(title=title)
    plot.setAspectLocked(True)
    plot.hideAxis('left')
    plot.hideAxis('bottom')
    outline = np.vstack([TRIANGLE, TRIANGLE[:1]])
    plot.plot(outline[:, 0], outline[:, 1], pen=pg.mkPen('k', width=1))
    plot.addLegend()
    names = list(dict.fromkeys(labels))
    label_arr = np.asarray(labels)
    for i, name in enumerate(names):
        pts = xy[label_arr == name]
        color = pg.intColor(i, hues=max(len(names), 3))
        scatter = pg.ScatterPlotItem(pts[:, 0], pts[:, 1], size=5, pen=None,
                                     brush=pg.mkBrush(color), name=name)
        plot.addItem(scatter)
    plot.setXRange(-0.05, 1.05, padding=0)
    plot.setYRange(-0.05, TRIANGLE[2, 1] + 0.05, padding=0)
    plot.resize(size, size)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    exporter = ImageExporter(plot.plotItem)
    exporter.parameters()['width'] = size
    if not exporter.export(str(path)) and not path.exists():
        raise DataIOError(f"Could not write figure {path}")
    plot.close()
    logger.info("Wrote topic plot %s (%d points)", path, len(labels))


def save_image_grid(images: torch.Tensor, path, nrow: int = 10):
    """(N, C, H, W) floats in [0, 1] to one PNG grid."""
    if images.dim() != 4 or images.shape[0] == 0:
        raise ArgumentError(f"Expected a non-empty (N, C, H, W) batch, got {tuple(images.shape)}")
    grid = make_grid(images.detach().to(torch.float32).clamp(0, 1), nrow=nrow, padding=2)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        write_png((grid * 255).round().to(torch.uint8), str(path))
    except RuntimeError as exc:
        raise DataIOError(f"Could not write {path}: {exc}") from exc
    logger.info("Wrote image grid %s (%d images)", path, images.shape[0])
