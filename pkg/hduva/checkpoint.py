"""
Checkpoint archive: weights plus everything needed to rebuild and audit the
model (model config, training config, seed, per-epoch history).
"""
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .errors import DataIOError, MissingArtifactError
from .model import HDUVA, ModelConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def weights_checksum(state_dict: dict) -> str:
    """sha256 over parameter names, shapes, dtypes and raw bytes, in key order."""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    variant: str
    model_config: ModelConfig
    state_dict: dict
    train_config: dict = field(default_factory=dict)
    seed: int = 0
    history: list = field(default_factory=list)
    selected_epoch: int = -1
    selected_score: float = float('nan')
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: HDUVA, variant: str | None = None, **kwargs) -> 'Checkpoint':
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(variant=variant or model.config.variant, model_config=model.config,
                   state_dict=state, **kwargs)

    @property
    def checksum(self) -> str:
        return weights_checksum(self.state_dict)

    def build_model(self) -> HDUVA:
        model = HDUVA(self.model_config)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            'format_version': self.format_version,
            'variant': self.variant,
            'model_config': asdict(self.model_config),
            'train_config': self.train_config,
            'seed': self.seed,
            'history': self.history,
            'selected_epoch': self.selected_epoch,
            'selected_score': self.selected_score,
            'state_dict': self.state_dict,
        }
        torch.save(payload, path)
        logger.info("Saved %s checkpoint to %s (weights %s)", self.variant, path,
                    self.checksum[:12])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"No checkpoint at {path}")
    try:
        payload = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as exc:
        raise DataIOError(f"Could not read checkpoint {path}: {exc}") from exc
    version = payload.get('format_version')
    if version != FORMAT_VERSION:
        raise DataIOError(f"Checkpoint {path} has format version {version}, "
                          f"expected {FORMAT_VERSION}")
    cfg = dict(payload['model_config'])
    cfg['image_shape'] = tuple(cfg['image_shape'])
    if cfg.get('prior_alpha') is not None:
        cfg['prior_alpha'] = tuple(cfg['prior_alpha'])
    return Checkpoint(
        variant=payload['variant'],
        model_config=ModelConfig(**cfg),
        state_dict=payload['state_dict'],
        train_config=payload.get('train_config', {}),
        seed=payload.get('seed', 0),
        history=payload.get('history', []),
        selected_epoch=payload.get('selected_epoch', -1),
        selected_score=payload.get('selected_score', float('nan')),
    )
