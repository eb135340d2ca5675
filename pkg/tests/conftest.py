import pytest
import torch

from hduva.data import ScenarioDataset
from hduva.model import HDUVA, ModelConfig
from hduva.scenarios.color_mnist import gen_color_hierarchical
from hduva.scenarios.sources import SyntheticGlyphs
from hduva.training import TrainConfig


@pytest.fixture
def tiny_config() -> ModelConfig:
    """3-class 16x16 RGB model with very small latents."""
    return ModelConfig(num_classes=3, image_shape=(3, 16, 16), latent_dim_zx=4,
                       latent_dim_zy=4, latent_dim_zd=4, topic_dim=3, hidden_dim=8)


@pytest.fixture
def tiny_model(tiny_config) -> HDUVA:
    torch.manual_seed(0)
    return HDUVA(tiny_config)


@pytest.fixture
def glyphs() -> SyntheticGlyphs:
    return SyntheticGlyphs(num_classes=3, size=16, count=90, seed=0)


@pytest.fixture
def toy_scenario(glyphs):
    """Color hierarchical scenario over glyphs: 3 domains x 2 schemes x 20 images."""
    return gen_color_hierarchical(glyphs, seed=0, per_subdomain=20)


@pytest.fixture
def toy_dataset(toy_scenario) -> ScenarioDataset:
    return ScenarioDataset.from_generated(toy_scenario)


@pytest.fixture
def quick_train() -> TrainConfig:
    return TrainConfig(gamma_y=10.0, warmup_epochs=0, max_epochs=2, early_stop_patience=2,
                       learning_rate=1e-3, batch_size=16, seed=0)


@pytest.fixture
def image_batch() -> torch.Tensor:
    return torch.rand(5, 3, 16, 16, generator=torch.Generator().manual_seed(1))
