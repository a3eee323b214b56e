import pytest

from src.utils.config import ConfigManager

TINY = {
    "encoder": {"patch": 4, "dim": 8, "depth": 1, "heads": 2, "image_size": 16, "mlp_ratio": 2},
    "lora": {"rank": 2},
    "tokenbook": {"k": 4},
    "unet": {"base_channels": 4, "depth": 2},
    "synth": {"size": 16, "n_samples": 8},
    "train": {"epochs": 1, "batch": 4, "seeds": [0], "lr_main": 1e-3},
}


def make_tiny_config(**sections) -> ConfigManager:
    data = {name: dict(values) for name, values in TINY.items()}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return ConfigManager.from_dict(data)


@pytest.fixture
def tiny_config() -> ConfigManager:
    return make_tiny_config()


@pytest.fixture
def make_config():
    return make_tiny_config
