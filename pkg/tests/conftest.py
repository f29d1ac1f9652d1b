import pytest
import yaml
import numpy as np

from pathlib import Path
from typing import Any, Dict

from app.config.config_models import RunConfig, SynthSettings
from app.services.events.synth import synth_generate


@pytest.fixture
def temp_config_dir(tmp_path: Path) -> Path:
    """
    Provides a temporary app/config directory for config files.
    """
    mock_app_config_dir = tmp_path / 'app' / 'config'
    mock_app_config_dir.mkdir(parents=True, exist_ok=True)
    return mock_app_config_dir


@pytest.fixture
def create_yaml_file():
    """
    A factory fixture to create YAML files in a given directory.
    """
    def _create_yaml(directory: Path, filename: str, content: Dict[str, Any]) -> Path:
        filepath = directory / filename
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, 'w') as f:
            yaml.dump(content, f)
        return filepath
    return _create_yaml


@pytest.fixture
def set_env(monkeypatch: pytest.MonkeyPatch):
    """
    A fixture to temporarily set environment variables for a test.
    """
    def _set_env_vars(env_vars: Dict[str, str]):
        for key, value in env_vars.items():
            monkeypatch.setenv(key, value)
    return _set_env_vars


@pytest.fixture(autouse=True)
def clear_config_env(monkeypatch: pytest.MonkeyPatch):
    """Keep a developer's shell from leaking config selection into tests."""
    for key in ('APP_ENV', 'MMHCO_CONFIG', 'MMHCO_DATA'):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def dummy_config_content() -> Dict[str, Any]:
    """A minimal default.yaml."""
    return {
        'app': {'name': 'mmhco-har', 'env': 'dev', 'version': '0.1.0'},
        'run': {'frames': 2, 'resolution': 16, 'channels': 8, 'embed_dim': 8, 'stage_depths': [1, 1, 1, 1]},
        'synth': {'frames': 2, 'height': 16, 'width': 16, 'samples_per_class': 10},
        'bench': {'resolutions': [8, 16, 32], 'runs': 2, 'warmup': 0},
    }


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_run() -> RunConfig:
    """Smallest trainable configuration: 1 block per stage, C1=8, 16x16, T=2, f64."""
    return RunConfig(
        frames=2,
        resolution=16,
        stage_depths=[1, 1, 1, 1],
        channels=8,
        embed_dim=8,
        epochs=2,
        batch_size=4,
        precision='f64',
        lr=0.01,
    )


@pytest.fixture
def tiny_synth() -> SynthSettings:
    return SynthSettings(frames=2, height=16, width=16, samples_per_class=10)


@pytest.fixture(scope='session')
def synth_root(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """A 4-class moving-bar dataset (T=2, 16x16, 10 samples per class) shared by the whole session."""
    root = tmp_path_factory.mktemp('synth')
    synth_generate(SynthSettings(frames=2, height=16, width=16, samples_per_class=10), root, seed=0)
    return root
