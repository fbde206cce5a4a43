import numpy as np
import pytest

from sinf.data import SynthConfig, synth_dataset
from sinf.model import ModelConfig

# acceptance summary lines, printed after the run
CRITERIA: list[str] = []

TINY = dict(latent_dim=8, slots=8, plane_resolution=8, plane_channels=4, template_level=1,
            transformer_layers=1, transformer_heads=2, transformer_width=16, voxel_resolution=8)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


def tiny_config(**kw):
    return ModelConfig(**{**TINY, **kw})


@pytest.fixture(scope="session")
def small_corpus():
    return synth_dataset(SynthConfig(n_train=12, n_eval=6, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
