import numpy as np
import pytest
import torch

from edgediff.schedule import DDPM_BASELINE, HybridNoiseConfig, make_beta_schedule


@pytest.fixture(scope="session")
def sched():
    return make_beta_schedule(500, 1e-4, 0.02)


@pytest.fixture(scope="session")
def hybrid():
    return HybridNoiseConfig()


@pytest.fixture(scope="session")
def isotropic():
    return DDPM_BASELINE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def step_image():
    """1x1x8x8 two-tone image with a vertical edge between columns 3 and 4."""
    x = torch.full((1, 1, 8, 8), -1.0, dtype=torch.float64)
    x[..., 4:] = 1.0
    return x


def micro_config(**blocks):
    """Toy run shrunk to 8x8 images and a few-thousand-parameter U-Net."""
    from edgediff.config import preset

    cfg = preset("toy").replace(
        model={"image_size": 8, "base_channels": 8, "channel_mult": [1, 2], "time_embed_dim": 16},
        data={"resolution": 8, "toy_n": 32},
        trainer={"batch_size": 4, "iterations": 6, "checkpoint_every": 3, "log_every": 1},
        ablate={"iterations": 2, "samples": 2},
        freq_sweep={"samples_per_point": 2},
    )
    return cfg.replace(**blocks) if blocks else cfg


@pytest.fixture
def micro():
    return micro_config()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
