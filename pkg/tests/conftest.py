import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from megafs.encoder import HieRFE
from megafs.synthesis import build_generator
from megafs.toy import run_toy_training, toy_encoder_config, toy_generator_config, toy_oracles

# Desk-scale model family shared by most tests.
TOY_RES = 32
TOY_DIM = 32


@pytest.fixture
def gen():
    return build_generator(toy_generator_config(), seed=0)


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return HieRFE(toy_encoder_config()).eval()


@pytest.fixture
def oracles():
    return toy_oracles()


@pytest.fixture
def faces():
    from megafs.data import synthetic_faces
    return synthetic_faces(TOY_RES, 6, seed=0)


@pytest.fixture(scope="session")
def toy_run():
    """The 500 + 500 step two-stage toy experiment, run once per session."""
    return run_toy_training()


def to_hwc(batch):
    """(N, 3, H, W) -> list of (H, W, 3) FaceImages."""
    return [im.permute(1, 2, 0).contiguous() for im in batch]


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Random toy checkpoints plus config.ini, as written by ``megafs init-toy``."""
    from megafs.cli import main

    out = tmp_path_factory.mktemp("toy")
    assert main(["init-toy", "--out", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="session")
def face_dir(tmp_path_factory):
    from megafs.data import synthetic_faces
    from megafs.imageio import save_image

    out = tmp_path_factory.mktemp("faces")
    for i, im in enumerate(to_hwc(synthetic_faces(TOY_RES, 4, seed=3))):
        save_image(im, out / f"face{i}.png")
    return out
