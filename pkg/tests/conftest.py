"""Shared fixtures: the hand topology, generated weights, and a sample image."""

from __future__ import annotations

import numpy as np
import pytest

from splite.decoder import build_decoder_tables
from splite.pipeline import gen_weights, prepare_weights
from splite.topology import build_hand_topology


@pytest.fixture(scope="session")
def hand_topo():
    return build_hand_topology()


@pytest.fixture(scope="session")
def hand_tables(hand_topo):
    return build_decoder_tables(hand_topo)


@pytest.fixture(scope="session")
def raw_weights():
    return gen_weights(0)


@pytest.fixture(scope="session")
def prepared_weights(raw_weights):
    return prepare_weights(raw_weights)


def make_test_photo() -> np.ndarray:
    """A clean synthetic photo: flat background, one blob, a few bars.

    No noise, so gradient-free regions stay exactly zero and the fused
    edge input is genuinely sparse.
    """
    h = w = 160
    img = np.full((h, w, 3), 210, np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    img[((yy - 80) ** 2 / 2200.0 + (xx - 85) ** 2 / 900.0) < 1.0] = (90, 70, 60)
    for k in range(5):
        x0 = 55 + k * 14
        img[40:90, x0:x0 + 6] = (70, 55, 50)
    return img


@pytest.fixture(scope="session")
def photo_path(tmp_path_factory):
    from PIL import Image as PILImage

    path = tmp_path_factory.mktemp("images") / "hand.png"
    PILImage.fromarray(make_test_photo()).save(path)
    return path
