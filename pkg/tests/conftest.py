import pathlib

import numpy as np
import pytest

from mocapclean import synthetic
from mocapclean.bvh import parse_bvh
from mocapclean.features import ChannelLayout

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
GOLDEN = pathlib.Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def three_joint_text() -> str:
    return (FIXTURES / "three_joint.bvh").read_text()


@pytest.fixture(scope="session")
def three_joint(three_joint_text):
    return parse_bvh(three_joint_text)


@pytest.fixture(scope="session")
def desk_skeleton():
    return synthetic.desk_skeleton()


@pytest.fixture(scope="session")
def desk_layout(desk_skeleton):
    return ChannelLayout.from_skeleton(desk_skeleton)


@pytest.fixture(scope="session")
def walk_clip():
    return synthetic.make_motion("walk", seed=101, n_frames=240)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
