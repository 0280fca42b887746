import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from richunet.rng import SplitMix64


@pytest.fixture
def rng():
    return SplitMix64(0xA11CE)


def make_rng(seed):
    return SplitMix64(seed)
