import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from fanet.synth import SceneSpec, generate_split


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small shared dataset for CLI and trainer tests (12/4/4 scenes)."""
    root = tmp_path_factory.mktemp("tiny_data")
    spec = SceneSpec(seed=7, size=64)
    generate_split(spec, root, 12, 4, 4)
    return root


@pytest.fixture()
def rand64():
    return np.random.RandomState(1234)
