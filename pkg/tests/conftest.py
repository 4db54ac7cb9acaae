import numpy as np
import pytest

from hourglass_pose.data import generate_fixture_scene, scan_scene


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """2 sequences x 3 frames, one sequence per split."""
    root = tmp_path_factory.mktemp("fixture")
    generate_fixture_scene(root / "toy", n_sequences=2, frames_per_seq=3, image_hw=(40, 48), seed=0)
    return root, "toy", scan_scene(root, "toy")
