import numpy as np
import pytest

from src.config.settings import Settings
from src.domain.entities.scene import CameraModel, DepthMap, ObjectInstance, OrientedBox3, Scene
from src.infrastructure.synthetic.tabletop import look_at, tabletop_scene


class FixedRng:
    """Stand-in generator that always draws the first option."""

    def integers(self, n, *args, **kwargs):
        return 0

    def random(self):
        return 0.0

    def uniform(self, low=0.0, high=1.0, size=None):
        return low


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def pinhole():
    """100x100 camera at the origin looking down +z with identity extrinsics."""
    return CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)


@pytest.fixture
def top_down():
    """Camera 1.3 m above the origin looking straight down."""
    return look_at([0.0, 1.3, 0.0], [0.0, 0.0, 0.0])


@pytest.fixture
def make_object():
    def factory(object_id, center, half, category="box", **kwargs):
        box = OrientedBox3(np.asarray(center, dtype=float), np.asarray(half, dtype=float))
        return ObjectInstance(object_id, category, box, **kwargs)
    return factory


@pytest.fixture
def flat_scene(pinhole, make_object):
    """Pinhole scene whose depth reads 10 m everywhere, with one 0.2 m cube at z = 2."""
    def factory(*objects, depth=10.0):
        objects = objects or (make_object("cube", [0.0, 0.0, 2.0], [0.1, 0.1, 0.1]),)
        return Scene(objects, pinhole, DepthMap(np.full((100, 100), depth)))
    return factory


@pytest.fixture(scope="session")
def tabletop():
    return tabletop_scene()


@pytest.fixture
def fixed_rng():
    return FixedRng()
