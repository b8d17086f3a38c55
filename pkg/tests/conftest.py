import numpy as np
import pytest

from snapseg.synth import SceneSpec, generate


def small_spec(seed=7):
    return SceneSpec(
        seed=seed, extent=30.0, terrain_density=8.0,
        building_count=2, building_min_size=6.0, building_max_size=8.0,
        building_min_height=5.0, building_max_height=7.0, building_density=8.0,
        vegetation_count=4, vegetation_density=20.0,
        wall_count=3, wall_density=12.0,
        car_count=3, car_density=16.0,
        scatter_points=400,
    )


@pytest.fixture(scope="session")
def small_scene():
    return generate(small_spec())


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
