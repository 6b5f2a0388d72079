import numpy as np
import pytest

from graspadapt import datastore, procgen
from graspadapt.config import WorldConfig
from graspadapt.datastore import Dataset
from graspadapt.policies import ScriptedPolicy
from graspadapt.render import DomainStyle
from graspadapt.rng import derive_seed, make_rng
from graspadapt.simworld import RandomizationRegime, reset_scene, run_episode


@pytest.fixture(scope="session")
def objects():
    return procgen.sample_object_set(6, procgen.ProcGenConfig(), seed=11)


@pytest.fixture(scope="session")
def world():
    return WorldConfig()


@pytest.fixture()
def scene(objects, world):
    return reset_scene(objects[:4], world, make_rng(3))


def _collect(root, domain, n, world, objects, base):
    style = DomainStyle.for_domain(domain)
    for i in range(n):
        seed = derive_seed(7, base, i)
        ep = run_episode(objects[:4], world, ScriptedPolicy(seed, world),
                         world.episode_steps, RandomizationRegime.NONE,
                         domain, seed, style=style)
        datastore.write_episode(ep, root)
    return Dataset(root)


@pytest.fixture(scope="session")
def sim_ds(tmp_path_factory, objects, world):
    root = tmp_path_factory.mktemp("sim_ds")
    return _collect(root, "sim", 14, world, objects, base=100)


@pytest.fixture(scope="session")
def real_ds(tmp_path_factory, objects, world):
    root = tmp_path_factory.mktemp("real_ds")
    return _collect(root, "pseudoreal", 14, world, objects, base=200)


def random_simple_polygon(rng, n=8, radius=60.0):
    """Star-shaped (hence simple) polygon around the origin."""
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    radii = rng.uniform(0.3 * radius, radius, size=n)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
