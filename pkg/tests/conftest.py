"""
Configuration pytest pour les tests de perception d'erreur de recalage
"""

import os
import sys

import numpy as np
import pytest

# Ajouter le dossier racine au PYTHONPATH (depuis tests/ vers racine)
root_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, root_dir)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="lance aussi les tests lents (fantômes 48³, ablation)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: test lent, lancé avec --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="test lent : utiliser --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def smooth_volume():
    """Volume 12x10x8 lisse et non symétrique"""
    from src.volume_core.volumes import Volume

    x, y, z = np.meshgrid(np.arange(12), np.arange(10), np.arange(8), indexing="ij")
    data = np.sin(0.5 * x) + np.cos(0.4 * y) * np.sin(0.3 * z + 0.2) + 0.05 * x * y
    return Volume(data, (1.0, 1.2, 0.8))


@pytest.fixture(scope="session")
def phantom_pair():
    """(atlas, étiquettes atlas, image déformée, étiquettes déformées, champ réel) sur 16³"""
    from src.phantom.generator import PhantomGenerator, PhantomSpec

    generator = PhantomGenerator()
    base_spec = PhantomSpec(dims=(16, 16, 16), seed=3)
    atlas, atlas_labels, _ = generator.make_phantom(base_spec)
    target_spec = PhantomSpec(dims=(16, 16, 16), deformation_amplitude=1.5,
                              deformation_smoothness=4.0, seed=4)
    image, labels, truth = generator.make_phantom(target_spec)
    return atlas, atlas_labels, image, labels, truth


@pytest.fixture
def random_field():
    """Fabrique de champs lisses aléatoires (dims, amplitude, seed)"""
    from src.phantom.generator import smooth_random_field
    from src.volume_core.volumes import DisplacementField

    def make(dims=(10, 9, 8), amplitude=1.0, seed=0):
        rng = np.random.default_rng(seed)
        return DisplacementField(smooth_random_field(dims, amplitude, 2.0, rng))

    return make


@pytest.fixture
def central_difference():
    """Dérivée numérique d'une fonction scalaire f(array) en quelques indices"""

    def derivative(f, array, index, h=1e-5):
        plus = array.copy()
        minus = array.copy()
        plus[index] += h
        minus[index] -= h
        return (f(plus) - f(minus)) / (2.0 * h)

    return derivative
