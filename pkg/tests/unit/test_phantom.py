#!/usr/bin/env python3
"""
Tests du générateur de fantômes et de l'augmentation affine
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import InvalidParameterError
from src.metrics.evaluation import dice_score
from src.phantom.generator import (
    STRUCTURES,
    PhantomGenerator,
    PhantomSpec,
    anatomical_texture,
    gaussian_bump_field,
    make_phantom,
    make_suite,
    random_affine,
)
from src.pipeline.config import load_config
from src.volume_core.volumes import harden, one_hot
from src.volume_core.warping import mirror, warp_prob

DIMS = (16, 16, 16)


def test_undeformed_phantom_is_symmetric():
    image, labels, truth = make_phantom(PhantomSpec(dims=DIMS))
    assert truth is None
    assert labels.num_classes == len(STRUCTURES) + 1
    assert set(np.unique(labels.data)) == set(range(len(STRUCTURES) + 1))
    assert_array_equal(mirror(image).data, image.data)
    assert_array_equal(mirror(labels).data, labels.data)


def test_num_structures_limits_labels():
    _, labels, _ = make_phantom(PhantomSpec(dims=DIMS, num_structures=2))
    assert labels.num_classes == 3
    assert labels.data.max() == 2
    with pytest.raises(InvalidParameterError):
        PhantomSpec(num_structures=9)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        PhantomSpec(gamma=3.0)
    with pytest.raises(InvalidParameterError):
        PhantomSpec(bias_amplitude=1.0)
    with pytest.raises(InvalidParameterError):
        PhantomSpec(bump_direction=(0.0, 0.0, 0.0))
    with pytest.raises(InvalidParameterError):
        make_phantom(PhantomSpec(dims=(6, 6, 6)))


def test_same_seed_same_phantom():
    spec = PhantomSpec(dims=DIMS, deformation_amplitude=2.0, noise_sigma=0.05, bias_amplitude=0.2, seed=5)
    a = make_phantom(spec)
    b = make_phantom(spec)
    assert_array_equal(a[0].data, b[0].data)
    assert_array_equal(a[2].data, b[2].data)


def test_deformation_amplitude_and_label_consistency():
    """Les étiquettes déformées suivent la base déformée par le champ réel"""
    base_image, base_labels, _ = make_phantom(PhantomSpec(dims=DIMS))
    spec = PhantomSpec(dims=DIMS, deformation_amplitude=2.0, deformation_smoothness=4.0, seed=2)
    _, labels, truth = make_phantom(spec)
    assert truth.magnitude().max() == pytest.approx(2.0)

    propagated = harden(warp_prob(one_hot(base_labels), truth))
    assert dice_score(propagated, labels, 1) > 0.9


def test_bump_breaks_symmetry():
    spec = PhantomSpec(dims=DIMS, bump_amplitude=2.0, bump_radius=3.0)
    image, _, truth = make_phantom(spec)
    center = spec.default_bump_center()
    assert center[0] < (DIMS[0] - 1) / 2
    assert truth.magnitude()[center] == pytest.approx(2.0)
    assert not np.allclose(mirror(image).data, image.data)

    with pytest.raises(InvalidParameterError):
        make_phantom(PhantomSpec(dims=DIMS, bump_amplitude=1.0, bump_center=(20, 0, 0)))


def test_gaussian_bump_profile():
    field = gaussian_bump_field((9, 9, 9), (4, 4, 4), radius=2.0, amplitude=3.0, direction=(0, 0, 2))
    assert_allclose(field[2, 4, 4, 4], 3.0)
    assert_allclose(field[:2], 0.0)
    assert field[2, 4, 4, 6] == pytest.approx(3.0 * np.exp(-0.5))


def test_style_changes_keep_labels():
    base = make_phantom(PhantomSpec(dims=DIMS))
    styled = make_phantom(PhantomSpec(dims=DIMS, gamma=1.5, bias_amplitude=0.3, noise_sigma=0.02, seed=1))
    assert_array_equal(base[1].data, styled[1].data)
    assert not np.allclose(base[0].data, styled[0].data)


def test_random_affine_identity_and_determinism():
    image, labels, _ = make_phantom(PhantomSpec(dims=DIMS))
    same_image, same_labels = random_affine(image, labels, max_rot_deg=0.0, max_scale=0.0, max_shift=0.0)
    assert_allclose(same_image.data, image.data, atol=1e-12)
    assert_array_equal(same_labels.data, labels.data)

    a = random_affine(image, labels, seed=4)
    b = random_affine(image, labels, seed=np.random.default_rng(4))
    assert_array_equal(a[0].data, b[0].data)
    assert a[1].num_classes == labels.num_classes


def test_make_suite_writes_loadable_config(tmp_path):
    print("📁 Génération d'une suite de fantômes")
    generator = PhantomGenerator()
    paths = generator.make_suite(PhantomSpec(dims=DIMS), n_unlabeled=2, n_test=1, out_dir=tmp_path, seed=7)

    for key in ('atlas', 'atlas_labels', 'config'):
        assert paths[key].exists()
    assert len(paths['unlabeled']) == 2 and len(paths['truth']) == 2
    assert len(paths['test']) == 1 and len(paths['test_labels']) == 1

    cfg = load_config(paths['config'])
    assert cfg.unlabeled == [str(p) for p in paths['unlabeled']]
    assert cfg.seed == 7
    assert generator.get_generation_stats()['phantoms_generated'] == 4

    # même graine maître : mêmes fichiers
    again = make_suite(PhantomSpec(dims=DIMS), 2, 1, tmp_path / "bis", seed=7)
    assert again['unlabeled'][1].read_bytes() == paths['unlabeled'][1].read_bytes()


def test_anatomical_texture_is_symmetric_and_shared():
    texture = anatomical_texture(DIMS, 0.05)
    assert_allclose(texture, texture[::-1], atol=1e-12)
    assert texture.std() == pytest.approx(0.05)
    assert_array_equal(texture, anatomical_texture(DIMS, 0.05))

    flat, _, _ = make_phantom(PhantomSpec(dims=DIMS, texture_amplitude=0.0))
    textured, _, _ = make_phantom(PhantomSpec(dims=DIMS))
    assert not np.allclose(flat.data, textured.data)
    with pytest.raises(InvalidParameterError):
        PhantomSpec(texture_amplitude=-0.1)
