#!/usr/bin/env python3
"""
Tests de la perception d'erreur par cohérence miroir
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.error_perception.mirror_perception import (
    ErrorPerceiver,
    composite_mirror_field,
    confidence_map,
    error_map,
    perceive,
)
from src.errors import DimensionMismatchError, InvalidParameterError
from src.registration.engine import RegConfig
from src.volume_core.volumes import DisplacementField, Volume, one_hot
from src.volume_core.warping import mirror

QUICK = RegConfig(pyramid_levels=1, steps_per_level=6, window=5, seed=3)


def test_composite_of_zero_field_is_zero():
    Phi, valid = composite_mirror_field(DisplacementField.zeros((7, 5, 4)), return_valid=True)
    assert_array_equal(Phi.data, 0.0)
    assert valid.all()


def test_composite_undoes_mirror(random_field):
    """Phi(miroir(phi)) == phi là où aucun rééchantillonnage n'est borné"""
    phi = random_field(dims=(12, 9, 8), amplitude=1.2, seed=4)
    Phi, valid = composite_mirror_field(mirror(phi), return_valid=True)
    assert valid.any()
    assert_allclose(Phi.data[:, valid], phi.data[:, valid], atol=1e-9)


def test_composite_without_mask_matches(random_field):
    phi = random_field(seed=8)
    Phi = composite_mirror_field(phi)
    Phi_masked, _ = composite_mirror_field(phi, return_valid=True)
    assert_array_equal(Phi.data, Phi_masked.data)


def test_composite_of_constant_shift_is_opposite_shift():
    """phi' constant (t, 0, 0) dans l'espace miroir -> Phi = (-t, 0, 0)"""
    for t in (2.0, 1.5, -0.75):
        phi_prime = DisplacementField.zeros((10, 6, 5))
        phi_prime.data[0] = t
        Phi, valid = composite_mirror_field(phi_prime, return_valid=True)
        assert valid.sum() > 0
        assert_allclose(Phi.data[0][valid], -t, atol=1e-12)
        assert_array_equal(Phi.data[1:], 0.0)


def test_error_map_is_endpoint_distance(random_field):
    phi = random_field(seed=1)
    assert_array_equal(error_map(phi, phi).data, 0.0)
    shifted = DisplacementField(phi.data + np.array([0.0, 3.0, 4.0]).reshape(3, 1, 1, 1))
    assert_allclose(error_map(shifted, phi).data, 5.0)
    with pytest.raises(DimensionMismatchError):
        error_map(phi, DisplacementField.zeros((2, 2, 2)))


def test_confidence_map_transfer_function():
    E = Volume(np.linspace(0.0, 3.0, 24).reshape(4, 3, 2))
    C, sigma = confidence_map(E)
    assert sigma == pytest.approx(np.std(E.data))
    assert C.data[0, 0, 0] == 1.0
    flat = C.data.ravel()
    assert np.all(np.diff(flat) < 0)
    assert flat.min() > 0.0
    assert_allclose(C.data, np.exp(-E.data ** 2 / (2 * sigma ** 2)))


def test_confidence_closed_forms():
    """Moitié des voxels à 1, moitié à 3 : σ = 1 exactement"""
    data = np.ones((4, 4, 4))
    data[2:] = 3.0
    C, sigma = confidence_map(Volume(data))
    assert sigma == 1.0
    assert abs(C.data[0, 0, 0] - np.exp(-0.5)) <= 1e-9
    assert abs(C.data[3, 3, 3] - np.exp(-4.5)) <= 1e-9
    assert C.data[0, 0, 0] == pytest.approx(0.60653, abs=1e-5)
    assert C.data[3, 3, 3] == pytest.approx(0.01111, abs=1e-5)


def test_confidence_map_constant_error_and_negative():
    C, sigma = confidence_map(Volume(np.full((3, 3, 3), 2.0)))
    assert sigma == 0.0
    assert_array_equal(C.data, 1.0)
    with pytest.raises(InvalidParameterError):
        confidence_map(Volume(np.full((2, 2, 2), -1.0)))


def test_confidence_stays_positive_for_outliers():
    data = np.zeros((10, 10, 10))
    data[0, 0, 0] = 1e4
    C, _ = confidence_map(Volume(data))
    assert C.data.min() > 0.0


def test_perceive_pack_and_stats(phantom_pair):
    atlas, _, image, _, _ = phantom_pair
    perceiver = ErrorPerceiver(QUICK)
    pack = perceiver.perceive(atlas, image)

    assert pack.E.dims == atlas.dims
    assert pack.valid.shape == atlas.dims
    assert pack.E.data.min() >= 0.0
    assert 0.0 < pack.C.data.min() and pack.C.data.max() <= 1.0
    summary = pack.summary()
    assert set(summary) == {'sigma', 'mean_error', 'max_error', 'mean_confidence', 'valid_fraction'}
    assert perceiver.get_perception_stats()['perceptions'] == 1


def test_perceive_swapped_by_mirror_gives_mirrored_error(phantom_pair):
    """Perception sur les entrées miroirs : E miroir (voxels valides des deux côtés)"""
    atlas, _, image, _, _ = phantom_pair
    pack = perceive(atlas, image, QUICK)
    swapped = perceive(mirror(atlas), mirror(image), QUICK)

    # les deux recalages sont échangés, bit à bit
    assert_array_equal(swapped.phi.data, pack.phi_prime.data)
    assert_array_equal(swapped.phi_prime.data, pack.phi.data)

    valid = swapped.valid & mirror(Volume(pack.valid.astype(float))).data.astype(bool)
    assert_allclose(swapped.E.data[valid], mirror(pack.E).data[valid], atol=1e-9)


def test_perceive_threads_match_sequential(phantom_pair):
    atlas, atlas_labels, image, labels, _ = phantom_pair
    weak = (one_hot(atlas_labels), one_hot(labels))
    sequential = perceive(atlas, image, QUICK, weak=weak, threads=1)
    parallel = perceive(atlas, image, QUICK, weak=weak, threads=2)
    assert_array_equal(sequential.E.data, parallel.E.data)
    assert_array_equal(sequential.C.data, parallel.C.data)
