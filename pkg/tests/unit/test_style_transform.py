#!/usr/bin/env python3
"""
Tests de la transformation de style dans le domaine de Fourier (IST / WIST)
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.error_perception.mirror_perception import ErrorPerceiver
from src.errors import InvalidParameterError, ToolkitError
from src.registration.engine import RegConfig
from src.style_transform.fourier import (
    Spectrum,
    StyleTransformer,
    confidence_bins,
    draw_betas,
    fft3,
    ifft3,
    ist,
    style_diversity,
    wist,
    wist_with_betas,
)
from src.volume_core.volumes import Volume
from src.volume_core.warping import warp


@pytest.fixture
def style_pair():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(8, 7, 6))
    other = 2.0 * np.roll(base, 2, axis=1) + rng.normal(size=(8, 7, 6))
    conf = Volume(rng.uniform(size=(8, 7, 6)))
    return Volume(base), Volume(other), conf


def test_fft_roundtrip(style_pair):
    vol, _, _ = style_pair
    assert_allclose(ifft3(fft3(vol)).data, vol.data, atol=1e-12)


def test_non_hermitian_spectrum_is_rejected():
    rng = np.random.default_rng(1)
    spec = Spectrum(np.ones((4, 4, 4)), rng.uniform(-np.pi, np.pi, size=(4, 4, 4)))
    with pytest.raises(ToolkitError):
        ifft3(spec)


def test_ist_limits(style_pair):
    warped, unlabeled, _ = style_pair
    assert_allclose(ist(warped, unlabeled, 0.0).data, warped.data, atol=1e-12)
    assert_allclose(ist(warped, warped, 0.7).data, warped.data, atol=1e-12)
    with pytest.raises(InvalidParameterError):
        ist(warped, unlabeled, 1.5)


def test_ist_mixes_amplitude_and_keeps_phase(style_pair):
    warped, unlabeled, _ = style_pair
    beta = 0.35
    styled = fft3(ist(warped, unlabeled, beta))
    source, style = fft3(warped), fft3(unlabeled)
    assert_allclose(styled.amplitude, (1 - beta) * source.amplitude + beta * style.amplitude, atol=1e-8)
    strong = source.amplitude > 1e-6
    phase_gap = np.angle(np.exp(1j * (styled.phase - source.phase)))
    assert np.abs(phase_gap[strong]).max() < 1e-6


def test_confidence_bins_partition():
    conf = Volume(np.array([0.0, 0.05, 0.1, 0.55, 0.99, 1.0, 0.3, 0.7]).reshape(2, 2, 2))
    bins = confidence_bins(conf, 10)
    assert bins.n_bins == 10
    assert_array_equal(bins.masks.sum(axis=0), 1)
    assert_array_equal(bins.indices.ravel(), [0, 0, 1, 5, 9, 9, 3, 7])
    with pytest.raises(InvalidParameterError):
        confidence_bins(conf, 0)
    with pytest.raises(InvalidParameterError):
        confidence_bins(Volume(np.full((2, 2, 2), 1.2)), 4)


def test_draw_betas_in_their_intervals():
    betas = draw_betas(10, 7)
    assert betas == draw_betas(10, 7)
    for n, beta in enumerate(betas):
        assert n / 10 <= beta < (n + 1) / 10


def test_wist_single_bin_equals_ist(style_pair):
    warped, unlabeled, conf = style_pair
    styled, betas = wist_with_betas(warped, unlabeled, conf, n_bins=1, rng=3)
    assert len(betas) == 1
    assert_array_equal(styled.data, ist(warped, unlabeled, betas[0]).data)


def test_wist_matches_ist_bin_by_bin(style_pair):
    print("🎨 WIST : chaque tranche de confiance reçoit son propre β")
    warped, unlabeled, conf = style_pair
    styled, betas = wist_with_betas(warped, unlabeled, conf, n_bins=5, rng=np.random.default_rng(4))
    bins = confidence_bins(conf, 5)
    for n, beta in enumerate(betas):
        mask = bins.masks[n]
        assert_array_equal(styled.data[mask], ist(warped, unlabeled, beta).data[mask])
    assert_array_equal(wist(warped, unlabeled, conf, 5, rng=np.random.default_rng(4)).data, styled.data)


def test_wist_rejects_wrong_beta_count(style_pair):
    warped, unlabeled, conf = style_pair
    with pytest.raises(InvalidParameterError):
        wist_with_betas(warped, unlabeled, conf, n_bins=3, betas=[0.1, 0.2])


def test_style_diversity_vanishes_without_style_gap(style_pair):
    warped, _, conf = style_pair
    assert_allclose(style_diversity(warped, warped, conf, 4).data, 0.0, atol=1e-12)


def test_style_transformer_modes(style_pair):
    warped, unlabeled, conf = style_pair

    styled, betas = StyleTransformer("none").stylize(warped, unlabeled, conf, rng=0)
    assert betas == []
    assert_array_equal(styled.data, warped.data)

    transformer = StyleTransformer("ist")
    styled, betas = transformer.stylize(warped, unlabeled, conf, rng=0)
    assert len(betas) == 1 and 0.0 <= betas[0] < 1.0
    assert_array_equal(styled.data, ist(warped, unlabeled, betas[0]).data)

    transformer = StyleTransformer("wist", n_bins=4)
    _, betas = transformer.stylize(warped, unlabeled, conf, rng=0)
    assert len(betas) == 4
    assert transformer.get_style_stats()['copies_generated'] == 1

    with pytest.raises(InvalidParameterError):
        StyleTransformer("cartoon")


def test_ist_full_strength_takes_style_amplitude(style_pair):
    warped, unlabeled, _ = style_pair
    styled = fft3(ist(warped, unlabeled, 1.0))
    target = fft3(unlabeled).amplitude
    gap = np.linalg.norm(styled.amplitude - target) / np.linalg.norm(target)
    assert gap <= 1e-3


def test_wist_limits_artifacts_where_confidence_is_low(phantom_pair):
    """Voxels C < 0.3 : WIST s'écarte moins de l'atlas déformé qu'un IST à β ∈ [0.9, 1)"""
    print("🎨 Borne d'artefacts WIST vs IST fort sur une paire mal recalée")
    atlas, _, image, _, _ = phantom_pair
    quick = RegConfig(pyramid_levels=1, steps_per_level=6, window=5, seed=3)
    pack = ErrorPerceiver(quick).perceive(atlas, image)
    warped = warp(atlas, pack.phi)
    low = pack.C.data < 0.3
    assert low.any()

    def rms_gap(styled):
        diff = styled.data[low] - warped.data[low]
        return float(np.sqrt(np.mean(diff * diff)))

    for seed in range(10):
        rng = np.random.default_rng(seed)
        weighted = wist(warped, image, pack.C, 10, rng=rng)
        strong = ist(warped, image, float(rng.uniform(0.9, 1.0)))
        print(f"  seed {seed}: WIST {rms_gap(weighted):.4f} <= IST {rms_gap(strong):.4f}")
        assert rms_gap(weighted) <= rms_gap(strong)
