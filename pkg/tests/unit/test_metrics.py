#!/usr/bin/env python3
"""
Tests des métriques : Dice, Hausdorff, rapports, erreur de point final, AUC
"""

import numpy as np
import pytest

from src.errors import InvalidParameterError, UndefinedMetricError
from src.metrics.evaluation import (
    METRIC_COLUMNS,
    dice_score,
    endpoint_error,
    evaluate_labels,
    hausdorff,
    reports_to_frame,
    roc_auc,
    surface_voxels,
)
from src.volume_core.volumes import DisplacementField, LabelVolume


def _cube(dims, lo, hi, label=1, num_classes=2, spacing=(1.0, 1.0, 1.0)):
    data = np.zeros(dims, dtype=np.int32)
    data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = label
    return LabelVolume(data, num_classes, spacing)


def test_dice_score_cases():
    a = _cube((8, 8, 8), (2, 2, 2), (6, 6, 6))
    b = _cube((8, 8, 8), (4, 2, 2), (8, 6, 6))
    assert dice_score(a, a, 1) == 1.0
    assert dice_score(a, b, 1) == pytest.approx(2 * 32 / (64 + 64))
    # deux ensembles vides
    assert dice_score(a, b, 3) == 1.0


def test_surface_voxels_of_full_block():
    mask = np.ones((4, 4, 4), dtype=bool)
    surface = surface_voxels(mask)
    assert surface.sum() == 64 - 8
    assert not surface[1:3, 1:3, 1:3].any()


def test_hausdorff_shifted_cubes():
    print("📏 Cubes décalés de 2 voxels selon x")
    a = _cube((10, 8, 8), (2, 2, 2), (6, 6, 6))
    b = _cube((10, 8, 8), (4, 2, 2), (8, 6, 6))
    assert hausdorff(a, b, 1) == pytest.approx(2.0)
    assert hausdorff(a, b, 1, mode="directed") == pytest.approx(2.0)


def test_hausdorff_nested_cubes_is_asymmetric():
    inner = _cube((10, 10, 10), (4, 4, 4), (6, 6, 6))
    outer = _cube((10, 10, 10), (2, 2, 2), (8, 8, 8))
    assert hausdorff(inner, outer, 1, mode="directed") == pytest.approx(2.0)
    assert hausdorff(outer, inner, 1, mode="directed") == pytest.approx(np.sqrt(12.0))
    assert hausdorff(inner, outer, 1) == pytest.approx(np.sqrt(12.0))


SIX_NEIGHBOURS = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def _brute_surface(mask, spacing):
    """Voxels du masque touchant un non-membre ou le bord, voisin par voisin"""
    nx, ny, nz = mask.shape
    points = []
    for x, y, z in np.argwhere(mask).tolist():
        for dx, dy, dz in SIX_NEIGHBOURS:
            u, v, w = x + dx, y + dy, z + dz
            inside = 0 <= u < nx and 0 <= v < ny and 0 <= w < nz
            if not inside or not mask[u, v, w]:
                points.append((x, y, z))
                break
    return np.array(points, dtype=np.float64) * np.asarray(spacing)


def _brute_directed(points_a, points_b):
    """max_a min_b par la matrice complète des distances"""
    diff = points_a[:, None, :] - points_b[None, :, :]
    return float(np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=1).max())


def test_dice_and_hausdorff_match_brute_force():
    """50 paires d'étiquettes aléatoires 12³, Dice et les deux modes de Hausdorff"""
    rng = np.random.default_rng(42)
    spacing = (1.0, 1.5, 0.8)
    for _ in range(50):
        weights = rng.dirichlet([1.0, 1.0, 1.0]) * 0.8 + 0.2 / 3.0
        a = LabelVolume(rng.choice(3, size=(12, 12, 12), p=weights), 3, spacing)
        b = LabelVolume(rng.choice(3, size=(12, 12, 12), p=weights[::-1]), 3, spacing)
        for k in (1, 2):
            set_a = set(map(tuple, np.argwhere(a.data == k)))
            set_b = set(map(tuple, np.argwhere(b.data == k)))
            expected = 2.0 * len(set_a & set_b) / (len(set_a) + len(set_b))
            assert dice_score(a, b, k) == expected

            surf_a = _brute_surface(a.data == k, spacing)
            surf_b = _brute_surface(b.data == k, spacing)
            forward = _brute_directed(surf_a, surf_b)
            backward = _brute_directed(surf_b, surf_a)
            assert hausdorff(a, b, k, mode="directed") == pytest.approx(forward, rel=1e-12)
            assert hausdorff(a, b, k) == pytest.approx(max(forward, backward), rel=1e-12)


def test_hausdorff_uses_spacing():
    a = _cube((10, 8, 8), (2, 2, 2), (6, 6, 6), spacing=(2.0, 1.0, 1.0))
    b = _cube((10, 8, 8), (4, 2, 2), (8, 6, 6), spacing=(2.0, 1.0, 1.0))
    assert hausdorff(a, b, 1) == pytest.approx(4.0)


def test_hausdorff_errors():
    a = _cube((6, 6, 6), (1, 1, 1), (3, 3, 3))
    empty = LabelVolume(np.zeros((6, 6, 6)), 2)
    with pytest.raises(UndefinedMetricError):
        hausdorff(a, empty, 1)
    with pytest.raises(InvalidParameterError):
        hausdorff(a, a, 1, mode="average")


def test_evaluate_labels_missing_classes():
    truth = np.zeros((8, 8, 8), dtype=np.int32)
    truth[1:4, 1:4, 1:4] = 1
    truth[5:7, 5:7, 5:7] = 2
    pred = np.zeros((8, 8, 8), dtype=np.int32)
    pred[1:4, 1:4, 1:4] = 1
    report = evaluate_labels(LabelVolume(pred, 4), LabelVolume(truth, 4), case="cas")

    # classe 3 absente des deux volumes : ignorée
    assert report.classes == [1, 2]
    assert report.dice == [1.0, 0.0]
    assert report.hd_sym_mm[0] == 0.0
    assert np.isnan(report.hd_sym_mm[1])
    assert report.mean_dice == pytest.approx(0.5)
    assert report.mean_hd == 0.0

    frame = reports_to_frame([report, report])
    assert list(frame.columns) == METRIC_COLUMNS
    assert len(frame) == 4


def test_reports_to_frame_empty():
    assert list(reports_to_frame([]).columns) == METRIC_COLUMNS


def test_endpoint_error():
    phi = DisplacementField.zeros((3, 3, 3))
    truth = DisplacementField.zeros((3, 3, 3))
    truth.data[0] = 3.0
    truth.data[1] = 4.0
    assert np.allclose(endpoint_error(phi, truth).data, 5.0)


def test_roc_auc():
    scores = np.array([0.1, 0.2, 0.3, 0.8, 0.9])
    assert roc_auc(scores, [0, 0, 0, 1, 1]) == 1.0
    assert roc_auc(scores, [1, 1, 0, 0, 0]) == 0.0
    assert roc_auc(np.ones(4), [0, 1, 0, 1]) == 0.5
    assert roc_auc(scores, np.zeros(5)) == 0.5
    with pytest.raises(InvalidParameterError):
        roc_auc(scores, [1, 0])
