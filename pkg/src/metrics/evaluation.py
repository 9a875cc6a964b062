"""
Métriques d'évaluation : Dice exact, distance de Hausdorff sur surfaces,
erreur de point final des champs et aire sous la courbe ROC
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from ..errors import InvalidParameterError, UndefinedMetricError
from ..volume_core.volumes import DisplacementField, LabelVolume, Volume, check_same_dims

logger = logging.getLogger(__name__)

SIX_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
METRIC_COLUMNS = ["case", "class", "dice", "hd_sym_mm", "hd_dir_mm"]


def dice_score(a: LabelVolume, b: LabelVolume, k: int) -> float:
    """2|A∩B| / (|A|+|B|), deux ensembles vides -> 1"""
    check_same_dims(a, b, what="dice_score")
    mask_a = a.data == k
    mask_b = b.data == k
    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Voxels du masque ayant au moins un voisin (6-connexité) hors masque, bord compris"""
    eroded = ndimage.binary_erosion(mask, structure=SIX_CONNECTIVITY, border_value=0)
    return mask & ~eroded


def _surface_points(labels: LabelVolume, k: int) -> np.ndarray:
    mask = labels.data == k
    if not mask.any():
        raise UndefinedMetricError(f"classe {k} absente : distance de Hausdorff non définie")
    return np.argwhere(surface_voxels(mask)) * np.asarray(labels.spacing)


def _directed(points_a: np.ndarray, points_b: np.ndarray) -> float:
    distances, _ = cKDTree(points_b).query(points_a)
    return float(distances.max())


def hausdorff(a: LabelVolume, b: LabelVolume, k: int, mode: str = "symmetric") -> float:
    """
    Distance de Hausdorff (mm) entre les surfaces de la classe k

    Args:
        mode: "directed" (max_a min_b) ou "symmetric" (max des deux sens)
    """
    check_same_dims(a, b, what="hausdorff")
    if mode not in ("directed", "symmetric"):
        raise InvalidParameterError(f"mode de Hausdorff inconnu: {mode}")
    points_a = _surface_points(a, k)
    points_b = _surface_points(b, k)
    forward = _directed(points_a, points_b)
    if mode == "directed":
        return forward
    return max(forward, _directed(points_b, points_a))


@dataclass
class MetricReport:
    """Dice et Hausdorff par classe de premier plan pour un cas"""
    case: str
    classes: List[int] = field(default_factory=list)
    dice: List[float] = field(default_factory=list)
    hd_sym_mm: List[float] = field(default_factory=list)
    hd_dir_mm: List[float] = field(default_factory=list)

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice)) if self.dice else float("nan")

    @property
    def mean_hd(self) -> float:
        values = [v for v in self.hd_sym_mm if np.isfinite(v)]
        return float(np.mean(values)) if values else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "case": [self.case] * len(self.classes),
            "class": self.classes,
            "dice": self.dice,
            "hd_sym_mm": self.hd_sym_mm,
            "hd_dir_mm": self.hd_dir_mm,
        }, columns=METRIC_COLUMNS)


def evaluate_labels(pred: LabelVolume, truth: LabelVolume, case: str = "case") -> MetricReport:
    """
    Rapport complet prédiction vs vérité terrain

    Classes absentes des deux volumes ignorées ; absentes d'un seul : Dice 0, HD NaN.
    """
    check_same_dims(pred, truth, what="evaluate_labels")
    report = MetricReport(case=case)
    for k in range(1, max(pred.num_classes, truth.num_classes)):
        in_pred = bool((pred.data == k).any())
        in_truth = bool((truth.data == k).any())
        if not in_pred and not in_truth:
            continue
        report.classes.append(k)
        report.dice.append(dice_score(pred, truth, k))
        if in_pred and in_truth:
            report.hd_sym_mm.append(hausdorff(pred, truth, k, "symmetric"))
            report.hd_dir_mm.append(hausdorff(pred, truth, k, "directed"))
        else:
            report.hd_sym_mm.append(float("nan"))
            report.hd_dir_mm.append(float("nan"))
    return report


def reports_to_frame(reports: List[MetricReport]) -> pd.DataFrame:
    frames = [r.to_frame() for r in reports]
    if not frames:
        return pd.DataFrame(columns=METRIC_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def endpoint_error(phi: DisplacementField, phi_true: DisplacementField) -> Volume:
    """Distance euclidienne (voxels) entre champs estimé et réel"""
    check_same_dims(phi, phi_true, what="endpoint_error")
    diff = phi.data - phi_true.data
    return Volume(np.sqrt(np.sum(diff * diff, axis=0)), phi.spacing)


def roc_auc(scores, positives) -> float:
    """AUC par les rangs (ex aequo moyennés), 0.5 si une classe est vide"""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    if scores.size != positives.size:
        raise InvalidParameterError("roc_auc: scores et étiquettes de tailles différentes")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
