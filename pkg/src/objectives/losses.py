"""
Fonctions de coût différentiables du recalage et de la segmentation

- L_IC  : corrélation croisée locale normalisée (fenêtre glissante, pas de 1)
- L_Smo : régularité du champ de déplacement
- Dice souple, Dice guidé par la confiance (L_cgd), supervision faible (L_weak)
- objectifs composites du recalage et de la segmentation

Chaque perte renvoie un LossValue : valeur + gradient analytique optionnel.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import (
    DimensionMismatchError,
    InvalidParameterError,
    MissingWeakSupervisionError,
    NonFiniteLossError,
)
from ..volume_core.volumes import DisplacementField, ProbVolume, Volume, check_same_dims
from ..volume_core.warping import PROB_RENORM_EPS, warp_array

logger = logging.getLogger(__name__)

VARIANCE_EPS = 1e-5
DICE_EPS = 1e-5


@dataclass
class LossValue:
    """Valeur scalaire d'une perte, gradient et décomposition éventuels"""
    value: float
    grad: Optional[np.ndarray] = None
    components: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise NonFiniteLossError(f"valeur de perte non finie: {self.value}")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NonFiniteLossError("gradient non fini")


def pearson(x, y) -> float:
    """Coefficient de corrélation de Pearson avec garde sur la variance"""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DimensionMismatchError(f"pearson: longueurs différentes {x.size} != {y.size}")
    if x.size < 2:
        raise InvalidParameterError("pearson: au moins deux valeurs sont nécessaires")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx < VARIANCE_EPS or syy < VARIANCE_EPS:
        return 0.0
    return float(np.dot(xc, yc) / np.sqrt(sxx * syy))


# ---------------------------------------------------------------------------
# Sommes glissantes (filtre boîte) et leur adjoint
# ---------------------------------------------------------------------------

def _box_sum_axis(a: np.ndarray, axis: int, window: int) -> np.ndarray:
    r = window // 2
    moved = np.moveaxis(a, axis, 0)
    padded = np.pad(moved, [(r, r)] + [(0, 0)] * (moved.ndim - 1), mode="edge")
    cs = np.concatenate([np.zeros((1,) + moved.shape[1:]), np.cumsum(padded, axis=0)])
    out = cs[window:] - cs[:-window]
    return np.moveaxis(out, 0, axis)


def _box_adjoint_axis(g: np.ndarray, axis: int, window: int) -> np.ndarray:
    r = window // 2
    moved = np.moveaxis(g, axis, 0)
    n = moved.shape[0]
    # corrélation complète : chaque indice paddé reçoit la somme des fenêtres qui le couvrent
    full = _box_sum_axis_full(moved, window)
    out = full[r:r + n].copy()
    out[0] += full[:r].sum(axis=0)
    out[-1] += full[r + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def _box_sum_axis_full(moved: np.ndarray, window: int) -> np.ndarray:
    n = moved.shape[0]
    padded = np.pad(moved, [(window - 1, window - 1)] + [(0, 0)] * (moved.ndim - 1))
    cs = np.concatenate([np.zeros((1,) + moved.shape[1:]), np.cumsum(padded, axis=0)])
    return cs[window:window + n + window - 1] - cs[:n + window - 1]


def box_sum(a: np.ndarray, window: int) -> np.ndarray:
    """Somme sur une fenêtre cubique centrée, bords répliqués"""
    for axis in range(3):
        a = _box_sum_axis(a, axis, window)
    return a


def box_sum_adjoint(g: np.ndarray, window: int) -> np.ndarray:
    for axis in range(3):
        g = _box_adjoint_axis(g, axis, window)
    return g


# ---------------------------------------------------------------------------
# Similarité et régularité
# ---------------------------------------------------------------------------

def _check_window(window: int):
    if window < 1 or window % 2 == 0:
        raise InvalidParameterError(f"la fenêtre NLCC doit être impaire et >= 1 (reçu {window})")


def nlcc_arrays(a: np.ndarray, b: np.ndarray, window: int = 9, with_grad: bool = True):
    """
    L_IC = -(1/N) sum_i rho_i^2 sur des tableaux bruts

    Returns:
        (valeur, gradient par rapport à a ou None)
    """
    _check_window(window)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"nlcc: dimensions différentes {a.shape} != {b.shape}")
    n = float(window ** 3)
    s_a = box_sum(a, window)
    s_b = box_sum(b, window)
    s_aa = box_sum(a * a, window)
    s_bb = box_sum(b * b, window)
    s_ab = box_sum(a * b, window)

    cross = s_ab - s_a * s_b / n
    var_a = s_aa - s_a * s_a / n
    var_b = s_bb - s_b * s_b / n
    valid = (var_a >= VARIANCE_EPS) & (var_b >= VARIANCE_EPS)
    safe_a = np.where(valid, var_a, 1.0)
    safe_b = np.where(valid, var_b, 1.0)
    rho2 = np.where(valid, cross * cross / (safe_a * safe_b), 0.0)
    value = -float(rho2.mean())

    if not with_grad:
        return value, None

    coef_a = np.where(valid, 2.0 * cross / (safe_a * safe_b), 0.0)
    coef_b = np.where(valid, 2.0 * cross * cross / (safe_a * safe_a * safe_b), 0.0)
    mean_a = s_a / n
    mean_b = s_b / n
    grad = (
        b * box_sum_adjoint(coef_a, window)
        - box_sum_adjoint(coef_a * mean_b, window)
        - a * box_sum_adjoint(coef_b, window)
        + box_sum_adjoint(coef_b * mean_a, window)
    )
    grad *= -1.0 / a.size
    return value, grad


def nlcc_loss(a: Volume, b: Volume, window: int = 9) -> LossValue:
    """Corrélation croisée locale normalisée, gradient par rapport à a"""
    check_same_dims(a, b, what="nlcc_loss")
    value, grad = nlcc_arrays(a.data, b.data, window)
    return LossValue(value, grad)


def smoothness_arrays(phi: np.ndarray) -> Tuple[float, np.ndarray]:
    n_vox = float(np.prod(phi.shape[1:]))
    value = 0.0
    grad = np.zeros_like(phi)
    for axis in (1, 2, 3):
        diff = np.diff(phi, axis=axis)
        value += float(np.sum(diff * diff))
        lower = [slice(None)] * 4
        upper = [slice(None)] * 4
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        grad[tuple(lower)] -= 2.0 * diff
        grad[tuple(upper)] += 2.0 * diff
    return value / n_vox, grad / n_vox


def smoothness_loss(phi: DisplacementField) -> LossValue:
    """
    Somme des différences avant au carré, moyennée sur les voxels

    La différence au dernier voxel de chaque axe vaut 0.
    """
    value, grad = smoothness_arrays(phi.data)
    return LossValue(value, grad)


# ---------------------------------------------------------------------------
# Famille Dice
# ---------------------------------------------------------------------------

def _as_stack(p) -> np.ndarray:
    return p.data if isinstance(p, ProbVolume) else np.asarray(p, dtype=np.float64)


def _squared_weights(weights, shape) -> np.ndarray:
    if weights is None:
        return np.ones(shape)
    w = weights.data if isinstance(weights, Volume) else np.asarray(weights, dtype=np.float64)
    if w.shape != shape:
        raise DimensionMismatchError(f"poids de forme {w.shape}, attendu {shape}")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise InvalidParameterError("les poids doivent être dans [0, 1]")
    return w * w


def soft_dice_terms(p, q, weights=None, with_grad: bool = False):
    """
    Dice souple moyenné sur les classes k >= 1

    p et q : ProbVolume ou tableaux (K, ...) ; weights : Volume ou tableau (...)

    Returns:
        (dice, grad_p, grad_q) ; les gradients valent None sans with_grad
    """
    p = _as_stack(p)
    q = _as_stack(q)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"soft_dice: formes différentes {p.shape} != {q.shape}")
    if p.shape[0] < 2:
        raise InvalidParameterError("soft_dice: au moins deux classes sont nécessaires")
    w2 = _squared_weights(weights, p.shape[1:])

    fg_p, fg_q = p[1:], q[1:]
    axes = tuple(range(1, p.ndim))
    inter = np.sum(w2 * (fg_p * fg_q), axis=axes)
    sum_p = np.sum(w2 * (fg_p * fg_p), axis=axes)
    sum_q = np.sum(w2 * (fg_q * fg_q), axis=axes)
    num = 2.0 * inter + DICE_EPS
    den = sum_p + sum_q + DICE_EPS
    per_class = num / den
    n_fg = p.shape[0] - 1
    dice = float(per_class.mean())

    if not with_grad:
        return dice, None, None

    shape = (n_fg,) + (1,) * (p.ndim - 1)
    num_b = num.reshape(shape)
    den_b = den.reshape(shape)
    grad_p = np.zeros_like(p)
    grad_q = np.zeros_like(q)
    grad_p[1:] = 2.0 * w2 * (fg_q * den_b - num_b * fg_p) / (den_b * den_b) / n_fg
    grad_q[1:] = 2.0 * w2 * (fg_p * den_b - num_b * fg_q) / (den_b * den_b) / n_fg
    return dice, grad_p, grad_q


def soft_dice(p, q, weights=None) -> float:
    """Dice souple (dénominateur en sommes de carrés, epsilon 1e-5)"""
    if isinstance(p, ProbVolume) and isinstance(q, ProbVolume):
        check_same_dims(p, q, what="soft_dice")
    dice, _, _ = soft_dice_terms(p, q, weights)
    return dice


def cgd_loss(confidence, s_hat_u, s_pseudo) -> LossValue:
    """L_cgd = -Dice(C·Ŝ_u, C·S_ã), gradient par rapport à s_hat_u"""
    dice, grad_p, _ = soft_dice_terms(s_hat_u, s_pseudo, confidence, with_grad=True)
    return LossValue(-dice, -grad_p)


def weak_loss(s_pseudo, s_hat_u) -> LossValue:
    """L_weak = -Dice(S_ã, Ŝ_u), gradient par rapport à s_pseudo"""
    dice, grad_p, _ = soft_dice_terms(s_pseudo, s_hat_u, with_grad=True)
    return LossValue(-dice, -grad_p)


# ---------------------------------------------------------------------------
# Objectifs composites
# ---------------------------------------------------------------------------

def reg_objective(
    iteration: int,
    phi: DisplacementField,
    moving: Volume,
    fixed: Volume,
    lambda_smo: float = 1.0,
    lambda_weak: float = 1.0,
    window: int = 9,
    weak: Optional[Tuple[ProbVolume, ProbVolume]] = None,
    similarity_mask: Optional[np.ndarray] = None,
) -> LossValue:
    """
    L_Reg = L_IC + λ_smo·L_Smo (+ λ_weak·L_weak à partir de l'itération 1)

    Args:
        iteration: indice d'itération du pipeline (0 = sans supervision faible)
        phi: champ courant (variable différentiée)
        moving, fixed: image déformée et image fixe
        weak: (étiquettes de l'image mobile, prédiction figée sur l'image fixe)
        similarity_mask: masque booléen appliqué au seul gradient de L_IC

    Returns:
        LossValue avec gradient par rapport à phi et composantes ic/smo/weak
    """
    if iteration < 0:
        raise InvalidParameterError(f"itération négative: {iteration}")
    check_same_dims(phi, moving, fixed, what="reg_objective")
    if iteration >= 1 and weak is None:
        raise MissingWeakSupervisionError(
            f"itération {iteration}: la supervision faible est obligatoire"
        )
    if iteration == 0 and weak is not None:
        logger.warning("⚠️ Itération 0 : étiquettes faibles ignorées")
        weak = None

    warped, d_warped, _ = warp_array(moving.data, phi, with_grad=True)
    ic_value, ic_grad_img = nlcc_arrays(warped, fixed.data, window)
    grad_ic = ic_grad_img[None] * d_warped
    if similarity_mask is not None:
        grad_ic = grad_ic * similarity_mask[None]

    smo_value, grad_smo = smoothness_arrays(phi.data)

    total = ic_value + lambda_smo * smo_value
    grad = grad_ic + lambda_smo * grad_smo
    components = {"ic": ic_value, "smo": smo_value, "weak": 0.0}

    if weak is not None:
        moving_labels, fixed_pred = weak
        check_same_dims(moving_labels, fixed_pred, phi, what="supervision faible")
        raw, d_raw, _ = warp_array(moving_labels.data, phi, with_grad=True)
        sums = np.maximum(raw.sum(axis=0), PROB_RENORM_EPS)
        pseudo = raw / sums
        weak_value = weak_loss(pseudo, fixed_pred)
        g = weak_value.grad
        g_raw = (g - np.sum(g * pseudo, axis=0, keepdims=True)) / sums
        grad_weak = np.sum(g_raw[None] * d_raw, axis=1)
        total += lambda_weak * weak_value.value
        grad = grad + lambda_weak * grad_weak
        components["weak"] = weak_value.value

    return LossValue(total, grad, components)


def seg_objective(l_d: LossValue, l_cgd: LossValue, lam: float = 0.5) -> LossValue:
    """L_Seg = L_d + λ·L_cgd ; le gradient somme les gradients présents"""
    grad = None
    if l_d.grad is not None:
        grad = l_d.grad
    if l_cgd.grad is not None:
        grad = lam * l_cgd.grad if grad is None else grad + lam * l_cgd.grad
    return LossValue(
        l_d.value + lam * l_cgd.value,
        grad,
        {"dice": l_d.value, "cgd": l_cgd.value},
    )
