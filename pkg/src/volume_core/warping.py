"""
Échantillonnage trilinéaire, déformation, miroir et composition de champs

Convention "pull-back" : out(x) = in(x + phi(x)), bords répliqués (clamp-to-edge).
Aux coordonnées entières les poids d'interpolation valent exactement 0 ou 1,
ce qui rend la déformation par le champ miroir identique bit à bit au retournement.
"""

from typing import Optional, Tuple, Union

import numpy as np

from ..errors import InvalidParameterError
from .volumes import (
    DisplacementField,
    Dims,
    LabelVolume,
    ProbVolume,
    Volume,
    check_same_dims,
)

PROB_RENORM_EPS = 1e-7


def identity_grid(dims: Dims) -> np.ndarray:
    """Coordonnées voxel de la grille, forme (3, Nx, Ny, Nz)"""
    return np.indices(dims, dtype=np.float64)


def _axis_weights(coord: np.ndarray, n: int):
    clamped = (coord < 0.0) | (coord > n - 1)
    if n == 1:
        zeros = np.zeros(coord.shape, dtype=np.intp)
        return zeros, zeros, np.zeros(coord.shape), clamped, False
    c = np.clip(coord, 0.0, n - 1)
    i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
    return i0, i0 + 1, c - i0, clamped, True


def sample_array(
    data: np.ndarray,
    coords: np.ndarray,
    with_grad: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    """
    Interpolation trilinéaire d'un tableau (Nx,Ny,Nz) ou d'une pile (C,Nx,Ny,Nz)

    Args:
        data: grille(s) à échantillonner
        coords: coordonnées voxel, forme (3, ...)
        with_grad: calcule aussi la dérivée par rapport aux coordonnées

    Returns:
        (valeurs, dérivées ou None, masque des points dont une coordonnée a été bornée)
        Les dérivées ont la forme (3,) + valeurs.shape et sont nulles sur un axe borné.
    """
    stacked = data.ndim == 4
    grid = data if stacked else data[None]
    dims = grid.shape[1:]

    (x0, x1, fx, cx, vx), (y0, y1, fy, cy, vy), (z0, z1, fz, cz, vz) = (
        _axis_weights(coords[a], dims[a]) for a in range(3)
    )
    clamped = cx | cy | cz

    v000 = grid[:, x0, y0, z0]
    v100 = grid[:, x1, y0, z0]
    v010 = grid[:, x0, y1, z0]
    v110 = grid[:, x1, y1, z0]
    v001 = grid[:, x0, y0, z1]
    v101 = grid[:, x1, y0, z1]
    v011 = grid[:, x0, y1, z1]
    v111 = grid[:, x1, y1, z1]

    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c00 = v000 * gx + v100 * fx
    c10 = v010 * gx + v110 * fx
    c01 = v001 * gx + v101 * fx
    c11 = v011 * gx + v111 * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    values = c0 * gz + c1 * fz

    grads = None
    if with_grad:
        grads = np.zeros((3,) + values.shape)
        if vx:
            dx = ((v100 - v000) * gy + (v110 - v010) * fy) * gz \
                + ((v101 - v001) * gy + (v111 - v011) * fy) * fz
            grads[0] = np.where(cx, 0.0, dx)
        if vy:
            grads[1] = np.where(cy, 0.0, (c10 - c00) * gz + (c11 - c01) * fz)
        if vz:
            grads[2] = np.where(cz, 0.0, c1 - c0)
        if not stacked:
            grads = grads[:, 0]

    if not stacked:
        values = values[0]
    return values, grads, clamped


def sample_trilinear(vol: Volume, p) -> float:
    """Valeur interpolée en un point continu (coordonnées voxel)"""
    p = np.asarray(p, dtype=np.float64).reshape(3, 1)
    if not np.all(np.isfinite(p)):
        raise InvalidParameterError(f"point non fini: {p.ravel()}")
    values, _, _ = sample_array(vol.data, p)
    return float(values[0])


def warp_array(data: np.ndarray, phi: DisplacementField, with_grad: bool = False):
    """Déforme un tableau brut par phi, renvoie (valeurs, dérivées, masque borné)"""
    coords = identity_grid(phi.dims) + phi.data
    return sample_array(data, coords, with_grad=with_grad)


def warp(vol: Volume, phi: DisplacementField) -> Volume:
    """out(x) = vol(x + phi(x))"""
    check_same_dims(vol, phi, what="warp")
    values, _, _ = warp_array(vol.data, phi)
    return Volume(values, vol.spacing)


def renormalize_channels(stack: np.ndarray) -> np.ndarray:
    """Ramène la somme des canaux à 1, avec garde epsilon"""
    return stack / np.maximum(stack.sum(axis=0, keepdims=True), PROB_RENORM_EPS)


def warp_prob(probs: ProbVolume, phi: DisplacementField) -> ProbVolume:
    """Déforme chaque canal puis renormalise"""
    check_same_dims(probs, phi, what="warp_prob")
    values, _, _ = warp_array(probs.data, phi)
    return ProbVolume(renormalize_channels(values), probs.spacing)


MirrorTarget = Union[Volume, LabelVolume, ProbVolume, DisplacementField]


def mirror(obj: MirrorTarget) -> MirrorTarget:
    """
    Symétrie x -> Nx-1-x selon le premier axe

    Pour un champ de déplacement la composante dx est aussi inversée.
    """
    if isinstance(obj, Volume):
        return Volume(np.flip(obj.data, axis=0).copy(), obj.spacing)
    if isinstance(obj, LabelVolume):
        return LabelVolume(np.flip(obj.data, axis=0).copy(), obj.num_classes, obj.spacing)
    if isinstance(obj, ProbVolume):
        return ProbVolume(np.flip(obj.data, axis=1).copy(), obj.spacing)
    if isinstance(obj, DisplacementField):
        data = np.flip(obj.data, axis=1).copy()
        data[0] = -data[0]
        return DisplacementField(data, obj.spacing)
    raise InvalidParameterError(f"mirror: type non supporté {type(obj).__name__}")


def build_mirror_field(dims: Dims, spacing=(1.0, 1.0, 1.0)) -> DisplacementField:
    """Champ fixe (Nx-1-2x, 0, 0) équivalent à mirror()"""
    field = DisplacementField.zeros(dims, spacing)
    x = np.arange(dims[0], dtype=np.float64)
    field.data[0] = (dims[0] - 1 - 2.0 * x)[:, None, None]
    return field


def compose(
    inner: DisplacementField,
    outer: DisplacementField,
    return_clamped: bool = False,
):
    """
    Champ unique équivalent à déformer par inner puis par outer

    out(x) = outer(x) + inner(x + outer(x)), chaque composante de inner
    rééchantillonnée trilinéairement.

    Returns:
        DisplacementField, ou (DisplacementField, masque booléen des voxels
        dont l'échantillonnage a été borné) si return_clamped
    """
    check_same_dims(inner, outer, what="compose")
    resampled, _, clamped = warp_array(inner.data, outer)
    composed = DisplacementField(outer.data + resampled, outer.spacing)
    if return_clamped:
        return composed, clamped
    return composed
