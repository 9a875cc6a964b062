"""
Types de grilles 3D : volumes scalaires, étiquettes, probabilités, champs de déplacement

Convention de stockage : tableaux numpy indexés [x, y, z] (axe x en premier).
À la sérialisation, l'ordre est "x le plus rapide" (np.ravel(order='F')).
Les déplacements sont exprimés en voxels, le spacing (mm) n'est qu'une métadonnée.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..errors import DimensionMismatchError, InvalidParameterError

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]

PROB_SUM_TOLERANCE = 1e-4


def _check_spacing(spacing) -> Spacing:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise InvalidParameterError(f"spacing invalide: {spacing}")
    return spacing


def _check_grid(shape, what: str) -> Dims:
    if len(shape) != 3 or min(shape) < 1:
        raise InvalidParameterError(f"{what}: dimensions invalides {shape}")
    return tuple(int(n) for n in shape)


@dataclass
class Volume:
    """Grille scalaire dense (image, carte d'erreur, carte de confiance)"""
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _check_grid(self.data.shape, "Volume")
        self.spacing = _check_spacing(self.spacing)
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterError("Volume: valeurs non finies")

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape)

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing)


@dataclass
class LabelVolume:
    """Étiquettes de classes par voxel, classe 0 = fond"""
    data: np.ndarray
    num_classes: int
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(np.int32, copy=False)
        _check_grid(self.data.shape, "LabelVolume")
        self.spacing = _check_spacing(self.spacing)
        self.num_classes = int(self.num_classes)
        if self.num_classes < 2:
            raise InvalidParameterError(f"num_classes doit être >= 2 (reçu {self.num_classes})")
        if self.data.size and (self.data.min() < 0 or self.data.max() >= self.num_classes):
            raise InvalidParameterError(
                f"étiquettes hors de [0, {self.num_classes}) : "
                f"min={self.data.min()}, max={self.data.max()}"
            )

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape)


@dataclass
class ProbVolume:
    """Pile de K canaux de probabilités, forme (K, Nx, Ny, Nz)"""
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[0] < 2:
            raise InvalidParameterError(f"ProbVolume: forme invalide {self.data.shape}")
        _check_grid(self.data.shape[1:], "ProbVolume")
        self.spacing = _check_spacing(self.spacing)
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterError("ProbVolume: valeurs non finies")
        if self.data.min() < -1e-9 or self.data.max() > 1.0 + 1e-9:
            raise InvalidParameterError("ProbVolume: probabilités hors de [0, 1]")
        sums = self.data.sum(axis=0)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOLERANCE:
            raise InvalidParameterError("ProbVolume: la somme des canaux doit valoir 1")

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape[1:])

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]


@dataclass
class DisplacementField:
    """Champ de déplacement (dx, dy, dz) en voxels, forme (3, Nx, Ny, Nz)"""
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[0] != 3:
            raise InvalidParameterError(f"DisplacementField: forme invalide {self.data.shape}")
        _check_grid(self.data.shape[1:], "DisplacementField")
        self.spacing = _check_spacing(self.spacing)
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterError("DisplacementField: composantes non finies")

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape[1:])

    @classmethod
    def zeros(cls, dims: Dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "DisplacementField":
        return cls(np.zeros((3,) + tuple(dims)), spacing)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data ** 2, axis=0))


def check_same_dims(*objects, what: str = "grilles"):
    """Lève DimensionMismatchError si les objets n'ont pas les mêmes dimensions"""
    dims = [tuple(o.dims) if hasattr(o, "dims") else tuple(np.shape(o)) for o in objects]
    if any(d != dims[0] for d in dims[1:]):
        raise DimensionMismatchError(f"{what}: dimensions différentes {dims}")


def one_hot(labels: LabelVolume) -> ProbVolume:
    """Encodage one-hot d'un volume d'étiquettes"""
    classes = np.arange(labels.num_classes).reshape(-1, 1, 1, 1)
    return ProbVolume((labels.data[None] == classes).astype(np.float64), labels.spacing)


def harden(probs: ProbVolume) -> LabelVolume:
    """Argmax par voxel (égalités résolues vers la plus petite classe)"""
    return LabelVolume(np.argmax(probs.data, axis=0), probs.num_classes, probs.spacing)
