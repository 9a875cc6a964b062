"""
Pyramide multi-résolution : réduction par moyenne 2x2x2, agrandissement trilinéaire des champs
"""

from typing import Union

import numpy as np

from ..errors import InvalidParameterError
from ..volume_core.volumes import Dims, DisplacementField, ProbVolume, Volume
from ..volume_core.warping import renormalize_channels, sample_array


def _average_pool(stack: np.ndarray) -> np.ndarray:
    """Moyenne par blocs 2x2x2 sur les trois derniers axes (axes impairs complétés par réplication)"""
    dims = stack.shape[-3:]
    if min(dims) < 2:
        raise InvalidParameterError(f"dimensions trop petites pour réduire: {dims}")
    pad = [(0, 0)] * (stack.ndim - 3) + [(0, n % 2) for n in dims]
    padded = np.pad(stack, pad, mode="edge")
    lead = padded.shape[:-3]
    nx, ny, nz = (n // 2 for n in padded.shape[-3:])
    blocks = padded.reshape(lead + (nx, 2, ny, 2, nz, 2))
    k = len(lead)
    return blocks.mean(axis=(k + 1, k + 3, k + 5))


def _coarse_spacing(spacing):
    return tuple(2.0 * s for s in spacing)


def downsample(obj: Union[Volume, ProbVolume, DisplacementField]):
    """Réduction d'un facteur 2 ; les vecteurs d'un champ sont moyennés puis divisés par 2"""
    if isinstance(obj, Volume):
        return Volume(_average_pool(obj.data), _coarse_spacing(obj.spacing))
    if isinstance(obj, ProbVolume):
        return ProbVolume(renormalize_channels(_average_pool(obj.data)), _coarse_spacing(obj.spacing))
    if isinstance(obj, DisplacementField):
        return DisplacementField(_average_pool(obj.data) / 2.0, _coarse_spacing(obj.spacing))
    raise InvalidParameterError(f"downsample: type non supporté {type(obj).__name__}")


def upsample_field(field: DisplacementField, target_dims: Dims, spacing=None) -> DisplacementField:
    """
    Agrandit un champ grossier vers target_dims

    Le voxel fin x correspond à la coordonnée grossière (x + 0.5)/2 - 0.5 ;
    les vecteurs sont multipliés par 2.
    """
    coords = np.indices(tuple(target_dims), dtype=np.float64)
    coords = (coords + 0.5) / 2.0 - 0.5
    values, _, _ = sample_array(field.data, coords)
    if spacing is None:
        spacing = tuple(s / 2.0 for s in field.spacing)
    return DisplacementField(values * 2.0, spacing)


def level_window(finest_window: int, level: int) -> int:
    """Fenêtre NLCC au niveau donné : impaire, au moins 3 sur les niveaux grossiers"""
    if level == 0:
        return finest_window
    window = int(finest_window / 2 ** level)
    if window % 2 == 0:
        window += 1
    return max(3, window)
