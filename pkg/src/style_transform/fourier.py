"""
Transformation de style dans le domaine de Fourier

IST  : mélange des spectres d'amplitude (atlas déformé / image non étiquetée),
       phase de l'atlas déformé conservée.
WIST : force de style β_n choisie par tranche de confiance, β_n ~ U[n/N, (n+1)/N).
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import fft

from ..errors import InvalidParameterError, ToolkitError
from ..volume_core.volumes import Volume, check_same_dims

IMAG_RESIDUAL_TOLERANCE = 1e-3

RngLike = Union[np.random.Generator, int, None]


@dataclass
class Spectrum:
    """Spectres d'amplitude (>= 0) et de phase (]-π, π]) d'un volume"""
    amplitude: np.ndarray
    phase: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def dims(self):
        return tuple(self.amplitude.shape)


@dataclass
class BinMasks:
    """Partition exacte des voxels en N tranches de confiance"""
    masks: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.masks.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.argmax(self.masks, axis=0)


def fft3(vol: Volume) -> Spectrum:
    """TFD 3D sur tous les axes, dimensions quelconques"""
    coeffs = fft.fftn(vol.data)
    return Spectrum(np.abs(coeffs), np.angle(coeffs), vol.spacing)


def _real_part(coeffs: np.ndarray) -> np.ndarray:
    spatial = fft.ifftn(coeffs)
    real = spatial.real
    real_rms = np.sqrt(np.mean(real * real))
    imag_rms = np.sqrt(np.mean(spatial.imag * spatial.imag))
    if imag_rms > IMAG_RESIDUAL_TOLERANCE * max(real_rms, 1e-12):
        raise ToolkitError(
            f"résidu imaginaire trop grand après TFD inverse ({imag_rms:.3e} vs {real_rms:.3e})"
        )
    return real


def ifft3(spec: Spectrum) -> Volume:
    """Reconstruction réelle à partir de (amplitude, phase)"""
    return Volume(_real_part(spec.amplitude * np.exp(1j * spec.phase)), spec.spacing)


def _check_beta(beta: float):
    if not 0.0 <= beta <= 1.0 or not np.isfinite(beta):
        raise InvalidParameterError(f"beta doit être dans [0, 1] (reçu {beta})")


def _mix(source: Spectrum, style: Spectrum, beta: float) -> np.ndarray:
    amplitude = (1.0 - beta) * source.amplitude + beta * style.amplitude
    return _real_part(amplitude * np.exp(1j * source.phase))


def ist(warped_atlas: Volume, unlabeled: Volume, beta: float) -> Volume:
    """Amplitude = β·A(I_u) + (1-β)·A(I_ã), phase = P(I_ã)"""
    check_same_dims(warped_atlas, unlabeled, what="ist")
    _check_beta(beta)
    return Volume(_mix(fft3(warped_atlas), fft3(unlabeled), beta), warped_atlas.spacing)


def confidence_bins(confidence: Volume, n_bins: int) -> BinMasks:
    """M_n = 1 où n/N <= C < (n+1)/N, C = 1 rangé dans la dernière tranche"""
    if n_bins < 1:
        raise InvalidParameterError(f"N doit être >= 1 (reçu {n_bins})")
    c = confidence.data
    if c.min() < 0.0 or c.max() > 1.0:
        raise InvalidParameterError("la carte de confiance doit être dans [0, 1]")
    edges = np.arange(n_bins + 1) / n_bins
    index = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, n_bins - 1)
    masks = index[None] == np.arange(n_bins).reshape(-1, 1, 1, 1)
    return BinMasks(masks)


def _as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def draw_betas(n_bins: int, rng: RngLike) -> List[float]:
    """β_n tirés dans l'ordre n = 0..N-1 depuis un seul flux"""
    generator = _as_rng(rng)
    return [float(generator.uniform(n / n_bins, (n + 1) / n_bins)) for n in range(n_bins)]


def wist_with_betas(
    warped_atlas: Volume,
    unlabeled: Volume,
    confidence: Volume,
    n_bins: int = 10,
    rng: RngLike = None,
    betas: Optional[List[float]] = None,
) -> Tuple[Volume, List[float]]:
    """
    WIST avec les β utilisés

    Chaque tranche reçoit l'IST du volume complet avec son β, puis on masque.
    Les tranches vides consomment quand même leur tirage.
    """
    check_same_dims(warped_atlas, unlabeled, confidence, what="wist")
    bins = confidence_bins(confidence, n_bins)
    if betas is None:
        betas = draw_betas(n_bins, rng)
    elif len(betas) != n_bins:
        raise InvalidParameterError(f"{len(betas)} valeurs de β pour {n_bins} tranches")

    source = fft3(warped_atlas)
    style = fft3(unlabeled)
    out = np.zeros(warped_atlas.dims)
    for n, beta in enumerate(betas):
        _check_beta(beta)
        mask = bins.masks[n]
        if not mask.any():
            continue
        out[mask] = _mix(source, style, beta)[mask]
    return Volume(out, warped_atlas.spacing), list(betas)


def wist(
    warped_atlas: Volume,
    unlabeled: Volume,
    confidence: Volume,
    n_bins: int = 10,
    rng: RngLike = None,
) -> Volume:
    """WIST : style fort là où le recalage est fiable, faible ailleurs"""
    styled, _ = wist_with_betas(warped_atlas, unlabeled, confidence, n_bins, rng)
    return styled


def style_diversity(warped_atlas: Volume, unlabeled: Volume, confidence: Volume, n_bins: int) -> Volume:
    """Écart entre WIST aux bornes droite et gauche de chaque intervalle de β"""
    left = [n / n_bins for n in range(n_bins)]
    right = [(n + 1) / n_bins for n in range(n_bins)]
    low, _ = wist_with_betas(warped_atlas, unlabeled, confidence, n_bins, betas=left)
    high, _ = wist_with_betas(warped_atlas, unlabeled, confidence, n_bins, betas=right)
    return Volume(high.data - low.data, warped_atlas.spacing)


class StyleTransformer:
    """
    Générateur de copies stylisées de l'atlas déformé

    Analogie : repeindre l'atlas aux couleurs de l'image cible,
    avec une main plus légère là où l'alignement est douteux
    """

    MODES = ("wist", "ist", "none")

    def __init__(self, mode: str = "wist", n_bins: int = 10):
        if mode not in self.MODES:
            raise InvalidParameterError(f"mode de style inconnu: {mode}")
        if n_bins < 1:
            raise InvalidParameterError(f"N doit être >= 1 (reçu {n_bins})")
        self.mode = mode
        self.n_bins = n_bins

        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'copies_generated': 0,
            'total_time': 0.0,
            'betas_drawn': 0,
        }

    def stylize(
        self,
        warped_atlas: Volume,
        unlabeled: Volume,
        confidence: Volume,
        rng: RngLike,
    ) -> Tuple[Volume, List[float]]:
        """Une copie stylisée selon le mode, et les β tirés"""
        start_time = time.time()
        generator = _as_rng(rng)
        if self.mode == "wist":
            styled, betas = wist_with_betas(warped_atlas, unlabeled, confidence, self.n_bins, generator)
        elif self.mode == "ist":
            betas = [float(generator.uniform(0.0, 1.0))]
            styled = ist(warped_atlas, unlabeled, betas[0])
        else:
            betas = []
            styled = warped_atlas.copy()

        self.stats['copies_generated'] += 1
        self.stats['betas_drawn'] += len(betas)
        self.stats['total_time'] += time.time() - start_time
        self.logger.debug(f"copie {self.mode}: β={['%.3f' % b for b in betas]}")
        return styled, betas

    def get_style_stats(self) -> Dict:
        return self.stats.copy()
