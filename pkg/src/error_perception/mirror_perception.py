"""
Perception des erreurs de recalage par cohérence miroir

On recale (atlas, image) puis (miroir(atlas), miroir(image)). Le champ obtenu
dans l'espace miroir, ramené dans l'espace d'origine (Phi), devrait coïncider
avec phi si le recalage est fiable : leur écart E donne une carte d'erreur,
convertie en carte de confiance C par une fonction de transfert gaussienne.
Aucune optimisation supplémentaire, seulement des champs de déplacement.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import InvalidParameterError
from ..registration.engine import RegConfig, RegistrationEngine, WeakLabels
from ..volume_core.volumes import DisplacementField, Volume, check_same_dims
from ..volume_core.warping import build_mirror_field, compose, mirror

SIGMA_EPS = 1e-8


@dataclass
class ConfidencePack:
    """Champs, carte d'erreur et carte de confiance pour une image"""
    phi: DisplacementField
    phi_prime: DisplacementField
    Phi: DisplacementField
    E: Volume
    C: Volume
    sigma: float
    valid: Optional[np.ndarray] = None

    def summary(self) -> Dict[str, float]:
        return {
            'sigma': float(self.sigma),
            'mean_error': float(self.E.data.mean()),
            'max_error': float(self.E.data.max()),
            'mean_confidence': float(self.C.data.mean()),
            'valid_fraction': float(self.valid.mean()) if self.valid is not None else 1.0,
        }


def composite_mirror_field(phi_prime: DisplacementField, return_valid: bool = False):
    """
    Phi équivalent à miroir -> déformation par phi_prime -> miroir

    Deux compositions successives, sans inversion de composante.

    Returns:
        Phi, ou (Phi, masque de validité) si return_valid ; un voxel est
        invalide quand l'un des rééchantillonnages a été borné au bord
    """
    phi_mirr = build_mirror_field(phi_prime.dims, phi_prime.spacing)
    inner, clamped_inner = compose(phi_mirr, phi_prime, return_clamped=True)
    Phi, clamped_outer = compose(inner, phi_mirr, return_clamped=True)
    if not return_valid:
        return Phi
    # le second rééchantillonnage lit inner au voxel miroir
    clamped = clamped_outer | np.flip(clamped_inner, axis=0)
    return Phi, ~clamped


def error_map(Phi: DisplacementField, phi: DisplacementField) -> Volume:
    """E(x) = ||Phi(x) - phi(x)||"""
    check_same_dims(Phi, phi, what="error_map")
    diff = Phi.data - phi.data
    return Volume(np.sqrt(np.sum(diff * diff, axis=0)), phi.spacing)


def confidence_map(E: Volume) -> Tuple[Volume, float]:
    """C = exp(-E²/2σ²), σ écart-type (population) de E ; C ≡ 1 si σ ≈ 0"""
    if E.data.min() < 0.0:
        raise InvalidParameterError("la carte d'erreur doit être positive")
    sigma = float(np.std(E.data))
    if sigma < SIGMA_EPS:
        return Volume(np.ones(E.dims), E.spacing), sigma
    conf = np.exp(-(E.data ** 2) / (2.0 * sigma * sigma))
    # C reste strictement positif même pour des erreurs extrêmes
    conf = np.maximum(conf, np.finfo(np.float64).tiny)
    return Volume(conf, E.spacing), sigma


class ErrorPerceiver:
    """
    Estimation de la confiance d'un recalage sans apprentissage dédié

    Analogie : on fait relire la copie par la même personne,
    mais en lui présentant l'image dans un miroir
    """

    def __init__(self, config: Optional[RegConfig] = None, threads: int = 1):
        self.config = config or RegConfig()
        self.threads = max(1, int(threads))

        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'perceptions': 0,
            'total_time': 0.0,
            'last_sigma': None,
            'last_mean_error': None,
        }

    def _register(self, moving: Volume, fixed: Volume, weak: Optional[WeakLabels]):
        return RegistrationEngine(self.config).register(moving, fixed, weak)

    def perceive(
        self,
        atlas: Volume,
        unlabeled: Volume,
        weak: Optional[WeakLabels] = None,
    ) -> ConfidencePack:
        """
        Recalage original + recalage miroir, puis erreur et confiance

        Args:
            atlas: image atlas (mobile)
            unlabeled: image non étiquetée (fixe)
            weak: supervision faible optionnelle, miroitée pour le second recalage
        """
        check_same_dims(atlas, unlabeled, what="perceive")
        start_time = time.time()
        self.logger.info("🔄 Perception d'erreur : recalage original et recalage miroir")

        mirrored_weak = None
        if weak is not None:
            mirrored_weak = (mirror(weak[0]), mirror(weak[1]))
        jobs = [
            (atlas, unlabeled, weak),
            (mirror(atlas), mirror(unlabeled), mirrored_weak),
        ]

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=2) as pool:
                original, mirrored = list(pool.map(lambda job: self._register(*job), jobs))
        else:
            original, mirrored = [self._register(*job) for job in jobs]

        Phi, valid = composite_mirror_field(mirrored.phi, return_valid=True)
        E = error_map(Phi, original.phi)
        C, sigma = confidence_map(E)
        pack = ConfidencePack(original.phi, mirrored.phi, Phi, E, C, sigma, valid)

        elapsed = time.time() - start_time
        self.stats['perceptions'] += 1
        self.stats['total_time'] += elapsed
        self.stats['last_sigma'] = sigma
        self.stats['last_mean_error'] = float(E.data.mean())

        self.logger.info(
            f"📊 E moyen {E.data.mean():.3f} voxel, σ={sigma:.3f}, "
            f"{100.0 * (1.0 - valid.mean()):.1f}% voxels bornés ({elapsed:.1f}s)"
        )
        return pack

    def get_perception_stats(self) -> Dict:
        return self.stats.copy()


def perceive(
    atlas: Volume,
    unlabeled: Volume,
    cfg: Optional[RegConfig] = None,
    weak: Optional[WeakLabels] = None,
    threads: int = 1,
) -> ConfidencePack:
    return ErrorPerceiver(cfg, threads).perceive(atlas, unlabeled, weak)
