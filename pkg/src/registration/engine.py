"""
Moteur de recalage déformable dense, multi-résolution

Descente de gradient sur un champ de déplacement par voxel, pas adaptatif
par paramètre (normalisation RMS, décroissance 0.99, plancher global) et
lissage gaussien de la mise à jour. L'objectif est L_IC + λ_smo·L_Smo
(+ λ_weak·L_weak).
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from ..errors import InvalidParameterError, NonFiniteLossError
from ..objectives.losses import reg_objective
from ..volume_core.volumes import DisplacementField, ProbVolume, Volume, check_same_dims
from .pyramid import downsample, level_window, upsample_field

TRACE_COLUMNS = ["step", "level", "total", "ic", "smo", "weak"]
RMS_EPS = 1e-8
CONVERGENCE_WINDOW = 10
CONVERGENCE_TOLERANCE = 1e-5

WeakLabels = Tuple[ProbVolume, ProbVolume]


@dataclass
class RegConfig:
    """Hyperparamètres de l'optimiseur de recalage"""
    pyramid_levels: int = 3
    steps_per_level: int = 150
    step_size: float = 0.5
    lambda_smo: float = 1.0
    lambda_weak: float = 1.0
    field_blur_sigma: float = 1.0
    window: int = 9
    sampling_fraction: float = 0.5
    step_decay: float = 0.8
    rms_decay: float = 0.99
    rms_floor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise InvalidParameterError("pyramid_levels doit être >= 1")
        if self.steps_per_level < 0:
            raise InvalidParameterError("steps_per_level doit être >= 0")
        if self.step_size <= 0 or self.field_blur_sigma <= 0:
            raise InvalidParameterError("step_size et field_blur_sigma doivent être > 0")
        if self.lambda_smo < 0 or self.lambda_weak < 0:
            raise InvalidParameterError("les coefficients λ doivent être >= 0")
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidParameterError(f"fenêtre NLCC impaire attendue (reçu {self.window})")
        if not 0.0 < self.sampling_fraction <= 1.0:
            raise InvalidParameterError("sampling_fraction doit être dans ]0, 1]")
        if not 0.0 <= self.step_decay < 1.0:
            raise InvalidParameterError("step_decay doit être dans [0, 1[")
        if not 0.0 < self.rms_decay < 1.0:
            raise InvalidParameterError("rms_decay doit être dans ]0, 1[")
        if self.rms_floor < 0:
            raise InvalidParameterError("rms_floor doit être >= 0")


@dataclass
class RegistrationResult:
    """Champ final et trace de l'optimisation"""
    phi: DisplacementField
    loss_trace: List[float] = field(default_factory=list)
    trace_rows: List[Dict[str, float]] = field(default_factory=list)
    converged: bool = False

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace_rows, columns=TRACE_COLUMNS)


def is_converged(losses: List[float]) -> bool:
    """Variation relative < 1e-5 sur les 10 derniers pas"""
    if len(losses) <= CONVERGENCE_WINDOW:
        return False
    previous = losses[-CONVERGENCE_WINDOW - 1]
    change = abs(losses[-1] - previous) / max(abs(previous), 1e-12)
    return change < CONVERGENCE_TOLERANCE


class RegistrationEngine:
    """
    Recalage grossier-à-fin d'une image mobile vers une image fixe

    Analogie : on aligne d'abord les grandes masses sur une version floue,
    puis on affine les détails à chaque niveau de la pyramide
    """

    def __init__(self, config: Optional[RegConfig] = None):
        self.config = config or RegConfig()

        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'registrations': 0,
            'total_steps': 0,
            'total_time': 0.0,
            'last_final_loss': None,
            'last_run_at': None,
        }

    def _effective_levels(self, dims) -> int:
        levels = 1
        current = tuple(dims)
        while levels < self.config.pyramid_levels and min(current) >= 4:
            current = tuple((n + 1) // 2 for n in current)
            levels += 1
        if levels < self.config.pyramid_levels:
            self.logger.warning(
                f"⚠️ Grille {tuple(dims)} trop petite : {levels} niveau(x) au lieu de "
                f"{self.config.pyramid_levels}"
            )
        return levels

    def _build_pyramid(self, moving: Volume, fixed: Volume, weak: Optional[WeakLabels], levels: int):
        pyramid = [(moving, fixed, weak)]
        for _ in range(1, levels):
            m, f, w = pyramid[-1]
            if w is not None:
                w = (downsample(w[0]), downsample(w[1]))
            pyramid.append((downsample(m), downsample(f), w))
        return pyramid

    def _smooth(self, grad: np.ndarray) -> np.ndarray:
        sigma = self.config.field_blur_sigma
        return np.stack([ndimage.gaussian_filter(g, sigma=sigma, mode="nearest") for g in grad])

    def _rms_denominator(self, corrected: np.ndarray) -> np.ndarray:
        """
        RMS par paramètre, plancher relatif à la RMS globale du champ

        Sous le plancher le pas redevient proportionnel au gradient : les
        voxels presque alignés bougent peu, ceux sous tension bougent de ~lr.
        """
        floor = self.config.rms_floor * np.sqrt(float(corrected.mean()))
        return np.sqrt(corrected) + floor + RMS_EPS

    def register(
        self,
        moving: Volume,
        fixed: Volume,
        weak: Optional[WeakLabels] = None,
    ) -> RegistrationResult:
        """
        Estime phi tel que warp(moving, phi) ≈ fixed

        Args:
            moving: image à déformer (l'atlas en pratique)
            fixed: image cible
            weak: (étiquettes one-hot de moving, prédiction figée sur fixed) ;
                  leur présence active le terme L_weak (itérations >= 1)

        Returns:
            RegistrationResult (champ, trace par pas, indicateur de convergence)
        """
        cfg = self.config
        check_same_dims(moving, fixed, what="register")
        if weak is not None:
            check_same_dims(weak[0], weak[1], fixed, what="register (supervision faible)")
        iteration = 1 if weak is not None else 0

        start_time = time.time()
        levels = self._effective_levels(fixed.dims)
        pyramid = self._build_pyramid(moving, fixed, weak, levels)
        rng = np.random.default_rng(cfg.seed)

        self.logger.info(
            f"🔄 Recalage {fixed.dims} : {levels} niveaux x {cfg.steps_per_level} pas"
            f"{' (+ supervision faible)' if weak is not None else ''}"
        )

        result = RegistrationResult(phi=DisplacementField.zeros(fixed.dims, fixed.spacing))
        phi: Optional[DisplacementField] = None
        step_counter = 0

        for level in reversed(range(levels)):
            m, f, w = pyramid[level]
            if phi is None:
                phi = DisplacementField.zeros(f.dims, f.spacing)
            else:
                phi = upsample_field(phi, f.dims, f.spacing)
            window = level_window(cfg.window, level)
            data = phi.data.copy()
            mean_sq = np.zeros_like(data)

            for step in range(cfg.steps_per_level):
                mask = None
                if cfg.sampling_fraction < 1.0:
                    mask = rng.random(f.dims) < cfg.sampling_fraction
                try:
                    loss = reg_objective(
                        iteration,
                        DisplacementField(data, f.spacing),
                        m, f,
                        lambda_smo=cfg.lambda_smo,
                        lambda_weak=cfg.lambda_weak,
                        window=window,
                        weak=w,
                        similarity_mask=mask,
                    )
                except NonFiniteLossError as e:
                    self.logger.error(f"❌ Perte non finie au niveau {level}, pas {step}")
                    raise NonFiniteLossError(f"niveau {level}, pas {step}: {e}") from e

                grad = loss.grad
                mean_sq = cfg.rms_decay * mean_sq + (1.0 - cfg.rms_decay) * grad * grad
                corrected = mean_sq / (1.0 - cfg.rms_decay ** (step + 1))
                decay = cfg.step_decay * step / max(cfg.steps_per_level - 1, 1)
                lr = cfg.step_size * (1.0 - decay)
                data = data - lr * self._smooth(grad / self._rms_denominator(corrected))
                if not np.all(np.isfinite(data)):
                    self.logger.error(f"❌ Champ non fini au niveau {level}, pas {step}")
                    raise NonFiniteLossError(f"niveau {level}, pas {step}: champ non fini")

                result.loss_trace.append(loss.value)
                result.trace_rows.append({
                    "step": step_counter,
                    "level": level,
                    "total": loss.value,
                    "ic": loss.components["ic"],
                    "smo": loss.components["smo"],
                    "weak": loss.components["weak"],
                })
                step_counter += 1
                if step % 50 == 0:
                    self.logger.debug(f"niveau {level} pas {step}: L={loss.value:.6f}")

            phi = DisplacementField(data, f.spacing)

        result.phi = DisplacementField(phi.data, fixed.spacing)
        final_level = result.loss_trace[-cfg.steps_per_level:] if cfg.steps_per_level else []
        result.converged = is_converged(final_level)

        elapsed = time.time() - start_time
        self.stats['registrations'] += 1
        self.stats['total_steps'] += step_counter
        self.stats['total_time'] += elapsed
        self.stats['last_final_loss'] = result.loss_trace[-1] if result.loss_trace else None
        self.stats['last_run_at'] = time.strftime('%Y-%m-%d %H:%M:%S')

        self.logger.info(
            f"✅ Recalage terminé en {elapsed:.1f}s "
            f"(|phi| moyen {float(result.phi.magnitude().mean()):.3f} voxel, "
            f"convergé={result.converged})"
        )
        return result

    def get_registration_stats(self) -> Dict:
        stats = self.stats.copy()
        if stats['registrations'] > 0:
            stats['average_time'] = stats['total_time'] / stats['registrations']
        return stats


def register(
    moving: Volume,
    fixed: Volume,
    cfg: Optional[RegConfig] = None,
    weak: Optional[WeakLabels] = None,
) -> RegistrationResult:
    """Raccourci fonctionnel autour de RegistrationEngine"""
    return RegistrationEngine(cfg).register(moving, fixed, weak)


def with_seed(cfg: RegConfig, seed: int) -> RegConfig:
    return replace(cfg, seed=int(seed))
