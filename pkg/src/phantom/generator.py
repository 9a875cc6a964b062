"""
Fantômes synthétiques "cérébraux" symétriques pour tester le recalage

Ellipsoïdes à bord sigmoïde (paires latérales + structures médianes),
déformations lisses connues (champ global et bosse asymétrique),
variations de style (gamma, champ de biais, bruit) et augmentation affine.
"""

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from ..errors import InvalidParameterError
from ..volume_core.volumes import DisplacementField, LabelVolume, Volume, one_hot
from ..volume_core.warping import identity_grid, sample_array

SIGMOID_WIDTH = 1.5
# Texture commune à tous les sujets : elle fait partie de l'anatomie, pas du style
TEXTURE_SEED = 1729
TEXTURE_SCALES = (1.5, 3.0)


@dataclass(frozen=True)
class Structure:
    """Ellipsoïde décrit en fractions de la grille"""
    label: int
    lateral_offset: float
    center_y: float
    center_z: float
    semi_axes: Tuple[float, float, float]
    intensity: float


# Peintes dans l'ordre : l'enveloppe d'abord, les structures internes ensuite
STRUCTURES = (
    Structure(1, 0.00, 0.50, 0.50, (0.40, 0.42, 0.38), 0.45),
    Structure(2, 0.17, 0.45, 0.55, (0.09, 0.13, 0.10), 0.85),
    Structure(3, 0.19, 0.70, 0.42, (0.07, 0.08, 0.08), 1.10),
    Structure(4, 0.00, 0.50, 0.48, (0.05, 0.10, 0.12), 0.15),
)


@dataclass
class PhantomSpec:
    """Paramètres d'un fantôme : anatomie, déformation, style"""
    dims: Tuple[int, int, int] = (48, 48, 48)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    num_structures: int = 4
    deformation_amplitude: float = 0.0
    deformation_smoothness: float = 6.0
    bump_amplitude: float = 0.0
    bump_center: Optional[Tuple[int, int, int]] = None
    bump_radius: float = 6.0
    bump_direction: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    gamma: float = 1.0
    bias_amplitude: float = 0.0
    noise_sigma: float = 0.0
    texture_amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if not 1 <= self.num_structures <= len(STRUCTURES):
            raise InvalidParameterError(f"num_structures doit être dans [1, {len(STRUCTURES)}]")
        for name in ("deformation_amplitude", "bump_amplitude", "bias_amplitude", "noise_sigma",
                     "texture_amplitude"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} doit être >= 0")
        if not 0.5 <= self.gamma <= 2.0:
            raise InvalidParameterError(f"gamma doit être dans [0.5, 2] (reçu {self.gamma})")
        if self.bias_amplitude >= 1.0:
            raise InvalidParameterError("bias_amplitude doit être < 1")
        if self.bump_radius <= 0 or self.deformation_smoothness <= 0:
            raise InvalidParameterError("bump_radius et deformation_smoothness doivent être > 0")
        if np.linalg.norm(self.bump_direction) == 0:
            raise InvalidParameterError("bump_direction ne peut pas être nulle")

    @property
    def num_classes(self) -> int:
        return self.num_structures + 1

    def default_bump_center(self) -> Tuple[int, int, int]:
        """Centre dans l'hémisphère x < milieu, sur la structure latérale principale"""
        nx, ny, nz = self.dims
        mid = (nx - 1) / 2.0
        return (int(round(mid - 0.17 * nx)), int(round(0.45 * ny)), int(round(0.55 * nz)))


def _ellipsoid_distance(coords: np.ndarray, dims, structure: Structure) -> np.ndarray:
    """Distance signée approchée (voxels) au bord de l'ellipsoïde, négative à l'intérieur"""
    nx, ny, nz = dims
    mid = (nx - 1) / 2.0
    ax, ay, az = (structure.semi_axes[0] * nx, structure.semi_axes[1] * ny, structure.semi_axes[2] * nz)
    ux = np.abs(coords[0] - mid) - structure.lateral_offset * nx
    uy = coords[1] - structure.center_y * (ny - 1)
    uz = coords[2] - structure.center_z * (nz - 1)
    rho = np.sqrt((ux / ax) ** 2 + (uy / ay) ** 2 + (uz / az) ** 2)
    return (rho - 1.0) * min(ax, ay, az)


def _check_bounds(dims, structures):
    nx, ny, nz = dims
    mid = (nx - 1) / 2.0
    for s in structures:
        x_hi = mid + (s.lateral_offset + s.semi_axes[0]) * nx
        y_lo = s.center_y * (ny - 1) - s.semi_axes[1] * ny
        y_hi = s.center_y * (ny - 1) + s.semi_axes[1] * ny
        z_lo = s.center_z * (nz - 1) - s.semi_axes[2] * nz
        z_hi = s.center_z * (nz - 1) + s.semi_axes[2] * nz
        if x_hi > nx - 1 or y_lo < 0 or y_hi > ny - 1 or z_lo < 0 or z_hi > nz - 1:
            raise InvalidParameterError(f"structure {s.label} hors de la grille {dims}")
        if min(s.semi_axes[0] * nx, s.semi_axes[1] * ny, s.semi_axes[2] * nz) < 0.5:
            raise InvalidParameterError(f"structure {s.label} trop petite pour la grille {dims}")


def paint_structures(coords: np.ndarray, dims, num_structures: int) -> Tuple[np.ndarray, np.ndarray]:
    """Intensité et étiquettes évaluées analytiquement aux coordonnées données"""
    intensity = np.zeros(coords.shape[1:])
    labels = np.zeros(coords.shape[1:], dtype=np.int32)
    for structure in STRUCTURES[:num_structures]:
        weight = expit(-2.0 * _ellipsoid_distance(coords, dims, structure) / SIGMOID_WIDTH)
        intensity = intensity * (1.0 - weight) + structure.intensity * weight
        labels[weight > 0.5] = structure.label
    return intensity, labels


def gaussian_bump_field(dims, center, radius: float, amplitude: float, direction) -> np.ndarray:
    """A·exp(-|x-c|²/2r²)·direction unitaire, forme (3, Nx, Ny, Nz)"""
    grid = identity_grid(dims)
    c = np.asarray(center, dtype=np.float64).reshape(3, 1, 1, 1)
    r2 = np.sum((grid - c) ** 2, axis=0)
    unit = np.asarray(direction, dtype=np.float64)
    unit = unit / np.linalg.norm(unit)
    profile = amplitude * np.exp(-r2 / (2.0 * radius * radius))
    return profile[None] * unit.reshape(3, 1, 1, 1)


def anatomical_texture(dims, amplitude: float, seed: int = TEXTURE_SEED) -> np.ndarray:
    """
    Texture lisse multi-échelle, symétrique gauche/droite, d'écart-type amplitude

    Même graine pour tous les sujets d'une grille donnée : recaler deux
    fantômes revient à aligner la même texture déformée.
    """
    rng = np.random.default_rng(seed)
    texture = np.zeros(tuple(dims))
    for scale in TEXTURE_SCALES:
        layer = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=scale, mode="reflect")
        texture += layer / max(float(layer.std()), 1e-12)
    texture = 0.5 * (texture + texture[::-1])
    std = float(texture.std())
    if std == 0.0:
        return np.zeros(tuple(dims))
    return texture * (amplitude / std)


def smooth_random_field(dims, amplitude: float, smoothness: float, rng: np.random.Generator) -> np.ndarray:
    """Bruit gaussien lissé, normalisé pour que la norme maximale vaille amplitude"""
    noise = np.stack([
        ndimage.gaussian_filter(rng.standard_normal(dims), sigma=smoothness, mode="reflect")
        for _ in range(3)
    ])
    peak = float(np.sqrt(np.sum(noise ** 2, axis=0)).max())
    if peak == 0.0:
        return np.zeros((3,) + tuple(dims))
    return noise * (amplitude / peak)


class PhantomGenerator:
    """
    Fabrique de fantômes et de jeux de données synthétiques

    Analogie : un moule symétrique qu'on peut tordre d'un côté
    et repeindre avec un autre "scanner"
    """

    def __init__(self):
        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'phantoms_generated': 0,
            'total_time': 0.0,
            'last_generated_at': None,
        }

    def _bias_field(self, spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
        nx, ny, nz = spec.dims
        mid = (nx - 1) / 2.0
        grid = identity_grid(spec.dims)
        modes = rng.integers(1, 3, size=3)
        phases = rng.uniform(0.0, np.pi, size=3)
        # |x - milieu| conserve la symétrie gauche/droite
        bias = np.cos(np.pi * modes[0] * np.abs(grid[0] - mid) / nx + phases[0])
        bias = bias * np.cos(np.pi * modes[1] * grid[1] / ny + phases[1])
        bias = bias * np.cos(np.pi * modes[2] * grid[2] / nz + phases[2])
        return 1.0 + spec.bias_amplitude * bias

    def make_phantom(self, spec: PhantomSpec) -> Tuple[Volume, LabelVolume, Optional[DisplacementField]]:
        """
        Génère (image, étiquettes, champ réel ou None)

        L'image vaut base(x + phi(x)) évaluée analytiquement : recaler la base
        (fantôme sans déformation) sur cette image doit retrouver phi.
        """
        start_time = time.time()
        structures = STRUCTURES[:spec.num_structures]
        _check_bounds(spec.dims, structures)
        rng = np.random.default_rng(spec.seed)

        field_data = np.zeros((3,) + spec.dims)
        deformed = False
        if spec.deformation_amplitude > 0:
            field_data += smooth_random_field(
                spec.dims, spec.deformation_amplitude, spec.deformation_smoothness, rng
            )
            deformed = True
        if spec.bump_amplitude > 0:
            center = spec.bump_center if spec.bump_center is not None else spec.default_bump_center()
            if any(not 0 <= c < n for c, n in zip(center, spec.dims)):
                raise InvalidParameterError(f"centre de bosse {center} hors de la grille")
            field_data += gaussian_bump_field(
                spec.dims, center, spec.bump_radius, spec.bump_amplitude, spec.bump_direction
            )
            deformed = True

        coords = identity_grid(spec.dims) + field_data
        intensity, labels = paint_structures(coords, spec.dims, spec.num_structures)
        if spec.texture_amplitude > 0:
            texture = anatomical_texture(spec.dims, spec.texture_amplitude)
            sampled, _, _ = sample_array(texture, coords)
            intensity = intensity + sampled

        if spec.bias_amplitude > 0:
            intensity = intensity * self._bias_field(spec, rng)
        if spec.gamma != 1.0:
            intensity = np.power(np.maximum(intensity, 0.0), spec.gamma)
        if spec.noise_sigma > 0:
            intensity = intensity + rng.normal(0.0, spec.noise_sigma, size=spec.dims)

        truth = DisplacementField(field_data, spec.spacing) if deformed else None

        self.stats['phantoms_generated'] += 1
        self.stats['total_time'] += time.time() - start_time
        self.stats['last_generated_at'] = time.strftime('%Y-%m-%d %H:%M:%S')
        self.logger.debug(f"fantôme {spec.dims} généré (seed={spec.seed}, déformé={deformed})")

        return (
            Volume(intensity, spec.spacing),
            LabelVolume(labels, spec.num_classes, spec.spacing),
            truth,
        )

    def make_suite(
        self,
        spec: PhantomSpec,
        n_unlabeled: int,
        n_test: int,
        out_dir,
        seed: int = 0,
    ) -> Dict[str, object]:
        """
        Écrit un jeu complet : atlas, images non étiquetées, images de test, pipeline.cfg

        Returns:
            chemins écrits (clés atlas, atlas_labels, unlabeled, truth, test, test_labels, config)
        """
        from ..pipeline import formats
        from ..pipeline.config import PipelineConfig, dump_config
        from ..pipeline.seeds import derive_seed

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.logger.info(f"🔄 Génération d'une suite : {n_unlabeled} non étiquetées, {n_test} test -> {out}")

        atlas_spec = replace(spec, deformation_amplitude=0.0, bump_amplitude=0.0,
                             seed=derive_seed(seed, "phantom/atlas", 0))
        atlas, atlas_labels, _ = self.make_phantom(atlas_spec)
        paths: Dict[str, object] = {
            'atlas': out / "atlas.v3d",
            'atlas_labels': out / "atlas_labels.v3d",
            'unlabeled': [], 'truth': [], 'test': [], 'test_labels': [],
        }
        formats.write_v3d(paths['atlas'], atlas)
        formats.write_v3d(paths['atlas_labels'], atlas_labels)

        amplitude = spec.deformation_amplitude if spec.deformation_amplitude > 0 else 2.0
        for role, count in (("unlabeled", n_unlabeled), ("test", n_test)):
            for i in range(count):
                subject_seed = derive_seed(seed, f"phantom/{role}", i)
                style_rng = np.random.default_rng(subject_seed)
                subject_spec = replace(
                    spec,
                    deformation_amplitude=amplitude,
                    gamma=float(style_rng.uniform(0.8, 1.25)),
                    bias_amplitude=float(style_rng.uniform(0.0, 0.2)),
                    seed=subject_seed,
                )
                image, labels, truth = self.make_phantom(subject_spec)
                image_path = out / f"{role}_{i}.v3d"
                formats.write_v3d(image_path, image)
                paths[role].append(image_path)
                if role == "unlabeled":
                    truth_path = out / f"{role}_{i}_truth.d3f"
                    formats.write_d3f(truth_path, truth)
                    paths['truth'].append(truth_path)
                else:
                    label_path = out / f"{role}_{i}_labels.v3d"
                    formats.write_v3d(label_path, labels)
                    paths['test_labels'].append(label_path)

        config = PipelineConfig(
            atlas=str(paths['atlas']),
            atlas_labels=str(paths['atlas_labels']),
            unlabeled=[str(p) for p in paths['unlabeled']],
            test=[str(p) for p in paths['test']],
            test_labels=[str(p) for p in paths['test_labels']],
            output_dir=str(out / "run"),
            seed=seed,
        )
        paths['config'] = out / "pipeline.cfg"
        paths['config'].write_text(dump_config(config), encoding="utf-8")
        self.logger.info(f"✅ Suite écrite dans {out}")
        return paths

    def get_generation_stats(self) -> Dict:
        return self.stats.copy()


def make_phantom(spec: PhantomSpec) -> Tuple[Volume, LabelVolume, Optional[DisplacementField]]:
    return PhantomGenerator().make_phantom(spec)


def make_suite(spec: PhantomSpec, n_unlabeled: int, n_test: int, out_dir, seed: int = 0):
    return PhantomGenerator().make_suite(spec, n_unlabeled, n_test, out_dir, seed)


# ---------------------------------------------------------------------------
# Augmentation affine
# ---------------------------------------------------------------------------

def rotation_matrix(angles_deg) -> np.ndarray:
    ax, ay, az = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def affine_resample(
    vol: Volume,
    labels: LabelVolume,
    matrix: np.ndarray,
    shift,
) -> Tuple[Volume, LabelVolume]:
    """
    Rééchantillonne image et étiquettes par p = A(x - c) + c + t

    Trilinéaire pour l'intensité, one-hot linéaire + argmax pour les étiquettes.
    """
    dims = vol.dims
    grid = identity_grid(dims)
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    rel = grid - center.reshape(3, 1, 1, 1)
    coords = np.einsum("ij,j...->i...", np.asarray(matrix, dtype=np.float64), rel)
    coords = coords + (center + np.asarray(shift, dtype=np.float64)).reshape(3, 1, 1, 1)

    intensity, _, _ = sample_array(vol.data, coords)
    onehot, _, _ = sample_array(one_hot(labels).data, coords)
    return (
        Volume(intensity, vol.spacing),
        LabelVolume(np.argmax(onehot, axis=0), labels.num_classes, labels.spacing),
    )


def random_affine(
    vol: Volume,
    labels: LabelVolume,
    max_rot_deg: float = 5.0,
    max_scale: float = 0.05,
    max_shift: float = 2.0,
    seed=0,
) -> Tuple[Volume, LabelVolume]:
    """Transformation affine aléatoire commune à l'image et aux étiquettes"""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    angles = rng.uniform(-max_rot_deg, max_rot_deg, size=3)
    scales = rng.uniform(1.0 - max_scale, 1.0 + max_scale, size=3)
    shift = rng.uniform(-max_shift, max_shift, size=3)
    matrix = rotation_matrix(angles) @ np.diag(scales)
    return affine_resample(vol, labels, matrix, shift)
