"""
Segmenteur par voxel : perceptron à une couche cachée sur un voisinage 3x3x3

Entrées (30) : 27 intensités normalisées (bords répliqués) + 3 coordonnées dans [-1, 1]
Sortie : softmax sur K classes. Entraînement par Dice souple sur des lots de voxels,
avec terme de Dice guidé par la confiance sur les images non étiquetées.
"""

import itertools
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionMismatchError, InvalidParameterError, NonFiniteLossError
from ..objectives.losses import LossValue, seg_objective, soft_dice_terms
from ..volume_core.volumes import ProbVolume, Volume, check_same_dims

FEATURE_DIM = 30
PREDICT_CHUNK = 65536
RMS_EPS = 1e-8

SupervisedPair = Tuple[Volume, ProbVolume]
WeightedTriple = Tuple[Volume, ProbVolume, Volume]


@dataclass
class SegConfig:
    """Hyperparamètres de l'entraînement du segmenteur"""
    epochs: int = 30
    voxels_per_batch: int = 8192
    step_size: float = 1e-2
    lam: float = 0.5
    hidden: int = 32
    rms_decay: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.voxels_per_batch < 1 or self.hidden < 1:
            raise InvalidParameterError("epochs, voxels_per_batch et hidden doivent être >= 1")
        if self.step_size <= 0:
            raise InvalidParameterError("step_size doit être > 0")
        if self.lam < 0:
            raise InvalidParameterError("λ doit être >= 0")
        if not 0.0 < self.rms_decay < 1.0:
            raise InvalidParameterError("rms_decay doit être dans ]0, 1[")


# ---------------------------------------------------------------------------
# Caractéristiques
# ---------------------------------------------------------------------------

def normalize_intensity(data: np.ndarray) -> np.ndarray:
    """Moyenne nulle, variance unité (volume constant -> zéros)"""
    std = float(data.std())
    if std < 1e-12:
        return np.zeros_like(data)
    return (data - data.mean()) / std


def _coordinate_axes(dims) -> List[np.ndarray]:
    axes = []
    for n in dims:
        if n == 1:
            axes.append(np.zeros(1))
        else:
            axes.append(2.0 * np.arange(n) / (n - 1) - 1.0)
    return axes


def feature_matrix(vol: Volume) -> np.ndarray:
    """Matrice (Nvox, 30), lignes dans l'ordre C de la grille [x, y, z]"""
    nx, ny, nz = vol.dims
    padded = np.pad(normalize_intensity(vol.data), 1, mode="edge")
    columns = [
        padded[dx:dx + nx, dy:dy + ny, dz:dz + nz].ravel()
        for dx, dy, dz in itertools.product(range(3), repeat=3)
    ]
    cx, cy, cz = np.meshgrid(*_coordinate_axes(vol.dims), indexing="ij")
    columns.extend([cx.ravel(), cy.ravel(), cz.ravel()])
    return np.stack(columns, axis=1)


def features(vol: Volume, voxel: Sequence[int]) -> np.ndarray:
    """Vecteur de 30 caractéristiques d'un voxel"""
    x, y, z = (int(i) for i in voxel)
    padded = np.pad(normalize_intensity(vol.data), 1, mode="edge")
    patch = padded[x:x + 3, y:y + 3, z:z + 3].ravel()
    axes = _coordinate_axes(vol.dims)
    return np.concatenate([patch, [axes[0][x], axes[1][y], axes[2][z]]])


def target_rows(probs: ProbVolume) -> np.ndarray:
    """Cibles (Nvox, K) alignées sur feature_matrix"""
    return probs.data.reshape(probs.num_classes, -1).T


# ---------------------------------------------------------------------------
# Réseau
# ---------------------------------------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class VoxelNet:
    """Perceptron 30 -> H (tanh) -> K (softmax)"""

    PARAMS = ("w1", "b1", "w2", "b2")

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray, seed: int = 0):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.seed = seed
        hidden = self.w1.shape[1]
        if (self.w1.shape != (FEATURE_DIM, hidden) or self.b1.shape != (hidden,)
                or self.w2.shape[0] != hidden or self.b2.shape != (self.w2.shape[1],)):
            raise DimensionMismatchError("VoxelNet: formes de poids incohérentes")
        if self.num_classes < 2:
            raise InvalidParameterError("VoxelNet: au moins deux classes")
        if not all(np.all(np.isfinite(p)) for p in self.parameters().values()):
            raise NonFiniteLossError("VoxelNet: poids non finis")

    @classmethod
    def initialize(cls, num_classes: int, hidden: int = 32, seed: int = 0) -> "VoxelNet":
        """Glorot uniforme pour la couche cachée, couche de sortie à zéro"""
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (FEATURE_DIM + hidden))
        return cls(
            rng.uniform(-limit, limit, size=(FEATURE_DIM, hidden)),
            np.zeros(hidden),
            np.zeros((hidden, num_classes)),
            np.zeros(num_classes),
            seed,
        )

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAMS}

    def copy(self) -> "VoxelNet":
        return VoxelNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.seed)

    def forward(self, X: np.ndarray):
        """Probabilités (n, K) et cache pour la rétropropagation"""
        h = np.tanh(X @ self.w1 + self.b1)
        probs = _softmax(h @ self.w2 + self.b2)
        return probs, (X, h, probs)

    def backward(self, cache, grad_probs: np.ndarray) -> Dict[str, np.ndarray]:
        X, h, probs = cache
        grad_logits = probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))
        grad_h = grad_logits @ self.w2.T
        grad_pre = grad_h * (1.0 - h * h)
        return {
            "w1": X.T @ grad_pre,
            "b1": grad_pre.sum(axis=0),
            "w2": h.T @ grad_logits,
            "b2": grad_logits.sum(axis=0),
        }


def predict(net: VoxelNet, vol: Volume) -> ProbVolume:
    """Probabilités par voxel, par blocs de lignes"""
    X = feature_matrix(vol)
    chunks = [net.forward(X[i:i + PREDICT_CHUNK])[0] for i in range(0, X.shape[0], PREDICT_CHUNK)]
    probs = np.concatenate(chunks, axis=0)
    return ProbVolume(probs.T.reshape((net.num_classes,) + vol.dims), vol.spacing)


def batch_loss(
    net: VoxelNet,
    X_sup: np.ndarray,
    T_sup: np.ndarray,
    X_w: Optional[np.ndarray] = None,
    T_w: Optional[np.ndarray] = None,
    C_w: Optional[np.ndarray] = None,
    lam: float = 0.5,
) -> Tuple[LossValue, Dict[str, np.ndarray]]:
    """
    L_Seg sur un lot : L_d (supervisé) + λ·L_cgd (pondéré par la confiance)

    Returns:
        (LossValue, gradients par paramètre)
    """
    probs, cache = net.forward(X_sup)
    dice, grad_p, _ = soft_dice_terms(probs.T, T_sup.T, with_grad=True)
    l_d = LossValue(-dice)
    grads = net.backward(cache, -grad_p.T)

    l_cgd = LossValue(0.0)
    if X_w is not None and X_w.shape[0] > 0:
        probs_w, cache_w = net.forward(X_w)
        dice_w, grad_w, _ = soft_dice_terms(probs_w.T, T_w.T, C_w, with_grad=True)
        l_cgd = LossValue(-dice_w)
        grads_w = net.backward(cache_w, -grad_w.T)
        grads = {name: grads[name] + lam * grads_w[name] for name in grads}

    return seg_objective(l_d, l_cgd, lam), grads


class SegmentationTrainer:
    """
    Entraîne le segmenteur sur des lots de voxels tirés au hasard

    Analogie : un élève qui révise sur des fiches mélangées,
    les fiches douteuses (faible confiance) comptant moins
    """

    def __init__(self, config: Optional[SegConfig] = None):
        self.config = config or SegConfig()

        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'trainings': 0,
            'total_batches': 0,
            'total_time': 0.0,
            'last_loss': None,
        }

    @staticmethod
    def _stack_supervised(pairs: List[SupervisedPair]):
        for vol, target in pairs:
            check_same_dims(vol, target, what="paire supervisée")
        X = np.concatenate([feature_matrix(v) for v, _ in pairs])
        T = np.concatenate([target_rows(t) for _, t in pairs])
        return X, T

    @staticmethod
    def _stack_weighted(triples: List[WeightedTriple]):
        for vol, pseudo, conf in triples:
            check_same_dims(vol, pseudo, conf, what="triplet pondéré")
        X = np.concatenate([feature_matrix(v) for v, _, _ in triples])
        T = np.concatenate([target_rows(p) for _, p, _ in triples])
        C = np.concatenate([c.data.ravel() for _, _, c in triples])
        return X, T, C

    def train_seg(
        self,
        net: VoxelNet,
        supervised: List[SupervisedPair],
        weighted: Optional[List[WeightedTriple]] = None,
        augment: Optional[Callable[[int], List[SupervisedPair]]] = None,
    ) -> Tuple[VoxelNet, List[float]]:
        """
        Descente stochastique sur lots de voxels

        Args:
            net: réseau de départ (copié, jamais modifié sur place)
            supervised: paires (image, cibles) pour L_d, obligatoires
            weighted: triplets (image, pseudo-masque, confiance) pour L_cgd
            augment: fonction epoch -> paires supervisées de l'epoch (copies stylisées)

        Returns:
            (réseau entraîné, trace de L_Seg par lot)
        """
        cfg = self.config
        if not supervised:
            raise InvalidParameterError("train_seg: la liste supervisée est vide")
        weighted = weighted or []
        for _, target in supervised:
            if target.num_classes != net.num_classes:
                raise DimensionMismatchError(
                    f"{target.num_classes} classes dans les cibles, {net.num_classes} dans le réseau"
                )
        for _, pseudo, _ in weighted:
            if pseudo.num_classes != net.num_classes:
                raise DimensionMismatchError(
                    f"{pseudo.num_classes} classes dans les pseudo-masques, {net.num_classes} dans le réseau"
                )

        start_time = time.time()
        self.logger.info(
            f"🔄 Entraînement segmenteur : {cfg.epochs} epochs, "
            f"{len(supervised)} paire(s) supervisée(s), {len(weighted)} pondérée(s)"
        )

        sup_seed, weighted_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        rng_sup = np.random.default_rng(sup_seed)
        rng_w = np.random.default_rng(weighted_seed)

        X_sup, T_sup = self._stack_supervised(supervised)
        X_w = T_w = C_w = None
        if weighted:
            X_w, T_w, C_w = self._stack_weighted(weighted)

        net = net.copy()
        mean_sq = {name: np.zeros_like(p) for name, p in net.parameters().items()}
        trace: List[float] = []
        t = 0

        for epoch in range(cfg.epochs):
            if augment is not None and epoch > 0:
                X_sup, T_sup = self._stack_supervised(augment(epoch))
            order = rng_sup.permutation(X_sup.shape[0])
            for start in range(0, X_sup.shape[0], cfg.voxels_per_batch):
                idx = order[start:start + cfg.voxels_per_batch]
                batch_w = (None, None, None)
                if X_w is not None:
                    widx = rng_w.integers(0, X_w.shape[0], size=idx.size)
                    batch_w = (X_w[widx], T_w[widx], C_w[widx])

                loss, grads = batch_loss(net, X_sup[idx], T_sup[idx], *batch_w, lam=cfg.lam)
                t += 1
                for name, param in net.parameters().items():
                    g = grads[name]
                    mean_sq[name] = cfg.rms_decay * mean_sq[name] + (1.0 - cfg.rms_decay) * g * g
                    corrected = mean_sq[name] / (1.0 - cfg.rms_decay ** t)
                    param -= cfg.step_size * g / (np.sqrt(corrected) + RMS_EPS)
                    if not np.all(np.isfinite(param)):
                        raise NonFiniteLossError(f"poids {name} non finis (epoch {epoch})")
                trace.append(loss.value)

            self.logger.debug(f"epoch {epoch}: L_Seg={trace[-1]:.4f}")

        elapsed = time.time() - start_time
        self.stats['trainings'] += 1
        self.stats['total_batches'] += t
        self.stats['total_time'] += elapsed
        self.stats['last_loss'] = trace[-1] if trace else None
        self.logger.info(f"✅ Segmenteur entraîné en {elapsed:.1f}s (L_Seg final {trace[-1]:.4f})")
        return net, trace

    def get_training_stats(self) -> Dict:
        stats = self.stats.copy()
        if stats['trainings'] > 0:
            stats['average_time'] = stats['total_time'] / stats['trainings']
        return stats


def train_seg(
    net: VoxelNet,
    supervised: List[SupervisedPair],
    weighted: Optional[List[WeightedTriple]] = None,
    cfg: Optional[SegConfig] = None,
    augment: Optional[Callable[[int], List[SupervisedPair]]] = None,
) -> Tuple[VoxelNet, List[float]]:
    return SegmentationTrainer(cfg).train_seg(net, supervised, weighted, augment)
