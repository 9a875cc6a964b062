"""
Orchestrateur du pipeline itératif recalage / segmentation

Pour chaque itération :
    1. perception d'erreur (recalage original + miroir) par image non étiquetée,
       avec supervision faible du segmenteur figé à partir de l'itération 1
    2. pseudo-masques S_ã = atlas déformé par phi, copies stylisées (WIST/IST)
    3. entraînement du segmenteur (L_d + λ·L_cgd)
    4. évaluation sur les images de test (recalage et segmenteur)
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..error_perception.mirror_perception import ConfidencePack, ErrorPerceiver
from ..errors import InvalidParameterError, PipelineStageError, ToolkitError
from ..metrics.evaluation import MetricReport, evaluate_labels
from ..phantom.generator import random_affine
from ..registration.engine import RegistrationEngine
from ..segmentation.voxel_net import SegmentationTrainer, VoxelNet, predict
from ..style_transform.fourier import StyleTransformer
from ..volume_core.volumes import LabelVolume, Volume, check_same_dims, harden, one_hot
from ..volume_core.warping import warp, warp_prob
from . import formats
from .config import PipelineConfig, dump_config
from .seeds import derive_seed

ABLATION_VARIANTS = {
    "ist": ("ist", False),
    "wist": ("wist", False),
    "ist_cgd": ("ist", True),
    "wist_cgd": ("wist", True),
}
CURVE_COLUMNS = ["iteration", "reg_dice", "seg_dice", "reg_hd", "seg_hd"]


@dataclass
class PipelineData:
    """Volumes en mémoire d'une expérience"""
    atlas: Volume
    atlas_labels: LabelVolume
    unlabeled: List[Volume]
    test: List[Volume] = field(default_factory=list)
    test_labels: List[LabelVolume] = field(default_factory=list)

    def __post_init__(self):
        if not self.unlabeled:
            raise InvalidParameterError("au moins une image non étiquetée est nécessaire")
        if len(self.test) != len(self.test_labels):
            raise InvalidParameterError("images de test et étiquettes de test en nombre différent")
        check_same_dims(self.atlas, self.atlas_labels, *self.unlabeled, *self.test,
                        *self.test_labels, what="données du pipeline")


def load_data(cfg: PipelineConfig) -> PipelineData:
    """Lit les volumes déclarés dans la configuration"""
    if not cfg.atlas or not cfg.atlas_labels:
        raise InvalidParameterError("atlas et atlas_labels sont obligatoires")
    labels = formats.read_volume(cfg.atlas_labels, as_labels=True, num_classes=cfg.num_classes)
    k = cfg.num_classes or labels.num_classes
    return PipelineData(
        atlas=formats.read_volume(cfg.atlas),
        atlas_labels=labels,
        unlabeled=[formats.read_volume(p) for p in cfg.unlabeled],
        test=[formats.read_volume(p) for p in cfg.test],
        test_labels=[formats.read_volume(p, as_labels=True, num_classes=k) for p in cfg.test_labels],
    )


def _clean(value):
    """NaN -> None pour un JSON strict"""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


@dataclass
class RunManifest:
    """Journal d'exécution en ajout seul : configuration, métriques, β, graines, durées"""
    config: Dict[str, Any]
    iterations: List[Dict[str, Any]] = field(default_factory=list)
    betas: List[Dict[str, Any]] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def add_iteration(self, record: Dict[str, Any]):
        self.iterations.append({k: _clean(v) for k, v in record.items()})

    def add_betas(self, iteration: int, image: int, epoch: int, betas: Sequence[float]):
        self.betas.append({"iteration": iteration, "image": image, "epoch": epoch, "betas": list(betas)})

    def add_seed(self, stage: str, seed: int):
        self.seeds[stage] = int(seed)

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        payload = {
            "config": self.config,
            "iterations": self.iterations,
            "betas": self.betas,
            "seeds": self.seeds,
        }
        if include_timing:
            payload["timings"] = self.timings
        return payload

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, ensure_ascii=False)

    def write(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def iterations_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.iterations)


def _mean(values: List[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


class PipelineRunner:
    """
    Boucle d'entraînement alternée des deux modèles

    Analogie : deux élèves qui se corrigent mutuellement ; le recaleur fournit
    des pseudo-masques, le segmenteur lui renvoie des prédictions figées
    """

    def __init__(self, config: PipelineConfig):
        self.config = config

        logging.basicConfig(level=logging.INFO)
        self.logger = logging.getLogger(self.__class__.__name__)

        self.stats = {
            'runs': 0,
            'total_time': 0.0,
            'registrations': 0,
            'trainings': 0,
            'last_run_at': None,
        }

    @contextmanager
    def _stage(self, name: str, manifest: RunManifest):
        start = time.time()
        try:
            yield
        except PipelineStageError:
            raise
        except (ToolkitError, OSError, ValueError) as e:
            self.logger.error(f"❌ Étape {name} en échec: {e}")
            raise PipelineStageError(name, str(e)) from e
        finally:
            manifest.timings[name] = time.time() - start

    def _seed(self, manifest: RunManifest, stage: str, index: int = 0) -> int:
        seed = derive_seed(self.config.seed, stage, index)
        manifest.add_seed(f"{stage}#{index}", seed)
        return seed

    # -- étapes --------------------------------------------------------------

    def _perceive_all(self, iteration: int, data: PipelineData, frozen: Optional[VoxelNet],
                      atlas_onehot, manifest: RunManifest) -> List[ConfidencePack]:
        cfg = self.config

        def job(j: int) -> ConfidencePack:
            reg_cfg = replace(cfg.reg, seed=derive_seed(cfg.seed, f"reg/iter{iteration}", j))
            weak = None
            if frozen is not None:
                weak = (atlas_onehot, predict(frozen, data.unlabeled[j]))
            return ErrorPerceiver(reg_cfg).perceive(data.atlas, data.unlabeled[j], weak)

        for j in range(len(data.unlabeled)):
            self._seed(manifest, f"reg/iter{iteration}", j)
        indices = range(len(data.unlabeled))
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                packs = list(pool.map(job, indices))
        else:
            packs = [job(j) for j in indices]
        self.stats['registrations'] += 2 * len(packs)
        return packs

    def _training_copy(self, iteration: int, image: int, epoch: int, item: Dict[str, Any],
                       styler: StyleTransformer, manifest: RunManifest):
        cfg = self.config
        style_rng = np.random.default_rng(derive_seed(cfg.seed, f"style/iter{iteration}/image{image}", epoch))
        styled, betas = styler.stylize(item["warped"], item["unlabeled"], item["pack"].C, style_rng)
        manifest.add_betas(iteration, image, epoch, betas)

        target = item["pseudo"]
        aug_rng = np.random.default_rng(derive_seed(cfg.seed, f"augment/iter{iteration}/image{image}", epoch))
        if aug_rng.random() < cfg.augment_probability:
            styled, labels = random_affine(styled, harden(target), seed=aug_rng)
            target = one_hot(labels)
        return styled, target

    def _evaluate(self, iteration: int, data: PipelineData, frozen: Optional[VoxelNet],
                  net: VoxelNet, atlas_onehot, manifest: RunManifest) -> Dict[str, float]:
        cfg = self.config
        reg_reports: List[MetricReport] = []
        seg_reports: List[MetricReport] = []
        for k, (image, truth) in enumerate(zip(data.test, data.test_labels)):
            reg_cfg = replace(cfg.reg, seed=self._seed(manifest, f"eval-reg/iter{iteration}", k))
            weak = (atlas_onehot, predict(frozen, image)) if frozen is not None else None
            result = RegistrationEngine(reg_cfg).register(data.atlas, image, weak)
            reg_pred = harden(warp_prob(atlas_onehot, result.phi))
            reg_reports.append(evaluate_labels(reg_pred, truth, case=f"test_{k}"))
            seg_pred = harden(predict(net, image))
            seg_reports.append(evaluate_labels(seg_pred, truth, case=f"test_{k}"))
        return {
            "reg_dice": _mean([r.mean_dice for r in reg_reports]),
            "reg_hd": _mean([r.mean_hd for r in reg_reports]),
            "seg_dice": _mean([r.mean_dice for r in seg_reports]),
            "seg_hd": _mean([r.mean_hd for r in seg_reports]),
        }

    def _persist(self, iteration: int, j: int, item: Dict[str, Any]):
        out = Path(self.config.output_dir) / f"iter{iteration}"
        out.mkdir(parents=True, exist_ok=True)
        pack = item["pack"]
        formats.write_d3f(out / f"phi_{j}.d3f", pack.phi)
        formats.write_v3d(out / f"E_{j}.v3d", pack.E)
        formats.write_v3d(out / f"C_{j}.v3d", pack.C)
        formats.write_v3d(out / f"warped_{j}.v3d", item["warped"])
        formats.write_v3d(out / f"pseudo_{j}.v3d", harden(item["pseudo"]))

    # -- boucle principale ----------------------------------------------------

    def run_pipeline(self, data: Optional[PipelineData] = None, write_outputs: bool = True) -> RunManifest:
        """
        Exécute toutes les itérations

        Args:
            data: volumes en mémoire (sinon lus depuis les chemins de la configuration)
            write_outputs: écrit manifest.json, config.txt et iterations.csv

        Returns:
            RunManifest complété
        """
        cfg = self.config
        start_time = time.time()
        manifest = RunManifest(config=asdict(cfg))

        with self._stage("load", manifest):
            if data is None:
                data = load_data(cfg)
        k = cfg.num_classes or data.atlas_labels.num_classes
        atlas_onehot = one_hot(LabelVolume(data.atlas_labels.data, k, data.atlas_labels.spacing))

        self.logger.info(
            f"🔄 Pipeline : {cfg.iterations} itération(s), style={cfg.style}, "
            f"L_cgd={'oui' if cfg.use_cgd else 'non'}, {len(data.unlabeled)} image(s) non étiquetée(s)"
        )

        net = VoxelNet.initialize(k, cfg.seg.hidden, seed=self._seed(manifest, "seg/init"))
        styler = StyleTransformer(cfg.style, cfg.wist_n)

        for iteration in range(cfg.iterations):
            frozen = net.copy() if iteration >= 1 else None

            with self._stage(f"perception/iter{iteration}", manifest):
                packs = self._perceive_all(iteration, data, frozen, atlas_onehot, manifest)

            with self._stage(f"pseudo-masks/iter{iteration}", manifest):
                items = []
                for j, (image, pack) in enumerate(zip(data.unlabeled, packs)):
                    item = {
                        "unlabeled": image,
                        "pack": pack,
                        "warped": warp(data.atlas, pack.phi),
                        "pseudo": one_hot(harden(warp_prob(atlas_onehot, pack.phi))),
                    }
                    items.append(item)
                    if cfg.persist_intermediate:
                        self._persist(iteration, j, item)

            with self._stage(f"segmentation/iter{iteration}", manifest):
                seg_cfg = replace(cfg.seg, lam=cfg.lam, seed=self._seed(manifest, "seg/train", iteration))

                def copies(epoch: int, iteration=iteration):
                    return [self._training_copy(iteration, j, epoch, item, styler, manifest)
                            for j, item in enumerate(items)]

                weighted = []
                if cfg.use_cgd:
                    weighted = [(item["unlabeled"], item["pseudo"], item["pack"].C) for item in items]
                net, trace = SegmentationTrainer(seg_cfg).train_seg(net, copies(0), weighted, copies)
                self.stats['trainings'] += 1

            with self._stage(f"evaluation/iter{iteration}", manifest):
                metrics = self._evaluate(iteration, data, frozen, net, atlas_onehot, manifest)

            record = {
                "iteration": iteration,
                **metrics,
                "seg_loss": trace[-1],
                "mean_error": _mean([float(p.E.data.mean()) for p in packs]),
                "mean_sigma": _mean([p.sigma for p in packs]),
            }
            manifest.add_iteration(record)
            self.logger.info(
                f"📊 Itération {iteration} : Dice recalage {metrics['reg_dice']:.3f}, "
                f"Dice segmenteur {metrics['seg_dice']:.3f}"
            )

        elapsed = time.time() - start_time
        manifest.timings["total"] = elapsed
        self.stats['runs'] += 1
        self.stats['total_time'] += elapsed
        self.stats['last_run_at'] = time.strftime('%Y-%m-%d %H:%M:%S')
        self.net = net

        if write_outputs:
            self.write_outputs(manifest)
        self.logger.info(f"✅ Pipeline terminé en {elapsed:.1f}s")
        return manifest

    def write_outputs(self, manifest: RunManifest):
        out = Path(self.config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest.write(out / "manifest.json")
        (out / "config.txt").write_text(dump_config(self.config), encoding="utf-8")
        manifest.iterations_frame().to_csv(out / "iterations.csv", index=False)
        formats.write_net(out / "net.net1", self.net)

    def get_pipeline_stats(self) -> Dict:
        return self.stats.copy()


def run_pipeline(cfg: PipelineConfig, data: Optional[PipelineData] = None) -> RunManifest:
    return PipelineRunner(cfg).run_pipeline(data)


def _curves(manifest: RunManifest) -> pd.DataFrame:
    return manifest.iterations_frame()[CURVE_COLUMNS]


def run_ablation(cfg: PipelineConfig, data: Optional[PipelineData] = None) -> pd.DataFrame:
    """Quatre variantes (IST/WIST x avec/sans L_cgd), mêmes graines ; écrit ablation.csv"""
    data = data if data is not None else load_data(cfg)
    frames = []
    for name, (style, use_cgd) in ABLATION_VARIANTS.items():
        variant = replace(cfg, style=style, use_cgd=use_cgd,
                          output_dir=str(Path(cfg.output_dir) / name))
        curves = _curves(PipelineRunner(variant).run_pipeline(data))
        curves.insert(0, "variant", name)
        frames.append(curves)
    table = pd.concat(frames, ignore_index=True)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    table.to_csv(Path(cfg.output_dir) / "ablation.csv", index=False)
    return table


def run_n_sweep(cfg: PipelineConfig, values: Sequence[int], data: Optional[PipelineData] = None) -> pd.DataFrame:
    """WIST + L_cgd pour plusieurs N ; écrit n_sweep.csv"""
    data = data if data is not None else load_data(cfg)
    frames = []
    for n in values:
        variant = replace(cfg, style="wist", use_cgd=True, wist_n=int(n),
                          output_dir=str(Path(cfg.output_dir) / f"n{n}"))
        curves = _curves(PipelineRunner(variant).run_pipeline(data))
        curves.insert(0, "n", int(n))
        frames.append(curves)
    table = pd.concat(frames, ignore_index=True)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    table.to_csv(Path(cfg.output_dir) / "n_sweep.csv", index=False)
    return table
