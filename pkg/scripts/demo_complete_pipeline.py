#!/usr/bin/env python3
"""
Démonstration du pipeline complet sur fantômes :
Fantômes → Perception d'erreur (miroir) → Confiance → WIST → Segmenteur → Évaluation
"""

import os
import sys
import tempfile

# Fix du PYTHONPATH pour une exécution depuis scripts/
current_dir = os.path.dirname(os.path.abspath(__file__))
root_dir = os.path.dirname(current_dir)
sys.path.insert(0, root_dir)

import numpy as np

from src.error_perception.mirror_perception import ErrorPerceiver
from src.errors import ToolkitError
from src.metrics.evaluation import endpoint_error, roc_auc
from src.phantom.generator import PhantomGenerator, PhantomSpec
from src.pipeline.config import apply_overrides, load_config
from src.pipeline.runner import PipelineRunner
from src.registration.engine import RegConfig
from src.style_transform.fourier import StyleTransformer
from src.volume_core.warping import warp

DIMS = (24, 24, 24)


def demo_complete_pipeline(out_dir: str) -> bool:
    print("🚀 DÉMO PERCEPTION D'ERREUR + WIST")
    print("=" * 70)

    # 1. FANTÔMES - atlas symétrique et sujet avec bosse asymétrique
    print("🧪 1. FANTÔMES - génération")
    print("-" * 40)

    generator = PhantomGenerator()
    atlas, atlas_labels, _ = generator.make_phantom(PhantomSpec(dims=DIMS, seed=1))
    subject_spec = PhantomSpec(dims=DIMS, bump_amplitude=3.0, bump_radius=3.0,
                               deformation_amplitude=1.5, gamma=1.2, seed=2)
    subject, _, truth = generator.make_phantom(subject_spec)

    print(f"✅ Atlas {atlas.dims}, {atlas_labels.num_classes} classes")
    print(f"📏 Déplacement réel max : {truth.magnitude().max():.2f} voxel")

    # 2. PERCEPTION - recalage original + recalage miroir
    print(f"\n🪞 2. PERCEPTION D'ERREUR - recalage miroir")
    print("-" * 40)

    perceiver = ErrorPerceiver(RegConfig(pyramid_levels=2, steps_per_level=40, window=5, seed=3))
    pack = perceiver.perceive(atlas, subject)
    summary = pack.summary()

    print(f"✅ σ = {summary['sigma']:.3f}, erreur perçue moyenne = {summary['mean_error']:.3f}")
    print(f"📊 Confiance moyenne = {summary['mean_confidence']:.3f}, "
          f"voxels valides = {100 * summary['valid_fraction']:.1f}%")

    real_error = endpoint_error(pack.phi, truth)
    auc = roc_auc(pack.E.data, real_error.data > 1.0)
    print(f"🎯 AUC(E, erreur réelle > 1 voxel) = {auc:.3f}")

    # 3. STYLE - copies IST et WIST
    print(f"\n🎨 3. TRANSFORMATION DE STYLE")
    print("-" * 40)

    rng = np.random.default_rng(4)
    warped = warp(atlas, pack.phi)
    for mode in ("ist", "wist"):
        styled, betas = StyleTransformer(mode, n_bins=5).stylize(warped, subject, pack.C, rng)
        print(f"✅ {mode.upper()} : β = [{', '.join(f'{b:.2f}' for b in betas)}], "
              f"intensité moyenne {styled.data.mean():.3f}")

    # 4. PIPELINE - itérations recalage / segmentation
    print(f"\n🔄 4. PIPELINE ITÉRATIF")
    print("-" * 40)

    paths = generator.make_suite(PhantomSpec(dims=(16, 16, 16)), n_unlabeled=2, n_test=1,
                                 out_dir=out_dir, seed=5)
    cfg = apply_overrides(load_config(paths['config']), {
        "iterations": 2,
        "wist_n": 5,
        "reg.pyramid_levels": 2,
        "reg.steps_per_level": 20,
        "reg.window": 5,
        "seg.epochs": 5,
        "seg.hidden": 16,
    })
    runner = PipelineRunner(cfg)
    manifest = runner.run_pipeline()
    print(manifest.iterations_frame().to_string(index=False))

    # 5. STATISTIQUES
    print(f"\n📊 5. STATISTIQUES")
    print("-" * 40)

    generation = generator.get_generation_stats()
    pipeline = runner.get_pipeline_stats()
    print(f"🧪 Fantômes générés : {generation['phantoms_generated']}")
    print(f"🪞 Recalages : {pipeline['registrations']}")
    print(f"🧠 Entraînements : {pipeline['trainings']}")
    print(f"⏱️ Temps pipeline : {pipeline['total_time']:.1f}s")
    print(f"💾 Sorties : {cfg.output_dir}")

    print(f"\n🎉 DÉMO TERMINÉE")
    return True


def main():
    with tempfile.TemporaryDirectory() as tmp:
        try:
            success = demo_complete_pipeline(tmp)
        except ToolkitError as e:
            print(f"❌ {e}")
            success = False
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
