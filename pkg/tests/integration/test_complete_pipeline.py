#!/usr/bin/env python3
"""
Test du pipeline complet : fantômes → perception d'erreur → WIST → segmenteur → évaluation
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.errors import InvalidParameterError, PipelineStageError
from src.phantom.generator import PhantomSpec, make_suite
from src.pipeline.config import apply_overrides, load_config
from src.pipeline.runner import CURVE_COLUMNS, PipelineData, PipelineRunner, load_data, run_ablation

TINY = {
    "iterations": "2",
    "wist_n": "3",
    "augment_probability": "0.5",
    "reg.pyramid_levels": "1",
    "reg.steps_per_level": "5",
    "reg.window": "5",
    "seg.epochs": "2",
    "seg.voxels_per_batch": "2048",
    "seg.hidden": "8",
}


@pytest.fixture(scope="module")
def tiny_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    paths = make_suite(PhantomSpec(dims=(16, 16, 16)), n_unlabeled=2, n_test=1, out_dir=out, seed=11)
    cfg = apply_overrides(load_config(paths['config']), TINY)
    return cfg, load_data(cfg)


def test_complete_pipeline(tiny_suite):
    """Pipeline de bout en bout sur une petite suite de fantômes"""
    print("🚀 TEST PIPELINE COMPLET")
    print("=" * 70)
    cfg, data = tiny_suite

    runner = PipelineRunner(cfg)
    manifest = runner.run_pipeline(data)

    print("📊 Courbes d'apprentissage :")
    frame = manifest.iterations_frame()
    print(frame.to_string(index=False))

    assert len(manifest.iterations) == 2
    for column in CURVE_COLUMNS + ["seg_loss", "mean_error", "mean_sigma"]:
        assert column in frame.columns
    assert frame["reg_dice"].between(0.0, 1.0).all()
    assert frame["seg_dice"].between(0.0, 1.0).all()

    # une entrée β par image, par époque et par itération
    assert len(manifest.betas) == 2 * 2 * 2
    assert all(len(entry["betas"]) == 3 for entry in manifest.betas)

    out = Path(cfg.output_dir)
    written = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert written["config"]["wist_n"] == 3
    assert "total" in written["timings"]
    curves = pd.read_csv(out / "iterations.csv")
    assert list(curves["iteration"]) == [0, 1]
    assert (out / "config.txt").exists() and (out / "net.net1").exists()

    stats = runner.get_pipeline_stats()
    assert stats['runs'] == 1 and stats['trainings'] == 2
    assert stats['registrations'] == 2 * 2 * 2
    print("\n🎉 PIPELINE COMPLET TERMINÉ")


def test_pipeline_is_deterministic(tiny_suite):
    print("🔁 Deux exécutions, même graine maître")
    cfg, data = tiny_suite
    cfg = apply_overrides(cfg, {"iterations": "1"})
    first = PipelineRunner(cfg).run_pipeline(data, write_outputs=False)
    second = PipelineRunner(cfg).run_pipeline(data, write_outputs=False)
    assert first.to_dict(include_timing=False) == second.to_dict(include_timing=False)

    other = PipelineRunner(apply_overrides(cfg, {"seed": "12"})).run_pipeline(data, write_outputs=False)
    assert other.seeds != first.seeds


def test_pipeline_without_test_images(tiny_suite):
    cfg, data = tiny_suite
    cfg = apply_overrides(cfg, {"iterations": "1", "style": "none", "use_cgd": "false"})
    bare = PipelineData(atlas=data.atlas, atlas_labels=data.atlas_labels, unlabeled=data.unlabeled[:1])
    manifest = PipelineRunner(cfg).run_pipeline(bare, write_outputs=False)
    record = manifest.iterations[0]
    # pas d'image de test : métriques absentes (NaN -> None)
    assert record["reg_dice"] is None and record["seg_dice"] is None
    assert np.isfinite(record["seg_loss"])


def test_pipeline_data_validation(tiny_suite):
    _, data = tiny_suite
    with pytest.raises(InvalidParameterError):
        PipelineData(atlas=data.atlas, atlas_labels=data.atlas_labels, unlabeled=[])
    with pytest.raises(InvalidParameterError):
        PipelineData(atlas=data.atlas, atlas_labels=data.atlas_labels, unlabeled=data.unlabeled,
                     test=data.test, test_labels=[])


def test_missing_input_is_reported_as_stage_error(tiny_suite, tmp_path):
    cfg, _ = tiny_suite
    cfg = apply_overrides(cfg, {"unlabeled": str(tmp_path / "absent.v3d")})
    with pytest.raises(PipelineStageError):
        PipelineRunner(cfg).run_pipeline(write_outputs=False)


@pytest.mark.slow
def test_ablation_table(tiny_suite, tmp_path):
    print("🧪 Ablation IST/WIST x L_cgd")
    cfg, data = tiny_suite
    cfg = apply_overrides(cfg, {"iterations": "1", "output_dir": str(tmp_path)})
    table = run_ablation(cfg, data)
    print(table.to_string(index=False))
    assert set(table["variant"]) == {"ist", "wist", "ist_cgd", "wist_cgd"}
    assert (tmp_path / "ablation.csv").exists()


@pytest.mark.slow
def test_ablation_ordering_over_phantom_families(tmp_path):
    """WIST + L_cgd ne fait pas moins bien que la base IST ni que chaque ajout seul"""
    print("🧪 Ordre de l'ablation sur 5 familles de fantômes")
    overrides = {**TINY, "iterations": "2", "seg.epochs": "4"}
    finals = []
    for family in range(5):
        out = tmp_path / f"family{family}"
        paths = make_suite(PhantomSpec(dims=(24, 24, 24)), n_unlabeled=3, n_test=2, out_dir=out,
                           seed=100 + family)
        cfg = apply_overrides(load_config(paths['config']), {**overrides, "output_dir": str(out / "runs")})
        table = run_ablation(cfg)
        last = table[table["iteration"] == table["iteration"].max()]
        finals.append(last.set_index("variant")["seg_dice"])

    dice = pd.concat(finals, axis=1).mean(axis=1)
    print(dice.to_string())
    assert dice["wist_cgd"] >= dice["ist"] - 0.005
    assert dice["wist_cgd"] >= max(dice["wist"], dice["ist_cgd"]) - 0.01
