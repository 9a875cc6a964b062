#!/usr/bin/env python3
"""
Interface en ligne de commande : python -m src.cli <sous-commande> [options]

Sous-commandes : phantom, register, perceive, wist, train-seg, segment,
metrics, pipeline, convert. Options globales : --seed, --threads, --out,
--config, --verbose (utilisables avant ou après la sous-commande).
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .error_perception.mirror_perception import ErrorPerceiver
from .errors import InvalidParameterError, ToolkitError
from .metrics.evaluation import endpoint_error, evaluate_labels, reports_to_frame, roc_auc
from .phantom.generator import PhantomGenerator
from .pipeline import formats
from .pipeline.config import PipelineConfig, apply_overrides, dump_config, load_config
from .pipeline.runner import PipelineRunner, load_data, run_ablation, run_n_sweep
from .pipeline.seeds import derive_seed
from .registration.engine import RegistrationEngine
from .segmentation.voxel_net import SegmentationTrainer, VoxelNet, predict
from .style_transform.fourier import draw_betas, ist, style_diversity, wist_with_betas
from .volume_core.volumes import LabelVolume, Volume, harden, one_hot
from .volume_core.warping import warp

logger = logging.getLogger("cli")


def _paths(text: Optional[str]) -> List[str]:
    if not text:
        return []
    return [item.strip() for item in text.split(",") if item.strip()]


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stage_seed(cfg: PipelineConfig, command: str) -> int:
    return derive_seed(cfg.seed, f"cli/{command}", 0)


def _write_json(path: Path, payload: Dict):
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")


def _read_labels(path: str, num_classes: int = 0) -> LabelVolume:
    return formats.read_volume(path, as_labels=True, num_classes=num_classes)


# ---------------------------------------------------------------------------
# Sous-commandes
# ---------------------------------------------------------------------------

def cmd_phantom(args, cfg: PipelineConfig) -> int:
    overrides = {
        "phantom.dims": args.dims,
        "phantom.bump_amplitude": args.bump_amplitude,
        "phantom.bump_center": args.bump_center,
        "phantom.bump_radius": args.bump_radius,
        "phantom.deformation_amplitude": args.deformation,
        "phantom.gamma": args.gamma,
        "phantom.bias_amplitude": args.bias,
        "phantom.noise_sigma": args.noise,
        "phantom.num_structures": args.structures,
    }
    cfg = apply_overrides(cfg, {k: v for k, v in overrides.items() if v is not None})
    spec = replace(cfg.phantom, seed=_stage_seed(cfg, "phantom")) if args.seed is not None else cfg.phantom
    out = _out_dir(args)
    generator = PhantomGenerator()

    if args.suite:
        paths = generator.make_suite(spec, args.suite, args.test, out, seed=cfg.seed)
        print(f"✅ Suite écrite : {len(paths['unlabeled'])} non étiquetée(s), "
              f"{len(paths['test'])} test -> {paths['config']}")
        return 0

    image, labels, truth = generator.make_phantom(spec)
    formats.write_v3d(out / "phantom.v3d", image)
    formats.write_v3d(out / "phantom_labels.v3d", labels)
    if truth is not None:
        formats.write_d3f(out / "truth.d3f", truth)
    print(f"✅ Fantôme {spec.dims} écrit dans {out}")
    return 0


def cmd_register(args, cfg: PipelineConfig) -> int:
    moving = formats.read_volume(args.moving)
    fixed = formats.read_volume(args.fixed)
    weak = None
    if args.moving_labels or args.fixed_pred:
        if not (args.moving_labels and args.fixed_pred):
            raise InvalidParameterError("--moving-labels et --fixed-pred vont ensemble")
        moving_labels = _read_labels(args.moving_labels)
        fixed_pred = _read_labels(args.fixed_pred, moving_labels.num_classes)
        weak = (one_hot(moving_labels), one_hot(fixed_pred))

    reg_cfg = replace(cfg.reg, seed=_stage_seed(cfg, "register"))
    result = RegistrationEngine(reg_cfg).register(moving, fixed, weak)

    out = _out_dir(args)
    formats.write_d3f(out / "phi.d3f", result.phi)
    formats.write_v3d(out / "warped.v3d", warp(moving, result.phi))
    result.trace_frame().to_csv(out / "trace.csv", index=False)
    print(f"✅ Recalage écrit dans {out} (perte finale {result.loss_trace[-1]:.5f})"
          if result.loss_trace else f"✅ Recalage écrit dans {out}")
    return 0


def cmd_perceive(args, cfg: PipelineConfig) -> int:
    atlas = formats.read_volume(args.atlas)
    unlabeled = formats.read_volume(args.unlabeled)
    weak = None
    if args.atlas_labels and args.pred:
        atlas_labels = _read_labels(args.atlas_labels)
        weak = (one_hot(atlas_labels), one_hot(_read_labels(args.pred, atlas_labels.num_classes)))

    seed = _stage_seed(cfg, "perceive")
    start = time.time()
    pack = ErrorPerceiver(replace(cfg.reg, seed=seed), threads=cfg.threads).perceive(atlas, unlabeled, weak)

    out = _out_dir(args)
    formats.write_d3f(out / "phi.d3f", pack.phi)
    formats.write_d3f(out / "phi_prime.d3f", pack.phi_prime)
    formats.write_d3f(out / "Phi.d3f", pack.Phi)
    formats.write_v3d(out / "E.v3d", pack.E)
    formats.write_v3d(out / "C.v3d", pack.C)
    formats.write_v3d(out / "valid.v3d", LabelVolume(pack.valid.astype(np.int32), 2, pack.E.spacing))

    manifest = {"command": "perceive", "seed": seed, "reg": asdict(cfg.reg), **pack.summary()}
    if args.truth:
        truth = formats.read_d3f(args.truth)
        misaligned = endpoint_error(pack.phi, truth).data > 1.0
        manifest["auc"] = roc_auc(pack.E.data, misaligned)
        print(f"🎯 AUC de E contre l'erreur réelle > 1 voxel : {manifest['auc']:.3f}")
    manifest["seconds"] = time.time() - start
    _write_json(out / "manifest.json", manifest)
    print(f"✅ Perception écrite dans {out} (σ={pack.sigma:.3f})")
    return 0


def cmd_wist(args, cfg: PipelineConfig) -> int:
    warped = formats.read_volume(args.warped)
    unlabeled = formats.read_volume(args.unlabeled)
    confidence = formats.read_volume(args.confidence)
    n_bins = args.n if args.n is not None else cfg.wist_n
    seed = _stage_seed(cfg, "wist")
    rng = np.random.default_rng(seed)
    out = _out_dir(args)

    if args.mode == "ist":
        beta = args.beta if args.beta is not None else draw_betas(1, rng)[0]
        styled, betas = ist(warped, unlabeled, beta), [beta]
    else:
        styled, betas = wist_with_betas(warped, unlabeled, confidence, n_bins, rng)
    formats.write_v3d(out / "styled.v3d", styled)

    manifest = {"command": "wist", "mode": args.mode, "n": n_bins, "seed": seed, "betas": betas}
    if args.diversity:
        diff = style_diversity(warped, unlabeled, confidence, n_bins)
        formats.write_v3d(out / "diversity.v3d", diff)
        manifest["diversity_rms"] = float(np.sqrt(np.mean(diff.data ** 2)))
        print(f"📊 Diversité de style (RMS) : {manifest['diversity_rms']:.5f}")
    _write_json(out / "manifest.json", manifest)
    print(f"✅ Image stylisée écrite (β = {', '.join(f'{b:.3f}' for b in betas)})")
    return 0


def cmd_train_seg(args, cfg: PipelineConfig) -> int:
    images = _paths(args.images)
    labels = _paths(args.labels)
    if not images or len(images) != len(labels):
        raise InvalidParameterError("--images et --labels : listes non vides de même longueur")
    label_vols = [_read_labels(p, args.classes) for p in labels]
    k = args.classes or max(lv.num_classes for lv in label_vols)
    supervised = [(formats.read_volume(p), one_hot(LabelVolume(lv.data, k, lv.spacing)))
                  for p, lv in zip(images, label_vols)]

    weighted = []
    w_images, w_labels, w_conf = _paths(args.weighted_images), _paths(args.weighted_labels), _paths(args.weighted_conf)
    if not len(w_images) == len(w_labels) == len(w_conf):
        raise InvalidParameterError("listes pondérées de longueurs différentes")
    for img, lab, conf in zip(w_images, w_labels, w_conf):
        weighted.append((formats.read_volume(img), one_hot(_read_labels(lab, k)), formats.read_volume(conf)))

    seg_cfg = replace(cfg.seg, lam=cfg.lam, seed=_stage_seed(cfg, "train-seg"))
    if args.epochs:
        seg_cfg = replace(seg_cfg, epochs=args.epochs)
    net = VoxelNet.initialize(k, seg_cfg.hidden, seed=seg_cfg.seed)
    net, trace = SegmentationTrainer(seg_cfg).train_seg(net, supervised, weighted)

    out = _out_dir(args)
    formats.write_net(out / "net.net1", net)
    pd.DataFrame({"batch": range(len(trace)), "loss": trace}).to_csv(out / "trace.csv", index=False)
    print(f"✅ Segmenteur écrit dans {out / 'net.net1'} (L_Seg final {trace[-1]:.4f})")
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    net = formats.read_net(args.net)
    image = formats.read_volume(args.image)
    segmentation = harden(predict(net, image))
    out = _out_dir(args)
    formats.write_v3d(out / "segmentation.v3d", segmentation)
    print(f"✅ Segmentation écrite dans {out / 'segmentation.v3d'}")
    return 0


def cmd_metrics(args, cfg: PipelineConfig) -> int:
    preds, truths = _paths(args.pred), _paths(args.truth)
    if not preds or len(preds) != len(truths):
        raise InvalidParameterError("--pred et --truth : listes non vides de même longueur")
    reports = []
    for i, (p, t) in enumerate(zip(preds, truths)):
        pred, truth = _read_labels(p), _read_labels(t)
        k = max(pred.num_classes, truth.num_classes)
        reports.append(evaluate_labels(
            LabelVolume(pred.data, k, pred.spacing),
            LabelVolume(truth.data, k, truth.spacing),
            case=Path(p).stem or f"case_{i}",
        ))
    table = reports_to_frame(reports)
    out = _out_dir(args)
    table.to_csv(out / "metrics.csv", index=False)
    print(table.to_string(index=False))
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    overrides = {}
    if args.style:
        overrides["style"] = args.style
    if args.no_cgd:
        overrides["use_cgd"] = False
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.n is not None:
        overrides["wist_n"] = args.n
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.out:
        overrides["output_dir"] = args.out
    cfg = apply_overrides(cfg, overrides)

    if args.ablation:
        table = run_ablation(cfg, load_data(cfg))
        print(table.to_string(index=False))
        return 0
    if args.n_sweep:
        values = [int(v) for v in _paths(args.n_sweep)]
        table = run_n_sweep(cfg, values, load_data(cfg))
        print(table.to_string(index=False))
        return 0

    manifest = PipelineRunner(cfg).run_pipeline()
    print(manifest.iterations_frame().to_string(index=False))
    return 0


def cmd_convert(args, cfg: PipelineConfig) -> int:
    source, target = args.input.lower(), args.output.lower()
    if source.endswith(".d3f"):
        if not target.endswith(".d3f"):
            raise InvalidParameterError("un champ .d3f ne peut être converti qu'en .d3f")
        formats.write_d3f(args.output, formats.read_d3f(args.input))
    else:
        if not target.endswith(".v3d"):
            raise InvalidParameterError("sortie .v3d attendue pour un volume")
        formats.write_v3d(args.output, formats.read_volume(args.input, as_labels=args.labels))
    print(f"✅ {args.input} -> {args.output}")
    return 0


# ---------------------------------------------------------------------------
# Analyseur
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="graine maître (u64)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="nombre de threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="répertoire de sortie")
    common.add_argument("--config", default=argparse.SUPPRESS, help="fichier clé = valeur")
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="logs DEBUG")

    parser = argparse.ArgumentParser(
        prog="python -m src.cli",
        description="Perception d'erreur de recalage et transformation de style sur volumes 3D",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="génère un fantôme ou une suite")
    p.add_argument("--dims")
    p.add_argument("--bump-amplitude")
    p.add_argument("--bump-center")
    p.add_argument("--bump-radius")
    p.add_argument("--deformation")
    p.add_argument("--gamma")
    p.add_argument("--bias")
    p.add_argument("--noise")
    p.add_argument("--structures")
    p.add_argument("--suite", type=int, default=0, help="nombre d'images non étiquetées")
    p.add_argument("--test", type=int, default=2, help="nombre d'images de test de la suite")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("register", parents=[common], help="recale --moving sur --fixed")
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving-labels")
    p.add_argument("--fixed-pred")
    p.set_defaults(handler=cmd_register)

    p = sub.add_parser("perceive", parents=[common], help="carte d'erreur et de confiance")
    p.add_argument("--atlas", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--truth")
    p.add_argument("--atlas-labels")
    p.add_argument("--pred")
    p.set_defaults(handler=cmd_perceive)

    p = sub.add_parser("wist", parents=[common], help="transformation de style IST/WIST")
    p.add_argument("--warped", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--confidence", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--mode", choices=["wist", "ist"], default="wist")
    p.add_argument("--beta", type=float)
    p.add_argument("--diversity", action="store_true")
    p.set_defaults(handler=cmd_wist)

    p = sub.add_parser("train-seg", parents=[common], help="entraîne le segmenteur")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--weighted-images")
    p.add_argument("--weighted-labels")
    p.add_argument("--weighted-conf")
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=cmd_train_seg)

    p = sub.add_parser("segment", parents=[common], help="applique un segmenteur NET1")
    p.add_argument("--net", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("metrics", parents=[common], help="Dice et Hausdorff")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("pipeline", parents=[common], help="pipeline itératif complet")
    p.add_argument("--style", choices=["wist", "ist", "none"])
    p.add_argument("--no-cgd", action="store_true")
    p.add_argument("--iterations", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--n-sweep")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("convert", parents=[common], help="conversion NIfTI/V3D/D3F")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--labels", action="store_true")
    p.set_defaults(handler=cmd_convert)

    return parser


def _global(args, name, default=None):
    return getattr(args, name, default)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "threads", "out", "config"):
        setattr(args, name, _global(args, name))
    args.verbose = _global(args, "verbose", False)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = apply_overrides(cfg, overrides)
        logger.debug(f"configuration effective :\n{dump_config(cfg)}")
        return args.handler(args, cfg)
    except (ToolkitError, OSError) as e:
        logger.error(f"❌ {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
