"""Command-line surface: train, scan, localize, ablate, epoch-titration,
walk, calibrate.

Exit codes: 0 success, 2 usage/configuration error, 3 training divergence,
4 scan failure (unreadable or corrupt model). Commands echo their full config
in the emitted JSON/CSV so every run can be reproduced bit for bit. The
environment variable NRT_SEED provides the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .data import (load_idx, load_pgm_mask, make_trigger, poison_dataset,
                   synthetic_dataset, TriggerSpec)
from .embedding import fit_pca, noise_walk
from .exceptions import (ConfigurationError, DataFormatError, ModelLoadError,
                         TrainingDiverged, ValidationError)
from .models import build_small_cnn, file_sha256, load_model, save_model
from .perturbation import implicit_gradient_map, trigger_localization_score
from .titration import (MODE_IMAGE, MODE_PURE, NoiseConfig,
                        calibrate_operating_sigma, curve_from_stats,
                        grid_sample_stats, sample_stats, sigma_seed,
                        titration_score, verdict_from_stats)
from .training import TrainConfig, train, trigger_success_rate

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRAINING = 3
EXIT_SCAN = 4


def _default_seed() -> int:
    return int(os.environ.get("NRT_SEED", "0"))


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _mode(name: str) -> str:
    return MODE_IMAGE if name == "image" else MODE_PURE


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _add_data_args(p: argparse.ArgumentParser, test_split: bool) -> None:
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in synthetic dataset")
    p.add_argument("--classes", type=int, default=10,
                   help="synthetic class count")
    p.add_argument("--per-class", type=int, default=600,
                   help="synthetic training images per class")
    p.add_argument("--test-per-class", type=int, default=150,
                   help="synthetic test images per class")
    p.add_argument("--data-seed", type=int, default=None,
                   help="synthetic dataset seed (defaults to --seed)")
    p.add_argument("--train-images", help="IDX image file (training split)")
    p.add_argument("--train-labels", help="IDX label file (training split)")
    if test_split:
        p.add_argument("--test-images", help="IDX image file (test split)")
        p.add_argument("--test-labels", help="IDX label file (test split)")


def _load_splits(args, parser):
    data_seed = args.data_seed if args.data_seed is not None else args.seed
    if args.synthetic:
        shape = (1, 28, 28)
        train_set = synthetic_dataset(args.classes, args.per_class, shape,
                                      data_seed, "train")
        test_set = synthetic_dataset(args.classes, args.test_per_class, shape,
                                     data_seed, "test")
        return train_set, test_set
    if not (args.train_images and args.train_labels):
        parser.error("either --synthetic or --train-images/--train-labels "
                     "is required")
    train_set = load_idx(args.train_images, args.train_labels,
                         num_classes=args.classes, split="train")
    if getattr(args, "test_images", None):
        test_set = load_idx(args.test_images, args.test_labels,
                            num_classes=args.classes, split="test")
    else:
        parser.error("--test-images/--test-labels required with IDX input")
    return train_set, test_set


def _build_trigger(args, image_shape) -> TriggerSpec:
    if args.trigger == "patch":
        return make_trigger("patch", args.trigger_size, args.alpha,
                            args.target_class, image_shape)
    if args.trigger == "pattern":
        return make_trigger("pattern", None, args.alpha, args.target_class,
                            image_shape)
    if not args.watermark_stencil:
        raise ConfigurationError("watermark trigger needs --watermark-stencil")
    stencil = load_pgm_mask(args.watermark_stencil)
    return make_trigger("watermark", stencil, args.alpha, args.target_class,
                        image_shape)


# ---------------------------------------------------------------------------
# train


def cmd_train(args, parser) -> int:
    train_set, test_set = _load_splits(args, parser)
    model = build_small_cnn(train_set.image_shape, train_set.num_classes,
                            seed=args.seed)
    trigger = None
    meta = {"command": "train", "tool_version": __version__,
            "seed": args.seed, "epochs": args.epochs,
            "batch_size": args.batch_size, "learning_rate": args.lr,
            "momentum": args.momentum,
            "dataset": "synthetic" if args.synthetic else "idx",
            "num_classes": train_set.num_classes}
    if args.poison_fraction > 0:
        trigger = _build_trigger(args, train_set.image_shape)
        train_set, report = poison_dataset(train_set, trigger,
                                           args.poison_fraction, args.seed)
        meta["poison"] = {"fraction": report.poison_fraction,
                          "n_poisoned": int(len(report.poisoned_indices)),
                          "poisoned_indices": [int(i) for i in
                                               report.poisoned_indices],
                          "trigger": trigger.to_json()}
    model.metadata.update(meta)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, momentum=args.momentum,
                      seed=args.seed, checkpoint_every=args.checkpoint_every,
                      checkpoint_dir=args.checkpoint_dir)
    record = train(model, train_set, test_set, cfg, trigger=trigger)
    save_model(model, args.out)
    record_csv = args.record_csv or (str(args.out) + ".train.csv")
    record.write_csv(record_csv)
    summary = {"schema_version": SCHEMA_VERSION, "command": "train",
               "model_file": str(args.out), "record_csv": record_csv,
               "final_clean_accuracy": record.clean_accuracy[-1],
               "final_loss": record.losses[-1], "config": meta}
    if trigger is not None:
        summary["final_trigger_success"] = record.trigger_success[-1]
    _emit(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan


def _scan_payload(args) -> dict:
    model = load_model(args.model)
    base = None
    mode = _mode(args.mode)
    if mode == MODE_IMAGE:
        if not (args.images and args.labels):
            raise ConfigurationError("image mode needs --images/--labels")
        base = load_idx(args.images, args.labels, num_classes=model.num_classes,
                        split="scan")
    sigma_grid = _floats(args.sigma_grid)
    gammas = _floats(args.gammas)
    operating = args.operating_sigma
    if operating is None:
        operating = sigma_grid[-1]
    cfg = NoiseConfig(sigma=sigma_grid[0], n_samples=args.samples,
                      seed=args.seed, mode=mode)
    model_id = file_sha256(args.model)

    t0 = time.perf_counter()
    stats = grid_sample_stats(model, sigma_grid, cfg, base, threads=args.threads)
    curve = curve_from_stats(stats, sigma_grid, gammas, cfg, model_id=model_id)
    if operating in sigma_grid:
        op_stats = stats[sigma_grid.index(operating)]
    else:
        op_stats = sample_stats(
            model, replace(cfg, sigma=float(operating),
                           seed=sigma_seed(cfg.seed, len(sigma_grid))),
            base, threads=args.threads)
    v = verdict_from_stats(op_stats, model, operating, args.gamma_star,
                           args.threshold, cfg)
    runtime = time.perf_counter() - t0

    if args.curve_out:
        with open(args.curve_out, "w") as fh:
            curve.write_csv(fh)
    return {"schema_version": SCHEMA_VERSION, "command": "scan",
            "tool_version": __version__,
            "model_file": str(args.model), "model_sha256": model_id,
            "verdict": v.to_json(),
            "curve": {"sigma_grid": list(curve.sigma_grid),
                      "gammas": list(curve.gamma_list),
                      "scores": curve.scores.tolist()},
            "curve_csv": args.curve_out,
            "runtime_seconds": runtime,
            "config": {"sigma_grid": sigma_grid, "gammas": gammas,
                       "samples": args.samples, "mode": mode,
                       "seed": args.seed, "threads": args.threads,
                       "operating_sigma": operating,
                       "gamma_star": args.gamma_star,
                       "threshold": args.threshold,
                       "images": args.images, "labels": args.labels}}


def cmd_scan(args, parser) -> int:
    try:
        payload = _scan_payload(args)
    except (ModelLoadError, OSError) as exc:
        print(f"scan failed: {exc}", file=sys.stderr)
        return EXIT_SCAN
    _emit(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# localize


def cmd_localize(args, parser) -> int:
    try:
        model = load_model(args.model)
    except (ModelLoadError, OSError) as exc:
        print(f"localize failed: {exc}", file=sys.stderr)
        return EXIT_SCAN
    if args.images and args.labels:
        base = load_idx(args.images, args.labels,
                        num_classes=model.num_classes, split="localize")
        image = base.images[args.index]
    elif args.synthetic:
        data_seed = args.data_seed if args.data_seed is not None else args.seed
        base = synthetic_dataset(model.num_classes, args.test_per_class,
                                 model.input_shape, data_seed, "test")
        image = base.images[args.index]
    else:
        image = np.zeros(model.input_shape, dtype=np.float32)
    gmap = implicit_gradient_map(model, image, sigma=args.sigma,
                                 n_avg=args.n_avg, seed=args.seed,
                                 use_abs=args.use_abs)
    if args.format == "npy":
        gmap.save_npy(args.out)
        map_file = str(args.out) + ".npy" if not str(args.out).endswith(".npy") \
            else str(args.out)
    else:
        with open(args.out, "w") as fh:
            gmap.write_csv(fh)
        map_file = str(args.out)
    payload = {"schema_version": SCHEMA_VERSION, "command": "localize",
               "tool_version": __version__, "model_file": str(args.model),
               "map_file": map_file,
               "config": {"sigma": args.sigma, "n_avg": args.n_avg,
                          "seed": args.seed, "index": args.index,
                          "use_abs": args.use_abs}}
    if args.truth_trigger:
        trig_meta = model.metadata.get("poison", {}).get("trigger")
        if trig_meta is None:
            raise ConfigurationError(
                "--truth-trigger: model metadata carries no trigger")
        trigger = TriggerSpec.from_json(trig_meta)
        payload["localization_score"] = trigger_localization_score(gmap, trigger)
        payload["truth_target_class"] = trigger.target_class
    _emit(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args, parser) -> int:
    train_set, test_set = _load_splits(args, parser)
    alphas = _floats(args.alphas)
    mode = _mode(args.mode)
    rows = []
    for i, alpha in enumerate(alphas):
        run_seed = args.seed + 1000 * i
        trigger = make_trigger(args.trigger, args.trigger_size, alpha,
                               args.target_class, train_set.image_shape)
        poisoned, _ = poison_dataset(train_set, trigger, args.poison_fraction,
                                     run_seed)
        model = build_small_cnn(train_set.image_shape, train_set.num_classes,
                                seed=run_seed)
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                          learning_rate=args.lr, momentum=args.momentum,
                          seed=run_seed)
        train(model, poisoned, test_set, cfg)
        success = trigger_success_rate(model, test_set, trigger)
        ncfg = NoiseConfig(sigma=args.operating_sigma, n_samples=args.samples,
                           seed=args.seed, mode=mode)
        base = test_set if mode == MODE_IMAGE else None
        score = titration_score(model, ncfg, args.gamma_star, base,
                                threads=args.threads)
        rows.append((alpha, success, score))
        print(f"alpha={alpha:g} success={success:.4f} t_score={score:.4f}",
              file=sys.stderr)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("alpha,trigger_success,t_score\n")
        for alpha, success, score in rows:
            out.write(f"{alpha},{success:.6f},{score:.6f}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# epoch titration


def cmd_epoch_titration(args, parser) -> int:
    if not os.path.isdir(args.checkpoint_dir):
        print(f"not a directory: {args.checkpoint_dir}", file=sys.stderr)
        return EXIT_USAGE
    files = sorted(f for f in os.listdir(args.checkpoint_dir)
                   if f.endswith(".nrtm"))
    if not files:
        print(f"no checkpoints in {args.checkpoint_dir}", file=sys.stderr)
        return EXIT_USAGE
    sigma_grid = _floats(args.sigma_grid)
    gammas = _floats(args.gammas)
    mode = _mode(args.mode)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("checkpoint,sigma,gamma,score,n_samples,mode,model_id\n")
        for fname in files:
            path = os.path.join(args.checkpoint_dir, fname)
            try:
                model = load_model(path)
            except ModelLoadError as exc:
                print(f"skipping {fname}: {exc}", file=sys.stderr)
                continue
            base = None
            if mode == MODE_IMAGE:
                if not (args.images and args.labels):
                    raise ConfigurationError("image mode needs --images/--labels")
                base = load_idx(args.images, args.labels,
                                num_classes=model.num_classes, split="scan")
            cfg = NoiseConfig(sigma=sigma_grid[0], n_samples=args.samples,
                              seed=args.seed, mode=mode)
            stats = grid_sample_stats(model, sigma_grid, cfg, base,
                                      threads=args.threads)
            curve = curve_from_stats(stats, sigma_grid, gammas, cfg,
                                     model_id=file_sha256(path))
            for i, sigma in enumerate(curve.sigma_grid):
                for j, gamma in enumerate(curve.gamma_list):
                    out.write(f"{fname},{sigma},{gamma},"
                              f"{curve.scores[i, j]:.6f},{args.samples},"
                              f"{mode},{curve.model_id}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# walk


def cmd_walk(args, parser) -> int:
    try:
        model = load_model(args.model)
    except (ModelLoadError, OSError) as exc:
        print(f"walk failed: {exc}", file=sys.stderr)
        return EXIT_SCAN
    if args.images and args.labels:
        base = load_idx(args.images, args.labels,
                        num_classes=model.num_classes, split="walk")
    else:
        data_seed = args.data_seed if args.data_seed is not None else args.seed
        base = synthetic_dataset(model.num_classes, args.test_per_class,
                                 model.input_shape, data_seed, "test")
    logits = model.forward(base.images).data
    basis = fit_pca(logits)
    sigmas = list(np.linspace(0.0, args.sigma_max, args.n_checkpoints))
    picker = np.random.default_rng(args.seed)
    walk_rows = []
    for cls in range(base.num_classes):
        candidates = np.flatnonzero(base.labels == cls)
        for idx in picker.choice(candidates, size=min(args.per_class,
                                                      len(candidates)),
                                 replace=False):
            walk = noise_walk(model, base.images[idx], sigmas, args.walks,
                              seed=args.seed + int(idx), basis=basis,
                              image_id=int(idx), true_class=cls)
            walk_rows.append(walk)
    csv_path = args.out_prefix + ".csv"
    with open(csv_path, "w") as fh:
        k = model.num_classes
        fh.write("image_id,true_class,sigma,pc1,pc2,"
                 + ",".join(f"z{c}" for c in range(k)) + "\n")
        for walk in walk_rows:
            for j, sigma in enumerate(walk.sigmas):
                z = ",".join(f"{v:.6g}" for v in walk.expected_logits[j])
                fh.write(f"{walk.image_id},{walk.true_class},{sigma},"
                         f"{walk.path2d[j, 0]:.6g},{walk.path2d[j, 1]:.6g},{z}\n")
    basis_path = args.out_prefix + "_basis.json"
    with open(basis_path, "w") as fh:
        json.dump(basis.to_json(), fh, sort_keys=True)
    _emit({"schema_version": SCHEMA_VERSION, "command": "walk",
           "tool_version": __version__, "model_file": str(args.model),
           "walks_csv": csv_path, "basis_json": basis_path,
           "n_walks": len(walk_rows),
           "config": {"walks": args.walks, "sigma_max": args.sigma_max,
                      "n_checkpoints": args.n_checkpoints, "seed": args.seed,
                      "per_class": args.per_class}})
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args, parser) -> int:
    try:
        models = [load_model(p) for p in args.models]
    except (ModelLoadError, OSError) as exc:
        print(f"calibrate failed: {exc}", file=sys.stderr)
        return EXIT_SCAN
    mode = _mode(args.mode)
    base = None
    if mode == MODE_IMAGE:
        if not (args.images and args.labels):
            raise ConfigurationError("image mode needs --images/--labels")
        base = load_idx(args.images, args.labels,
                        num_classes=models[0].num_classes, split="calibrate")
    sigma_grid = _floats(args.sigma_grid)
    cfg = NoiseConfig(sigma=sigma_grid[0], n_samples=args.samples,
                      seed=args.seed, mode=mode)
    sigma, rows = calibrate_operating_sigma(models, args.gamma, sigma_grid,
                                            cfg, base, target=args.target,
                                            threads=args.threads)
    _emit({"schema_version": SCHEMA_VERSION, "command": "calibrate",
           "tool_version": __version__, "operating_sigma": sigma,
           "gamma": args.gamma, "target": args.target,
           "sigma_grid": sigma_grid,
           "baseline_scores": {str(p): row for p, row in zip(args.models, rows)},
           "config": {"samples": args.samples, "seed": args.seed, "mode": mode}})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_train_like_args(p):
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrt",
        description="Noise-response titration toolkit: train, poison, scan, "
                    "localize. Exit codes: 0 ok, 2 usage, 3 training failure, "
                    "4 scan failure.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a clean or poisoned model")
    _add_data_args(p, test_split=True)
    _add_train_like_args(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--poison-fraction", type=float, default=0.0)
    p.add_argument("--trigger", choices=["patch", "pattern", "watermark"],
                   default="patch")
    p.add_argument("--trigger-size", type=int, default=3)
    p.add_argument("--watermark-stencil", help="P5 PGM stencil path")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--target-class", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--record-csv")
    p.add_argument("--out", required=True, help="output model file (.nrtm)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("scan", help="titration scan and backdoor verdict")
    p.add_argument("model")
    p.add_argument("--sigma-grid", default="0.25,0.5,0.75,1.0,1.5,2.0")
    p.add_argument("--gammas", default="0.95,0.99")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--mode", choices=["pure", "image"], default="pure")
    p.add_argument("--images", help="IDX images for image mode")
    p.add_argument("--labels", help="IDX labels for image mode")
    p.add_argument("--operating-sigma", type=float, default=None,
                   help="defaults to the largest grid sigma")
    p.add_argument("--gamma-star", type=float, default=0.95)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--curve-out", help="write the full curve CSV here")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("localize", help="implicit gradient map for trigger pixels")
    p.add_argument("model")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--n-avg", type=int, default=20)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--use-abs", action="store_true",
                   help="max |gradient| instead of signed values")
    p.add_argument("--images", help="IDX images to take the probe image from")
    p.add_argument("--labels")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--test-per-class", type=int, default=30)
    p.add_argument("--index", type=int, default=0,
                   help="probe image index (zero image when no data given)")
    p.add_argument("--format", choices=["npy", "csv"], default="npy")
    p.add_argument("--truth-trigger", action="store_true",
                   help="score against the trigger embedded in model metadata "
                        "(test harnesses only; the scan never reads it)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("ablate",
                       help="sweep trigger intensity: train, success, t-score")
    _add_data_args(p, test_split=True)
    _add_train_like_args(p)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--alphas", required=True, help="comma list of intensities")
    p.add_argument("--trigger", choices=["patch", "pattern"], default="patch")
    p.add_argument("--trigger-size", type=int, default=3)
    p.add_argument("--target-class", type=int, default=3)
    p.add_argument("--poison-fraction", type=float, default=0.1)
    p.add_argument("--operating-sigma", type=float, required=True)
    p.add_argument("--gamma-star", type=float, default=0.95)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--mode", choices=["pure", "image"], default="pure")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("epoch-titration",
                       help="titration curves for every training checkpoint")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--sigma-grid", default="0.25,0.5,0.75,1.0,1.5,2.0")
    p.add_argument("--gammas", default="0.95,0.99")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--mode", choices=["pure", "image"], default="pure")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_epoch_titration)

    p = sub.add_parser("walk", help="PCA noise walks through logit space")
    p.add_argument("model")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--walks", type=int, default=200)
    p.add_argument("--sigma-max", type=float, default=10.0)
    p.add_argument("--n-checkpoints", type=int, default=11)
    p.add_argument("--per-class", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("calibrate",
                       help="pick the operating sigma from baseline models")
    p.add_argument("models", nargs="+")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--sigma-grid", default="0.25,0.5,0.75,1.0,1.5,2.0")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--target", type=float, default=0.1)
    p.add_argument("--mode", choices=["pure", "image"], default="pure")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ValidationError, ConfigurationError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelLoadError as exc:
        print(f"model load failed: {exc}", file=sys.stderr)
        return EXIT_SCAN


if __name__ == "__main__":
    sys.exit(main())
