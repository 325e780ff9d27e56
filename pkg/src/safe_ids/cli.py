"""Command-line entry point: one subcommand per stage plus ``run`` and ablations.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import detect
from .errors import ConfigError, DataError, NumericalError, SafeError
from .feature_select import choose_num_components, fit_pca, load_ranking, rank_features, save_ranking, select_top_k
from .image_map import PixelLayout, fit_layout, load_images, save_images, transform_batch
from .ingest import (
    SplitSpec,
    apply_normalizer,
    filter_normal,
    fit_normalizer,
    load_dataset,
    read_dataset,
    save_dataset,
    split,
)
from .mae import MaeConfig, MaeModel, encode, init_mae, train
from .serialize import dump_json

logger = logging.getLogger("safe_ids")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _load_matrix(path: str) -> np.ndarray:
    """Latents or labels from ``.npy`` or a whitespace/comma text file."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    if p.suffix == ".npy":
        return np.load(p, allow_pickle=False)
    return np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None, ndmin=1)


# --------------------------------------------------------------------------
# stage commands


def cmd_preprocess(args: argparse.Namespace) -> None:
    ds = load_dataset(args.input, args.label_col, _csv_list(args.attack_values), args.delimiter, _csv_list(args.drop_cols))
    spec = SplitSpec(args.train_frac, args.val_frac, args.test_frac, args.seed)
    tr, va, te = split(ds, spec)
    train_normal = filter_normal(tr)
    nrm = fit_normalizer(train_normal)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(apply_normalizer(nrm, train_normal), out / "train.csv")
    save_dataset(apply_normalizer(nrm, va), out / "val.csv")
    save_dataset(apply_normalizer(nrm, te), out / "test.csv")
    nrm.save(out / "normalizer.json")
    summary = {
        "rows": ds.n,
        "features": ds.d,
        "train_normal": train_normal.n,
        "train_attacks_dropped": tr.n - train_normal.n,
        "val": va.n,
        "test": te.n,
        "constant_columns": ds.constant_columns,
    }
    dump_json(summary, out / "split.json")
    print(json.dumps(summary))


def cmd_select_features(args: argparse.Namespace) -> None:
    train_ds = read_dataset(args.train)
    if np.any(train_ds.labels != 0):
        raise DataError("feature selection needs normal-only training rows")
    pca = fit_pca(train_ds.features)
    m = choose_num_components(pca.explained_variance_ratio, args.evr_target)
    ranking = rank_features(pca, m)
    subset = select_top_k(ranking, args.k)
    save_ranking(ranking, train_ds.column_names, args.out, k=args.k)
    print(json.dumps({"n_components": m, "selected": [train_ds.column_names[i] for i in subset.indices]}))


def cmd_fit_layout(args: argparse.Namespace) -> None:
    train_ds = read_dataset(args.train)
    if np.any(train_ds.labels != 0):
        raise DataError("layout fitting needs normal-only training rows")
    if args.ranking:
        ranking, _, k = load_ranking(args.ranking)
        if ranking.scores.size != train_ds.d:
            raise DataError("ranking and training file disagree on the number of features")
        indices = list(select_top_k(ranking, k if k else args.k or ranking.scores.size).indices)
    else:
        indices = list(range(train_ds.d))
    names = [train_ds.column_names[i] for i in indices]
    fit = fit_layout(
        train_ds.features[:, indices],
        grid_size=args.grid,
        perplexity=args.perplexity,
        iters=args.iters,
        seed=args.seed,
        feature_names=names,
    )
    fit.layout.save(args.out)
    print(json.dumps({"features": len(names), "final_kl": fit.embedding.kl_history[-1]}))


def _layout_columns(ds, layout: PixelLayout) -> np.ndarray:
    missing = [n for n in layout.feature_names if n not in ds.column_names]
    if missing:
        raise DataError(f"input lacks layout features: {missing}")
    pos = [ds.column_names.index(n) for n in layout.feature_names]
    return ds.features[:, pos]


def cmd_map(args: argparse.Namespace) -> None:
    layout = PixelLayout.load(args.layout)
    ds = read_dataset(args.input)
    images = transform_batch(_layout_columns(ds, layout), layout)
    save_images(args.out, images, ds.labels)
    print(json.dumps({"images": len(images), "grid": layout.grid_size}))


def cmd_train_mae(args: argparse.Namespace) -> None:
    images, labels = load_images(args.images)
    cfg = MaeConfig(
        grid_size=images.shape[-1],
        latent_dim=args.latent,
        mask_ratio=args.mask_ratio,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        mask_scope=args.mask_scope,
    )
    occupied = None
    if cfg.mask_scope == "occupied":
        if not args.layout:
            raise ConfigError("--mask-scope occupied needs --layout")
        occupied = PixelLayout.load(args.layout).occupied_mask()
    model, history = train(init_mae(cfg), images, occupied=occupied, labels=labels)
    model.save(args.out)
    print(json.dumps({"loss_history": history}))


def cmd_extract(args: argparse.Namespace) -> None:
    model = MaeModel.load(args.model)
    images, labels = load_images(args.images)
    latents = encode(model, images / 255.0)
    np.save(args.out, latents, allow_pickle=False)
    if args.labels_out:
        np.save(args.labels_out, labels, allow_pickle=False)
    print(json.dumps({"latents": list(latents.shape)}))


def cmd_fit_detector(args: argparse.Namespace) -> None:
    train_lat = _load_matrix(args.latents)
    val_lat = _load_matrix(args.val_latents)
    val_labels = _load_matrix(args.val_labels).astype(np.int64).ravel()
    if len(val_lat) != len(val_labels):
        raise DataError("validation latents and labels differ in length")
    model, search = detect.fit_detector(args.detector, train_lat, val_lat, val_labels, args.budget, args.seed)
    detect.save_detector(model, args.out)
    if args.trials:
        dump_json({"best_params": search.best_params, "best_score": search.best_score, "trials": search.log()}, args.trials)
    print(json.dumps({"best_params": search.best_params, "validation_f1": search.best_score, "threshold": model.threshold}))


def cmd_score(args: argparse.Namespace) -> None:
    model = detect.load_detector(args.detector_file)
    latents = _load_matrix(args.latents)
    scores = model.score(latents)
    preds = detect.classify(scores, model.threshold)
    pd.DataFrame({"score": [repr(float(s)) for s in scores], "prediction": preds}).to_csv(args.out, index=False)
    print(json.dumps({"scored": len(scores), "flagged": int(preds.sum())}))


# --------------------------------------------------------------------------
# orchestration commands


def cmd_run(args: argparse.Namespace) -> None:
    from .pipeline import load_config, run_pipeline

    cfg = load_config(args.config)
    out = args.out or cfg.out_dir
    if out is None:
        raise ConfigError("an output directory is required (--out or out_dir in the config)")
    result = run_pipeline(cfg, out_dir=out)
    print(result.report.table(), end="")


def cmd_ablate_fs(args: argparse.Namespace) -> None:
    from .pipeline import ablation_feature_selection, load_config

    res = ablation_feature_selection(load_config(args.config))
    out = {
        "with_fs": res["with_fs"].to_dict(),
        "without_fs": res["without_fs"].to_dict(),
        "no_fs_grid_size": res["no_fs_grid_size"],
        "grid_raised": res["grid_raised"],
        "f1_delta": res["f1_delta"],
    }
    if args.out:
        dump_json(out, args.out)
    print(f"F1 with FS {res['with_fs'].f1:.4f}, without {res['without_fs'].f1:.4f}, delta {res['f1_delta']:+.4f}")


def cmd_ablate_detectors(args: argparse.Namespace) -> None:
    from .pipeline import ablation_detector_swap, load_config

    reports = ablation_detector_swap(load_config(args.config), _csv_list(args.detectors))
    if args.out:
        dump_json({k: r.to_dict() for k, r in reports.items()}, args.out)
    for kind, r in reports.items():
        print(f"{kind:<8} F1 {r.f1:.4f}  precision {r.precision:.4f}  recall {r.recall:.4f}")


def cmd_synth(args: argparse.Namespace) -> None:
    from .synthetic import make_synthetic_flows

    ds = make_synthetic_flows(n_samples=args.rows, n_extra_noise=args.extra_noise, seed=args.seed)
    save_dataset(ds, args.out)
    print(json.dumps({"rows": ds.n, "features": ds.d, "attacks": int(ds.labels.sum())}))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safe-ids", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="load, split and normalize a flow table")
    s.add_argument("--input", required=True)
    s.add_argument("--label-col", required=True)
    s.add_argument("--attack-values", required=True, help="comma-separated label values meaning attack")
    s.add_argument("--drop-cols", default="", help="comma-separated columns to ignore")
    s.add_argument("--delimiter", default=",")
    s.add_argument("--train-frac", type=float, default=0.6)
    s.add_argument("--val-frac", type=float, default=0.2)
    s.add_argument("--test-frac", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("select-features", help="rank features by PCA loadings")
    s.add_argument("--train", required=True)
    s.add_argument("--k", type=int, default=31)
    s.add_argument("--evr-target", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select_features)

    s = sub.add_parser("fit-layout", help="place features on a pixel grid")
    s.add_argument("--train", required=True)
    s.add_argument("--ranking", help="ranking file; its top-k features are placed")
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--perplexity", type=float, default=None)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_layout)

    s = sub.add_parser("map", help="turn normalized rows into images")
    s.add_argument("--layout", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("train-mae", help="train the masked autoencoder")
    s.add_argument("--images", required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--mask-ratio", type=float, default=0.75)
    s.add_argument("--latent", type=int, default=16)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--mask-scope", choices=("all", "occupied"), default="all")
    s.add_argument("--layout", help="needed for --mask-scope occupied")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_mae)

    s = sub.add_parser("extract", help="encode images to latent vectors")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True, help=".npy latent matrix")
    s.add_argument("--labels-out", help="optional .npy label vector")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit-detector", help="search and fit a novelty detector")
    s.add_argument("--latents", required=True)
    s.add_argument("--val-latents", required=True)
    s.add_argument("--val-labels", required=True)
    s.add_argument("--detector", choices=detect.DETECTORS, default="lof")
    s.add_argument("--budget", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", help="optional search log file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_detector)

    s = sub.add_parser("score", help="score latents with a fitted detector")
    s.add_argument("--detector-file", required=True)
    s.add_argument("--latents", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("run", help="run every stage from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("ablate-fs", help="paired runs with and without feature selection")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate_fs)

    s = sub.add_parser("ablate-detectors", help="swap the detector over one shared autoencoder")
    s.add_argument("--config", required=True)
    s.add_argument("--detectors", default=",".join(detect.DETECTORS))
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate_detectors)

    s = sub.add_parser("synth", help="write the synthetic flow table as CSV")
    s.add_argument("--rows", type=int, default=20_000)
    s.add_argument("--extra-noise", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SafeError):
        return exc.exit_code
    if isinstance(exc, (OSError, UnicodeDecodeError)):
        return DataError.exit_code
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return NumericalError.exit_code
    if isinstance(exc, ValueError):
        return ConfigError.exit_code
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (SafeError, OSError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
