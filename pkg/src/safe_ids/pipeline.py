"""End-to-end orchestration, evaluation metrics, ablations and latency timing."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import pandas as pd

from . import detect
from .errors import ConfigError, DataError, LeakageError, NumericalError, SafeError
from .feature_select import (
    FeatureSubset,
    choose_num_components,
    fit_pca,
    rank_features,
    save_ranking,
    select_top_k,
)
from .image_map import PixelLayout, fit_layout, transform_batch
from .ingest import Dataset, Normalizer, SplitSpec, apply_normalizer, filter_normal, fit_normalizer, load_dataset, split
from .mae import MaeConfig, MaeModel, encode, init_mae, train
from .serialize import dump_json
from .synthetic import make_synthetic_flows

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DatasetSpec:
    """Either a delimited file (``path``...) or a synthetic generator spec."""

    path: str | None = None
    label_column: str = "label"
    attack_values: tuple[str, ...] = ()
    delimiter: str = ","
    drop_columns: tuple[str, ...] = ()
    synthetic: dict | None = None
    # optional seeded row cap, applied before splitting
    max_rows: int | None = None


@dataclass(frozen=True)
class TsneSpec:
    perplexity: float | None = None
    iters: int = 1000
    learning_rate: float | None = None
    max_samples: int = 5000


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetSpec
    split: SplitSpec = SplitSpec()
    k: int = 31
    evr_target: float = 0.95
    grid_size: int = 8
    tsne: TsneSpec = TsneSpec()
    mae: MaeConfig = MaeConfig()
    detector: str = "lof"
    search_budget: int = 40
    seed: int = 0
    inference_samples: int = 1000
    guard: bool = True
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.grid_size * self.grid_size < self.k:
            raise ConfigError(f"k={self.k} features do not fit a {self.grid_size}x{self.grid_size} grid")
        if self.mae.grid_size != self.grid_size:
            raise ConfigError("mae.grid_size must equal grid_size")
        if not 0.0 < self.evr_target <= 1.0:
            raise ConfigError(f"evr_target must lie in (0, 1], got {self.evr_target}")
        if self.detector not in detect.DETECTORS:
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.search_budget < 1:
            raise ConfigError("search_budget must be >= 1")
        if self.dataset.path is None and self.dataset.synthetic is None:
            raise ConfigError("dataset needs either a path or a synthetic spec")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Hash of every setting that can change results (output dir excluded)."""
        d = self.to_dict()
        d.pop("out_dir", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        """Build from the JSON config schema (see README)."""
        try:
            obj = dict(obj)
            ds = dict(obj.pop("dataset"))
            for key in ("attack_values", "drop_columns"):
                if key in ds:
                    ds[key] = tuple(ds[key])
            kwargs: dict[str, Any] = {"dataset": DatasetSpec(**ds)}
            if "split" in obj:
                kwargs["split"] = SplitSpec(**obj.pop("split"))
            if "tsne" in obj:
                kwargs["tsne"] = TsneSpec(**obj.pop("tsne"))
            grid = obj.get("grid_size", 8)
            mae_kw = dict(obj.pop("mae", {}))
            mae_kw.setdefault("grid_size", grid)
            kwargs["mae"] = MaeConfig(**mae_kw)
            kwargs.update(obj)
            return cls(**kwargs)
        except (TypeError, KeyError, DataError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    # relative dataset paths are relative to the config file
    ds = obj.get("dataset") if isinstance(obj, dict) else None
    if isinstance(ds, dict) and ds.get("path") and not Path(ds["path"]).is_absolute():
        obj["dataset"] = {**ds, "path": str(Path(path).resolve().parent / ds["path"])}
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    return PipelineConfig.from_dict(obj)


# --------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    degenerate: dict[str, bool]
    inference_ms: dict[str, float] = field(default_factory=dict)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    config_fingerprint: str = ""
    details: dict[str, Any] = field(default_factory=dict)

    def metrics(self) -> dict[str, Any]:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "degenerate": self.degenerate,
        }

    def to_dict(self) -> dict[str, Any]:
        """Deterministic content first; wall-clock numbers live under ``timing``."""
        return {
            "kind": "report",
            "config_fingerprint": self.config_fingerprint,
            "metrics": self.metrics(),
            "details": self.details,
            "timing": {"inference_ms": self.inference_ms, "stage_seconds": self.stage_seconds},
        }

    def table(self) -> str:
        rows = [
            ("TP", self.tp), ("FP", self.fp), ("TN", self.tn), ("FN", self.fn),
            ("precision", f"{self.precision:.4f}" + (" (degenerate)" if self.degenerate["precision"] else "")),
            ("recall", f"{self.recall:.4f}" + (" (degenerate)" if self.degenerate["recall"] else "")),
            ("F1", f"{self.f1:.4f}" + (" (degenerate)" if self.degenerate["f1"] else "")),
        ]
        for key in ("mean", "median"):
            if key in self.inference_ms:
                rows.append((f"inference {key} (ms/sample)", f"{self.inference_ms[key]:.4f}"))
        for stage, sec in self.stage_seconds.items():
            rows.append((f"stage {stage} (s)", f"{sec:.2f}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows) + "\n"


def evaluate(predictions: Sequence[int], labels: Sequence[int]) -> EvalReport:
    """Confusion counts and precision/recall/F1 with attack as the positive class.

    A zero denominator yields 0 with the matching ``degenerate`` flag set.
    F1 is computed as 2TP / (2TP + FP + FN), the exact value of
    2PR / (P + R), so it is correctly rounded.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    lab = np.asarray(labels, dtype=np.int64)
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in length")
    if pred.size == 0:
        raise ValueError("cannot evaluate zero predictions")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    fp = int(np.sum((pred == 1) & (lab == 0)))
    tn = int(np.sum((pred == 0) & (lab == 0)))
    fn = int(np.sum((pred == 0) & (lab == 1)))
    flags = {"precision": tp + fp == 0, "recall": tp + fn == 0, "f1": tp == 0}
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return EvalReport(tp, fp, tn, fn, precision, recall, f1, flags)


# --------------------------------------------------------------------------
# leakage guard


class LeakageGuard:
    """Records the row ids of the normal training partition and rejects any fit
    call fed other rows. Each check is logged with a fingerprint of the rows."""

    def __init__(self, enabled: bool = True) -> None:
        self.enabled = enabled
        self.allowed: np.ndarray | None = None
        self.log: list[dict[str, Any]] = []

    @staticmethod
    def fingerprint(row_ids: np.ndarray) -> str:
        return hashlib.sha256(np.sort(np.asarray(row_ids, dtype=np.int64)).tobytes()).hexdigest()[:16]

    def allow(self, train_normal: Dataset) -> None:
        self.allowed = np.sort(train_normal.row_ids)

    def check(self, stage: str, row_ids: np.ndarray, labels: np.ndarray) -> None:
        if not self.enabled:
            return
        if self.allowed is None:
            raise LeakageError("guard used before the training partition was registered", stage=stage)
        if np.any(np.asarray(labels) != 0):
            raise LeakageError("fit received attack-labelled rows", stage=stage)
        if not np.all(np.isin(row_ids, self.allowed)):
            raise LeakageError("fit received rows outside the normal training partition", stage=stage)
        self.log.append({"stage": stage, "rows": int(len(row_ids)), "fingerprint": self.fingerprint(row_ids)})


# --------------------------------------------------------------------------
# fitted artifacts and the inference path


@dataclass
class SafeArtifacts:
    normalizer: Normalizer
    subset: FeatureSubset
    layout: PixelLayout
    mae: MaeModel
    detector: Any = None

    def images(self, normalized_features: np.ndarray) -> np.ndarray:
        return transform_batch(normalized_features[:, list(self.subset.indices)], self.layout)

    def latents(self, normalized_features: np.ndarray) -> np.ndarray:
        return encode(self.mae, self.images(normalized_features) / 255.0)

    def score_raw(self, raw_features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(raw_features)
        return self.detector.score(self.latents(self.normalizer.transform(X)))

    def predict_raw(self, raw_features: np.ndarray) -> np.ndarray:
        return detect.classify(self.score_raw(raw_features), self.detector.threshold)

    def save(self, out_dir: Path) -> None:
        self.normalizer.save(out_dir / "normalizer.json")
        scaler = {
            "feature_columns": [self.normalizer.column_names[i] for i in self.subset.indices],
            "min": [float(self.normalizer.mins[i]) for i in self.subset.indices],
            "max": [float(self.normalizer.maxs[i]) for i in self.subset.indices],
            "source_indices": list(self.subset.indices),
        }
        self.layout.save(out_dir / "layout.json", scaler=scaler)
        self.mae.save(out_dir / "mae.json")
        if self.detector is not None:
            detect.save_detector(self.detector, out_dir / "detector.json")


# --------------------------------------------------------------------------
# stages


@contextlib.contextmanager
def _stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    """Time a stage and attribute any failure to it."""
    start = time.perf_counter()
    try:
        yield
    except SafeError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"{type(exc).__name__}: {exc}", stage=name) from exc
    except ValueError as exc:
        raise DataError(str(exc), stage=name) from exc
    finally:
        timings[name] = time.perf_counter() - start


def load_configured_dataset(spec: DatasetSpec) -> Dataset:
    if spec.synthetic is not None:
        ds = make_synthetic_flows(**spec.synthetic)
    else:
        ds = load_dataset(spec.path, spec.label_column, spec.attack_values, spec.delimiter, spec.drop_columns)
    if spec.max_rows is not None and ds.n > spec.max_rows:
        rows = np.sort(np.random.default_rng(0).choice(ds.n, size=spec.max_rows, replace=False))
        ds = ds.take(rows)
        ds = Dataset(ds.features, ds.labels, ds.column_names)  # renumber row ids
    return ds


def dataset_width(spec: DatasetSpec) -> int:
    """Number of feature columns, read without loading the data."""
    if spec.synthetic is not None:
        s = spec.synthetic
        return int(s.get("n_informative", 25)) + int(s.get("n_noise", 15)) + int(s.get("n_extra_noise", 0))
    path = Path(spec.path)
    if not path.is_file():
        raise DataError(f"no such file: {path}", stage="config")
    header = pd.read_csv(path, sep=spec.delimiter, nrows=0, dtype=str).columns
    header = [c.strip() for c in header]
    if spec.label_column not in header:
        raise DataError(f"label column {spec.label_column!r} not in header", stage="config")
    return len([c for c in header if c != spec.label_column and c not in set(spec.drop_columns)])


def validate_config(cfg: PipelineConfig) -> int:
    """Cross-check the config against the dataset header; returns d."""
    d = dataset_width(cfg.dataset)
    if cfg.k > d:
        raise ConfigError(f"k={cfg.k} exceeds the {d} available features", stage="config")
    return d


@dataclass
class PreparedData:
    train_normal: Dataset
    val: Dataset
    test: Dataset
    normalizer: Normalizer


def prepare_data(cfg: PipelineConfig, guard: LeakageGuard, timings: dict[str, float]) -> PreparedData:
    with _stage("ingest", timings):
        ds = load_configured_dataset(cfg.dataset)
        train_ds, val_ds, test_ds = split(ds, cfg.split)
        train_normal = filter_normal(train_ds)
        guard.allow(train_normal)
        guard.check("normalizer", train_normal.row_ids, train_normal.labels)
        nrm = fit_normalizer(train_normal)
        if not np.any(val_ds.labels == 1) or not np.any(val_ds.labels == 0):
            raise DataError("validation split must contain both classes")
        return PreparedData(
            apply_normalizer(nrm, train_normal), apply_normalizer(nrm, val_ds), apply_normalizer(nrm, test_ds), nrm
        )


@dataclass
class Upstream:
    """Everything fitted before the detector, plus the latent matrices."""

    data: PreparedData
    artifacts: SafeArtifacts
    latents: dict[str, np.ndarray]
    details: dict[str, Any]


def fit_upstream(cfg: PipelineConfig, guard: LeakageGuard, timings: dict[str, float]) -> Upstream:
    data = prepare_data(cfg, guard, timings)
    tr = data.train_normal
    if cfg.k > tr.d:
        raise ConfigError(f"k={cfg.k} exceeds the {tr.d} available features", stage="feature_select")
    details: dict[str, Any] = {}

    with _stage("feature_select", timings):
        guard.check("feature_select", tr.row_ids, tr.labels)
        pca = fit_pca(tr.features)
        m = choose_num_components(pca.explained_variance_ratio, cfg.evr_target)
        ranking = rank_features(pca, m)
        subset = select_top_k(ranking, cfg.k)
        details["pca_components_used"] = m
        details["selected_features"] = [tr.column_names[i] for i in subset.indices]

    with _stage("image_map", timings):
        guard.check("image_map", tr.row_ids, tr.labels)
        fit = fit_layout(
            tr.features[:, list(subset.indices)],
            grid_size=cfg.grid_size,
            perplexity=cfg.tsne.perplexity,
            iters=cfg.tsne.iters,
            seed=cfg.seed,
            feature_names=details["selected_features"],
            max_samples=cfg.tsne.max_samples,
        )
        layout = fit.layout
        details["tsne_final_kl"] = float(fit.embedding.kl_history[-1])
        details["layout_fallback_bbox"] = fit.framing.used_bounding_box

    with _stage("mae", timings):
        guard.check("mae", tr.row_ids, tr.labels)
        mae = init_mae(cfg.mae)
        train_images = transform_batch(tr.features[:, list(subset.indices)], layout)
        occupied = layout.occupied_mask() if cfg.mae.mask_scope == "occupied" else None
        mae, history = train(mae, train_images, occupied=occupied, labels=tr.labels)
        details["mae_loss_history"] = history

    artifacts = SafeArtifacts(data.normalizer, subset, layout, mae)
    with _stage("encode", timings):
        latents = {name: artifacts.latents(getattr(data, name).features) for name in ("train_normal", "val", "test")}
        for name, z in latents.items():
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"non-finite latents for {name}", stage="encode")
    upstream = Upstream(data, artifacts, latents, details)
    upstream.details["ranking"] = ranking
    return upstream


def fit_and_evaluate_detector(
    cfg: PipelineConfig,
    up: Upstream,
    kind: str,
    guard: LeakageGuard,
    timings: dict[str, float],
) -> tuple[EvalReport, Any, np.ndarray, Any]:
    """Fit ``kind`` on the shared latents and evaluate it on the test split."""
    tr = up.data.train_normal
    with _stage(f"detect_{kind}", timings):
        guard.check("detect", tr.row_ids, tr.labels)
        model, search = detect.fit_detector(
            kind, up.latents["train_normal"], up.latents["val"], up.data.val.labels, cfg.search_budget, cfg.seed
        )
    with _stage(f"evaluate_{kind}", timings):
        test_scores = model.score(up.latents["test"])
        preds = detect.classify(test_scores, model.threshold)
        report = evaluate(preds, up.data.test.labels)
    report.details = {
        "detector": kind,
        "threshold": model.threshold,
        "best_params": search.best_params,
        "validation_f1": search.best_score,
        "threshold_rule": "validation-F1" if kind != "pca" else "training-error percentile",
    }
    return report, model, test_scores, search


def measure_inference(
    artifacts: SafeArtifacts, raw_features: np.ndarray, n_samples: int = 1000, warmup: int = 50
) -> dict[str, float]:
    """Warm single-sample latency of normalize -> image -> encode -> score -> threshold.

    The first ``warmup`` calls are not timed. Returns milliseconds.
    """
    X = np.asarray(raw_features, dtype=np.float64)
    if len(X) == 0:
        raise DataError("no samples to time")
    total = warmup + n_samples
    reps = np.resize(np.arange(len(X)), total)
    times = []
    for i, row in enumerate(reps):
        start = time.perf_counter()
        artifacts.predict_raw(X[row])
        elapsed = time.perf_counter() - start
        if i >= warmup:
            times.append(elapsed * 1e3)
    return {"mean": float(statistics.fmean(times)), "median": float(statistics.median(times)), "n": len(times)}


def _raw_test_rows(cfg: PipelineConfig, data: PreparedData) -> np.ndarray:
    # invert the clipped min-max scaling only where it is exact: use the
    # un-normalized source rows instead
    ds = load_configured_dataset(cfg.dataset)
    pos = np.searchsorted(ds.row_ids, data.test.row_ids)
    return ds.features[pos]


@dataclass
class PipelineResult:
    report: EvalReport
    artifacts: SafeArtifacts
    test_scores: np.ndarray
    test_predictions: np.ndarray
    test_labels: np.ndarray
    search_log: list[dict]
    guard_log: list[dict]


def _write_outputs(out_dir: Path, result: PipelineResult, cfg: PipelineConfig, row_ids: np.ndarray, ranking, names) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result.artifacts.save(out_dir)
    save_ranking(ranking, names, out_dir / "ranking.json", k=cfg.k)
    dump_json(result.report.to_dict(), out_dir / "report.json")
    (out_dir / "report.txt").write_text(result.report.table(), encoding="utf-8")
    dump_json({"config": cfg.to_dict(), "trials": result.search_log, "guard": result.guard_log}, out_dir / "search.json")
    pd.DataFrame(
        {
            "row_id": row_ids,
            "label": result.test_labels,
            "score": [repr(float(s)) for s in result.test_scores],
            "prediction": result.test_predictions,
        }
    ).to_csv(out_dir / "scores.csv", index=False)


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path | None = None) -> PipelineResult:
    """Ingest, select features, map to images, train the MAE, fit the detector
    on latents and evaluate on the held-out test split.

    All fitting sees only normal training rows. Artifacts are written when an
    output directory is given (argument or ``cfg.out_dir``).
    """
    validate_config(cfg)
    timings: dict[str, float] = {}
    guard = LeakageGuard(cfg.guard)
    up = fit_upstream(cfg, guard, timings)
    report, model, scores, search = fit_and_evaluate_detector(cfg, up, cfg.detector, guard, timings)
    up.artifacts.detector = model

    with _stage("inference_timing", timings):
        raw_test = _raw_test_rows(cfg, up.data)
        if cfg.inference_samples > 0:
            report.inference_ms = measure_inference(up.artifacts, raw_test, cfg.inference_samples)

    report.details.update(
        {k: v for k, v in up.details.items() if k != "ranking"}
    )
    report.config_fingerprint = cfg.fingerprint()
    report.stage_seconds = dict(timings)
    result = PipelineResult(
        report,
        up.artifacts,
        scores,
        detect.classify(scores, model.threshold),
        up.data.test.labels,
        search.log(),
        guard.log,
    )
    target = out_dir if out_dir is not None else cfg.out_dir
    if target is not None:
        _write_outputs(Path(target), result, cfg, up.data.test.row_ids, up.details["ranking"], up.data.train_normal.column_names)
    return result


def run_raw_baseline(cfg: PipelineConfig, kind: str | None = None) -> EvalReport:
    """Detector fitted directly on all normalized raw features (no FS, no MAE)."""
    kind = kind or cfg.detector
    timings: dict[str, float] = {}
    guard = LeakageGuard(cfg.guard)
    data = prepare_data(cfg, guard, timings)
    tr = data.train_normal
    with _stage(f"detect_{kind}", timings):
        guard.check("detect", tr.row_ids, tr.labels)
        model, search = detect.fit_detector(kind, tr.features, data.val.features, data.val.labels, cfg.search_budget, cfg.seed)
    report = evaluate(detect.classify(model.score(data.test.features), model.threshold), data.test.labels)
    report.details = {"detector": kind, "representation": "raw", "best_params": search.best_params, "validation_f1": search.best_score}
    report.stage_seconds = timings
    report.config_fingerprint = cfg.fingerprint()
    return report


# --------------------------------------------------------------------------
# ablations


def no_fs_grid(d: int, grid_size: int) -> int:
    """Smallest even grid side >= max(grid_size, ceil(sqrt(d)))."""
    side = max(grid_size, math.isqrt(d - 1) + 1 if d > 0 else 1)
    return side + (side % 2)


def ablation_feature_selection(cfg: PipelineConfig) -> dict[str, Any]:
    """Run with PCA feature selection at ``cfg.k`` and without it (k = d)."""
    d = validate_config(cfg)
    with_fs = run_pipeline(cfg.replace(out_dir=None)).report
    grid = no_fs_grid(d, cfg.grid_size)
    no_fs_cfg = cfg.replace(k=d, grid_size=grid, mae=dataclasses.replace(cfg.mae, grid_size=grid), out_dir=None)
    without_fs = run_pipeline(no_fs_cfg).report
    return {
        "with_fs": with_fs,
        "without_fs": without_fs,
        "no_fs_grid_size": grid,
        "grid_raised": grid != cfg.grid_size,
        "f1_delta": with_fs.f1 - without_fs.f1,
    }


def ablation_detector_swap(cfg: PipelineConfig, detectors: Sequence[str]) -> dict[str, EvalReport]:
    """Fit layout and MAE once, then swap only the novelty detector."""
    validate_config(cfg)
    timings: dict[str, float] = {}
    guard = LeakageGuard(cfg.guard)
    up = fit_upstream(cfg, guard, timings)
    mae_fingerprint = hashlib.sha256(json.dumps(up.artifacts.mae.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    reports = {}
    for kind in detectors:
        report, _, _, _ = fit_and_evaluate_detector(cfg, up, kind, guard, timings)
        report.details["mae_fingerprint"] = mae_fingerprint
        report.config_fingerprint = cfg.fingerprint()
        report.stage_seconds = {k: v for k, v in timings.items() if not k.startswith("detect_") or k == f"detect_{kind}"}
        reports[kind] = report
    return reports
