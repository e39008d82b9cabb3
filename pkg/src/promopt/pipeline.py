"""Stage orchestration: configuration, artifacts, and report emission.

Each stage reads the artifacts of the stages before it, never hidden state,
and re-running a stage with unchanged inputs reproduces byte-identical
outputs. Every artifact directory carries the hash of the config that built
it; a hash mismatch anywhere downstream is a dependency error.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .elasticity import compute_reference_offers, elasticity_records, fit_sigmoid
from .errors import FitError, SizingError, StageDependencyError
from .features import FeatureBuilder, read_samples, write_samples
from .ingest import (
    SplitSpec,
    build_series,
    derive_window,
    parse_transactions,
    read_series_store,
    write_series_store,
)
from .network import bce_loss, forward
from .optimizer import (
    OptimizationItem,
    OptimizationProblem,
    offer_range_from_events,
    solve_category,
)
from .thresholds import ConsumerPredictions, ThresholdCalibrator, decide
from .training import Normalizer, TemporalConvNetClassifier, load_network, samples_to_batch, save_network

STAGES = ("ingest", "featurize", "train", "predict", "thresholds", "elasticity", "optimize", "report")

CATEGORY_REPORT_COLUMNS = (
    "Category",
    "Sample size",
    "BCELoss",
    "Precision",
    "Recall",
    "F1-Score",
    "Avg Elasticity",
    "Weighted Offer Percent",
)

PROBABILITY_EPS = 1e-6


@dataclass
class PipelineConfig:
    input_path: str = "data/transactions.csv"
    window_start: str = ""
    window_end: str = ""
    schema: dict[str, str] = field(default_factory=dict)
    train_periods: int = 24
    validation_periods: int = 1
    test_periods: int = 1
    n_lags: int = 4
    smoothing: float = 20.0
    generators: tuple[str, ...] = ("history", "rolling", "profile", "datetime")
    kernel_size: int = 2
    dilations: tuple[int, ...] = (1, 2, 4)
    channels: tuple[int, ...] = (16, 16, 16)
    fc_widths: tuple[int, ...] = (64, 32, 16)
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    scheduler: str = "cyclical"
    base_lr: float = 1e-6
    max_lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    min_lr: float = 1e-6
    swa_start_epoch: int | None = None
    swa_lr: float = 1e-3
    n_checkpoints_to_average: int = 3
    epochs: int = 30
    batch_size: int = 256
    seed: int = 7
    retention_floor: float = 0.2
    retention_floor_overrides: dict[str, float] = field(default_factory=dict)
    offer_low_percentile: float = 1.0
    offer_high_percentile: float = 99.0
    probability_bins: int = 20
    offer_bin_width: float = 5.0

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_periods, self.validation_periods, self.test_periods)

    def floor_for(self, category: str) -> float:
        return self.retention_floor_overrides.get(category, self.retention_floor)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        parser["data"] = {
            "input_path": self.input_path,
            "window_start": self.window_start,
            "window_end": self.window_end,
        }
        from .ingest import CSV_COLUMNS, DEFAULT_SCHEMA

        schema = dict(DEFAULT_SCHEMA)
        schema.update(self.schema)
        parser["schema"] = {name: schema.get(name, "") for name in CSV_COLUMNS}
        parser["split"] = {
            "train_periods": str(self.train_periods),
            "validation_periods": str(self.validation_periods),
            "test_periods": str(self.test_periods),
        }
        parser["features"] = {
            "n_lags": str(self.n_lags),
            "smoothing": repr(self.smoothing),
            "generators": ",".join(self.generators),
        }
        parser["network"] = {
            "kernel_size": str(self.kernel_size),
            "dilations": ",".join(map(str, self.dilations)),
            "channels": ",".join(map(str, self.channels)),
            "fc_widths": ",".join(map(str, self.fc_widths)),
        }
        parser["train"] = {
            "optimizer": self.optimizer,
            "learning_rate": repr(self.learning_rate),
            "weight_decay": repr(self.weight_decay),
            "scheduler": self.scheduler,
            "base_lr": repr(self.base_lr),
            "max_lr": repr(self.max_lr),
            "plateau_factor": repr(self.plateau_factor),
            "plateau_patience": str(self.plateau_patience),
            "min_lr": repr(self.min_lr),
            "swa_start_epoch": "" if self.swa_start_epoch is None else str(self.swa_start_epoch),
            "swa_lr": repr(self.swa_lr),
            "n_checkpoints_to_average": str(self.n_checkpoints_to_average),
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "seed": str(self.seed),
        }
        parser["optimize"] = {
            "retention_floor": repr(self.retention_floor),
            "retention_floor_overrides": ",".join(
                f"{k}:{repr(v)}" for k, v in sorted(self.retention_floor_overrides.items())
            ),
            "offer_low_percentile": repr(self.offer_low_percentile),
            "offer_high_percentile": repr(self.offer_high_percentile),
        }
        parser["report"] = {
            "probability_bins": str(self.probability_bins),
            "offer_bin_width": repr(self.offer_bin_width),
        }
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        data = parser["data"]
        schema = {k: v for k, v in parser["schema"].items() if v}
        split = parser["split"]
        feats = parser["features"]
        net = parser["network"]
        train = parser["train"]
        opt = parser["optimize"]
        report = parser["report"]
        overrides = {}
        for chunk in opt.get("retention_floor_overrides", "").split(","):
            if chunk.strip():
                name, value = chunk.rsplit(":", 1)
                overrides[name.strip()] = float(value)
        swa_raw = train.get("swa_start_epoch", "").strip()
        return cls(
            input_path=data.get("input_path", ""),
            window_start=data.get("window_start", ""),
            window_end=data.get("window_end", ""),
            schema=schema,
            train_periods=split.getint("train_periods"),
            validation_periods=split.getint("validation_periods"),
            test_periods=split.getint("test_periods"),
            n_lags=feats.getint("n_lags"),
            smoothing=feats.getfloat("smoothing"),
            generators=tuple(g.strip() for g in feats.get("generators").split(",") if g.strip()),
            kernel_size=net.getint("kernel_size"),
            dilations=tuple(int(x) for x in net.get("dilations").split(",")),
            channels=tuple(int(x) for x in net.get("channels").split(",")),
            fc_widths=tuple(int(x) for x in net.get("fc_widths").split(",")),
            optimizer=train.get("optimizer"),
            learning_rate=train.getfloat("learning_rate"),
            weight_decay=train.getfloat("weight_decay"),
            scheduler=train.get("scheduler"),
            base_lr=train.getfloat("base_lr"),
            max_lr=train.getfloat("max_lr"),
            plateau_factor=train.getfloat("plateau_factor"),
            plateau_patience=train.getint("plateau_patience"),
            min_lr=train.getfloat("min_lr"),
            swa_start_epoch=int(swa_raw) if swa_raw else None,
            swa_lr=train.getfloat("swa_lr"),
            n_checkpoints_to_average=train.getint("n_checkpoints_to_average"),
            epochs=train.getint("epochs"),
            batch_size=train.getint("batch_size"),
            seed=train.getint("seed"),
            retention_floor=opt.getfloat("retention_floor"),
            retention_floor_overrides=overrides,
            offer_low_percentile=opt.getfloat("offer_low_percentile"),
            offer_high_percentile=opt.getfloat("offer_high_percentile"),
            probability_bins=report.getint("probability_bins"),
            offer_bin_width=report.getfloat("offer_bin_width"),
        )

    @classmethod
    def load(cls, workspace) -> "PipelineConfig":
        path = Path(workspace) / "config.ini"
        if not path.exists():
            raise StageDependencyError(str(path), "run init first")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def save(self, workspace) -> Path:
        path = Path(workspace) / "config.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


# --- artifact helpers -------------------------------------------------------

def category_slug(category: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in category)


def write_meta(workspace, stage: str, config: PipelineConfig, artifacts: list[str]) -> None:
    path = Path(workspace) / stage / "meta.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps({"stage": stage, "config_hash": config.hash(), "artifacts": sorted(artifacts)}, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )


def require_stage(workspace, stage: str, config: PipelineConfig) -> None:
    path = Path(workspace) / stage / "meta.json"
    if not path.exists():
        raise StageDependencyError(f"{stage}/meta.json", f"run the {stage} stage first")
    meta = json.loads(path.read_text(encoding="utf-8"))
    if meta.get("config_hash") != config.hash():
        raise StageDependencyError(f"{stage}/meta.json", "artifact was built from a different config")


def require_artifact(workspace, relative: str) -> Path:
    path = Path(workspace) / relative
    if not path.exists():
        raise StageDependencyError(relative)
    return path


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def split_of_period(period: int, n_periods: int, spec: SplitSpec) -> str:
    if period >= n_periods - spec.test_periods:
        return "test"
    if period >= n_periods - spec.test_periods - spec.validation_periods:
        return "validation"
    return "train"


def histogram_rows(values, n_bins: int, low: float, high: float):
    """Equal-width bins; proportions over the total always sum to 1."""
    values = np.clip(np.asarray(list(values), dtype=np.float64), low, high)
    edges = np.linspace(low, high, n_bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("cannot build a histogram from zero values")
    return [
        [repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i]), repr(float(counts[i] / total))]
        for i in range(n_bins)
    ]


# --- stages -----------------------------------------------------------------

def run_ingest(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    records = parse_transactions(require_artifact_path(config.input_path, ws), schema=config.schema or None)
    if config.window_start and config.window_end:
        window = (date.fromisoformat(config.window_start), date.fromisoformat(config.window_end))
    else:
        window = derive_window(records)
    series = build_series(records, window, relevancy_periods=config.train_periods)
    if series and len(series[0]) < config.split.total:
        raise SizingError(
            f"window has {len(series[0])} periods, split needs at least {config.split.total}"
        )
    write_series_store(series, ws / "ingest" / "series.jsonl")
    write_meta(ws, "ingest", config, ["series.jsonl"])


def require_artifact_path(path_str: str, workspace: Path) -> Path:
    """Input paths may be absolute or relative to the workspace."""
    path = Path(path_str)
    if not path.is_absolute():
        candidate = workspace / path
        path = candidate if candidate.exists() else path
    if not path.exists():
        raise StageDependencyError(str(path_str), "input file not found")
    return path


def run_featurize(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "ingest", config)
    series = read_series_store(require_artifact(ws, "ingest/series.jsonl"))
    builder = FeatureBuilder(n_lags=config.n_lags, smoothing=config.smoothing, generators=tuple(config.generators))
    builder.fit(series, train_periods=config.train_periods)
    samples = builder.transform(series)
    write_samples(samples, ws / "featurize" / "samples.jsonl")
    (ws / "featurize" / "manifest.json").write_text(builder.manifest_.to_json() + "\n", encoding="utf-8")
    write_meta(ws, "featurize", config, ["samples.jsonl", "manifest.json"])


def _load_manifest(ws: Path):
    from .features import FeatureManifest

    return FeatureManifest.from_json(require_artifact(ws, "featurize/manifest.json").read_text(encoding="utf-8"))


def _samples_by_category(ws: Path):
    samples = read_samples(require_artifact(ws, "featurize/samples.jsonl"))
    by_category: dict[str, list] = {}
    for sample in samples:
        by_category.setdefault(sample.key.category, []).append(sample)
    return by_category


def _series_length(ws: Path) -> int:
    series = read_series_store(require_artifact(ws, "ingest/series.jsonl"))
    if not series:
        raise StageDependencyError("ingest/series.jsonl", "series store is empty")
    return len(series[0])


def run_train(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "featurize", config)
    manifest = _load_manifest(ws)
    by_category = _samples_by_category(ws)
    n_periods = _series_length(ws)
    spec = config.split
    artifacts = []
    for index, category in enumerate(sorted(by_category)):
        rows = by_category[category]
        train_rows = [s for s in rows if split_of_period(s.period_index, n_periods, spec) == "train"]
        val_rows = [s for s in rows if split_of_period(s.period_index, n_periods, spec) == "validation"]
        classifier = TemporalConvNetClassifier(
            kernel_size=config.kernel_size,
            dilations=tuple(config.dilations),
            channels=tuple(config.channels),
            fc_widths=tuple(config.fc_widths),
            optimizer=config.optimizer,
            learning_rate=config.learning_rate,
            weight_decay=config.weight_decay,
            scheduler=config.scheduler,
            base_lr=config.base_lr,
            max_lr=config.max_lr,
            plateau_factor=config.plateau_factor,
            plateau_patience=config.plateau_patience,
            min_lr=config.min_lr,
            swa_start_epoch=config.swa_start_epoch,
            swa_lr=config.swa_lr,
            n_checkpoints_to_average=config.n_checkpoints_to_average,
            epochs=config.epochs,
            batch_size=config.batch_size,
            seed=config.seed + index,
        )
        classifier.fit(train_rows, val_rows, manifest)
        slug = category_slug(category)
        save_network(
            ws / "train" / slug / "params.bin",
            classifier.params_,
            classifier.network_config_,
            extra={"category": category, "normalizer": classifier.normalizer_.to_dict()},
        )
        log_path = ws / "train" / slug / "log.jsonl"
        with log_path.open("w", encoding="utf-8") as handle:
            for entry in classifier.log_:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")
        artifacts += [f"{slug}/params.bin", f"{slug}/log.jsonl"]
    write_meta(ws, "train", config, artifacts)


def run_predict(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "featurize", config)
    require_stage(ws, "train", config)
    by_category = _samples_by_category(ws)
    n_periods = _series_length(ws)
    spec = config.split
    rows_out = []
    for category in sorted(by_category):
        slug = category_slug(category)
        params, net_config, extra = load_network(require_artifact(ws, f"train/{slug}/params.bin"))
        normalizer = Normalizer.from_dict(extra["normalizer"])
        targets = [
            s
            for s in by_category[category]
            if split_of_period(s.period_index, n_periods, spec) in ("validation", "test")
        ]
        batch = normalizer.apply(samples_to_batch(targets, with_labels=False))
        probabilities = forward(batch, params, net_config)
        for sample, prob in zip(targets, probabilities):
            rows_out.append(
                [
                    category,
                    sample.key.consumer_id,
                    sample.key.item_id,
                    sample.period_index,
                    split_of_period(sample.period_index, n_periods, spec),
                    repr(float(prob)),
                    sample.label,
                ]
            )
    write_csv(
        ws / "predict" / "predictions.csv",
        ["category", "consumer_id", "item_id", "period_index", "split", "probability", "label"],
        rows_out,
    )
    write_meta(ws, "predict", config, ["predictions.csv"])


def _predictions(ws: Path) -> list[dict[str, str]]:
    return read_csv(require_artifact(ws, "predict/predictions.csv"))


def run_thresholds(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "predict", config)
    grouped: dict[tuple[str, str], dict[str, list[float]]] = {}
    for row in _predictions(ws):
        if row["split"] != "validation":
            continue
        key = (row["category"], row["consumer_id"])
        bucket = grouped.setdefault(key, {"actuals": [], "probabilities": []})
        bucket["actuals"].append(float(row["label"]))
        bucket["probabilities"].append(float(row["probability"]))
    consumers = [
        ConsumerPredictions(
            consumer_id=consumer,
            actuals=np.asarray(values["actuals"]),
            probabilities=np.asarray(values["probabilities"]),
            category=category,
        )
        for (category, consumer), values in sorted(grouped.items())
    ]
    calibrator = ThresholdCalibrator().fit(consumers)
    rows = [
        [
            r.category,
            r.consumer_id,
            repr(r.cutoff),
            repr(r.f1),
            r.k,
            r.b,
            r.true_positives,
            int(r.degenerate),
            r.source,
        ]
        for r in calibrator.results_
    ]
    write_csv(
        ws / "thresholds" / "thresholds.csv",
        ["category", "consumer_id", "cutoff", "f1", "k", "b", "true_positives", "degenerate", "source"],
        rows,
    )
    write_meta(ws, "thresholds", config, ["thresholds.csv"])


def run_elasticity(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "ingest", config)
    require_stage(ws, "predict", config)
    series = read_series_store(require_artifact(ws, "ingest/series.jsonl"))
    n_periods = len(series[0]) if series else 0

    fit_points: dict[str, tuple[list[float], list[float]]] = {}
    key_index = {(s.key.consumer_id, s.key.item_id): s for s in series}
    for row in _predictions(ws):
        if int(row["label"]) != 1:
            continue
        s = key_index.get((row["consumer_id"], row["item_id"]))
        if s is None:
            continue
        offer = s.offers[int(row["period_index"])]
        xs, ys = fit_points.setdefault(row["category"], ([], []))
        xs.append(offer)
        ys.append(float(row["probability"]))

    fits = {}
    for category in sorted({s.key.category for s in series}):
        if category not in fit_points:
            raise FitError(f"category {category!r} has no (offer, probability) points to fit")
        xs, ys = fit_points[category]
        fits[category] = fit_sigmoid(xs, ys, category=category)

    fit_rows = [
        [c, repr(f.a), repr(f.b), repr(f.r_squared), f.n_points] for c, f in sorted(fits.items())
    ]
    write_csv(ws / "elasticity" / "fits.csv", ["category", "a", "b", "r_squared", "n_points"], fit_rows)

    record_rows = []
    skipped_rows = []
    for category in sorted(fits):
        pair_events = {
            s.key: s.offer_events for s in series if s.key.category == category
        }
        offers, skipped = compute_reference_offers(pair_events, n_periods)
        for record in elasticity_records(fits[category], offers):
            record_rows.append(
                [
                    category,
                    record.key.consumer_id,
                    record.key.item_id,
                    repr(record.k),
                    record.source,
                    repr(record.f_k),
                    repr(record.epsilon),
                ]
            )
        skipped_rows += [[category, k.consumer_id, k.item_id] for k in skipped]
    write_csv(
        ws / "elasticity" / "records.csv",
        ["category", "consumer_id", "item_id", "reference_offer", "source", "f_k", "epsilon"],
        record_rows,
    )
    write_csv(ws / "elasticity" / "skipped.csv", ["category", "consumer_id", "item_id"], skipped_rows)
    write_meta(ws, "elasticity", config, ["fits.csv", "records.csv", "skipped.csv"])


def _pair_price(series) -> float:
    for price in reversed(series.prices):
        if price > 0:
            return price
    return 0.0


def run_optimize(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    require_stage(ws, "ingest", config)
    require_stage(ws, "thresholds", config)
    require_stage(ws, "elasticity", config)
    series = read_series_store(require_artifact(ws, "ingest/series.jsonl"))
    n_periods = len(series[0]) if series else 0
    key_index = {(s.key.consumer_id, s.key.item_id): s for s in series}

    cutoffs = {
        (row["category"], row["consumer_id"]): float(row["cutoff"])
        for row in read_csv(require_artifact(ws, "thresholds/thresholds.csv"))
    }
    records = read_csv(require_artifact(ws, "elasticity/records.csv"))

    by_category: dict[str, list[dict[str, str]]] = {}
    for row in records:
        by_category.setdefault(row["category"], []).append(row)

    decision_rows = []
    summary_rows = []
    for category in sorted(by_category):
        category_series = [s for s in series if s.key.category == category]
        recent_offers = [o for s in category_series for p, o in s.offer_events if p >= n_periods - 1]
        all_offers = [o for s in category_series for _, o in s.offer_events]
        offer_range = offer_range_from_events(
            recent_offers, all_offers, low=config.offer_low_percentile, high=config.offer_high_percentile
        )
        category_prices = [p for s in category_series for p in s.prices if p > 0]
        fallback_price = float(np.mean(category_prices)) if category_prices else 1.0

        items = []
        for row in by_category[category]:
            s = key_index[(row["consumer_id"], row["item_id"])]
            price = _pair_price(s) or fallback_price
            cutoff = cutoffs.get((category, row["consumer_id"]), 0.5)
            cutoff = min(max(cutoff, PROBABILITY_EPS), 1.0 - PROBABILITY_EPS)
            items.append(
                OptimizationItem(
                    key=s.key,
                    price=price,
                    reference_offer=float(row["reference_offer"]),
                    probability=float(row["f_k"]),
                    epsilon=float(row["epsilon"]),
                    cutoff=cutoff,
                )
            )
        problem = OptimizationProblem(
            category=category,
            items=items,
            retention_floor=config.floor_for(category),
            offer_range=offer_range,
        )
        solution = solve_category(problem)
        for decision in solution.decisions:
            decision_rows.append(
                [
                    category,
                    decision.key.consumer_id,
                    decision.key.item_id,
                    repr(decision.eta),
                    repr(decision.new_offer),
                    repr(decision.adjusted_prob),
                    decision.indicator,
                    repr(decision.revenue),
                    int(decision.in_range),
                ]
            )
        summary_rows.append(
            [
                category,
                len(solution.decisions),
                repr(solution.total_revenue),
                repr(solution.retention),
                repr(solution.weighted_offer_percent),
                repr(problem.offer_range[0]),
                repr(problem.offer_range[1]),
                repr(problem.retention_floor),
            ]
        )
    write_csv(
        ws / "optimize" / "decisions.csv",
        ["category", "consumer_id", "item_id", "eta", "new_offer", "adjusted_prob", "indicator", "revenue", "in_range"],
        decision_rows,
    )
    write_csv(
        ws / "optimize" / "summary.csv",
        ["category", "n_items", "total_revenue", "retention", "weighted_offer_percent", "offer_low", "offer_high", "retention_floor"],
        summary_rows,
    )
    write_meta(ws, "optimize", config, ["decisions.csv", "summary.csv"])


def run_report(config: PipelineConfig, workspace) -> None:
    ws = Path(workspace)
    for stage in ("ingest", "featurize", "train", "predict", "thresholds", "elasticity", "optimize"):
        require_stage(ws, stage, config)
    predictions = _predictions(ws)
    thresholds = read_csv(require_artifact(ws, "thresholds/thresholds.csv"))
    records = read_csv(require_artifact(ws, "elasticity/records.csv"))
    fits = read_csv(require_artifact(ws, "elasticity/fits.csv"))
    summary = read_csv(require_artifact(ws, "optimize/summary.csv"))
    decisions = read_csv(require_artifact(ws, "optimize/decisions.csv"))

    cutoffs = {(r["category"], r["consumer_id"]): float(r["cutoff"]) for r in thresholds}
    categories = sorted({r["category"] for r in summary})

    table_rows = []
    report_json = []
    for category in categories:
        test_rows = [r for r in predictions if r["category"] == category and r["split"] == "test"]
        probs = np.array([float(r["probability"]) for r in test_rows])
        labels = np.array([float(r["label"]) for r in test_rows])
        bce = bce_loss(probs, labels) if len(test_rows) else 0.0

        by_consumer: dict[str, list[dict[str, str]]] = {}
        for r in test_rows:
            by_consumer.setdefault(r["consumer_id"], []).append(r)
        v_sum = k_sum = b_sum = 0
        for consumer, rows in sorted(by_consumer.items()):
            p = np.array([float(r["probability"]) for r in rows])
            y = np.array([float(r["label"]) for r in rows])
            cutoff = cutoffs.get((category, consumer), 0.5)
            decided = decide(p, cutoff)
            v_sum += int(decided @ y)
            k_sum += int(decided.sum())
            b_sum += int(y.sum())
        precision = v_sum / k_sum if k_sum else 0.0
        recall = v_sum / b_sum if b_sum else 0.0
        f1 = 2.0 * v_sum / (k_sum + b_sum) if (k_sum + b_sum) else 0.0

        epsilons = [float(r["epsilon"]) for r in records if r["category"] == category]
        avg_elasticity = float(np.mean(epsilons)) if epsilons else 0.0
        summary_row = next(r for r in summary if r["category"] == category)
        table_rows.append(
            [
                category,
                summary_row["n_items"],
                repr(bce),
                repr(precision),
                repr(recall),
                repr(f1),
                repr(avg_elasticity),
                summary_row["weighted_offer_percent"],
            ]
        )
        report_json.append(
            {
                "category": category,
                "sample_size": int(summary_row["n_items"]),
                "bce_loss": bce,
                "precision": precision,
                "recall": recall,
                "f1_score": f1,
                "avg_elasticity": avg_elasticity,
                "weighted_offer_percent": float(summary_row["weighted_offer_percent"]),
            }
        )

    artifacts = ["category_metrics.csv", "category_metrics.json", "hist_cutoffs.csv", "sigmoid_fits.csv"]
    write_csv(ws / "report" / "category_metrics.csv", CATEGORY_REPORT_COLUMNS, table_rows)
    (ws / "report" / "category_metrics.json").write_text(json.dumps(report_json, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    hist_header = ["bin_low", "bin_high", "count", "proportion"]
    val_rows = [r for r in predictions if r["split"] == "validation"]
    for label in (0, 1):
        values = [float(r["probability"]) for r in val_rows if int(r["label"]) == label]
        if values:
            write_csv(
                ws / "report" / f"hist_probability_label{label}.csv",
                hist_header,
                histogram_rows(values, config.probability_bins, 0.0, 1.0),
            )
            artifacts.append(f"hist_probability_label{label}.csv")
    write_csv(
        ws / "report" / "hist_cutoffs.csv",
        hist_header,
        histogram_rows([float(r["cutoff"]) for r in thresholds], config.probability_bins, 0.0, 1.0),
    )
    n_offer_bins = int(round(100.0 / config.offer_bin_width))
    for category in categories:
        offers = [float(r["new_offer"]) for r in decisions if r["category"] == category]
        if offers:
            name = f"hist_offers_{category_slug(category)}.csv"
            write_csv(ws / "report" / name, hist_header, histogram_rows(offers, n_offer_bins, 0.0, 100.0))
            artifacts.append(name)
    write_csv(
        ws / "report" / "sigmoid_fits.csv",
        ["category", "a", "b", "r_squared", "n_points"],
        [[r["category"], r["a"], r["b"], r["r_squared"], r["n_points"]] for r in fits],
    )
    write_meta(ws, "report", config, artifacts)


_STAGE_RUNNERS = {
    "ingest": run_ingest,
    "featurize": run_featurize,
    "train": run_train,
    "predict": run_predict,
    "thresholds": run_thresholds,
    "elasticity": run_elasticity,
    "optimize": run_optimize,
    "report": run_report,
}


def run_stage(stage: str, workspace, config: PipelineConfig | None = None) -> None:
    if stage not in _STAGE_RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if config is None:
        config = PipelineConfig.load(workspace)
    _STAGE_RUNNERS[stage](config, workspace)


def run_all(workspace, config: PipelineConfig | None = None) -> None:
    for stage in STAGES:
        run_stage(stage, workspace, config)
