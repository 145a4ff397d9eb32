"""Per-scale MAE, error distributions and naive baselines, reported in kW.

Errors are signed ``prediction - target``. Quantiles use linear interpolation
between order statistics (Hyndman-Fan type 7).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnitError
from .model import MultipofoModel, encode, predict

SCHEMA_VERSION = 1
KW = "kW"
NORMALIZED = "normalized"
CSV_FIELDS = ("group", "scale", "method", "count", "mae", "min", "q1", "median", "q3", "max", "mean", "unit")
SCHEMA_PATH = Path(__file__).with_name("schemas") / "metrics_report.schema.json"


def mae(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("MAE of an empty set is undefined")
    return float(np.mean(np.abs(preds - targets)))


def error_distribution(errors) -> dict[str, float]:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("error distribution of an empty set is undefined")
    q = np.quantile(e, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return {
        "min": float(q[0]),
        "q1": float(q[1]),
        "median": float(q[2]),
        "q3": float(q[3]),
        "max": float(q[4]),
        "mean": float(e.mean()),
    }


@dataclass
class PredictionSet:
    """Point forecasts with their targets; ``unit`` travels with the numbers."""

    circuit_ids: np.ndarray
    scales: np.ndarray
    preds: np.ndarray
    targets: np.ndarray
    unit: str = KW


@dataclass
class MetricRow:
    group: str
    scale: str
    method: str
    count: int
    mae: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    unit: str = KW


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def row(self, group: str, scale: str, method: str) -> MetricRow:
        for r in self.rows:
            if (r.group, r.scale, r.method) == (group, scale, method):
                return r
        raise KeyError((group, scale, method))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "metadata": dict(sorted(self.metadata.items())),
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {d.get('schema_version')!r}")
        return cls([MetricRow(**r) for r in d["rows"]], dict(d["metadata"]))


def to_kw(samples, values, scalers) -> np.ndarray:
    """Inverse-scale normalized values row by row with each circuit's scaler."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for cid in np.unique(samples.circuit_ids):
        rows = samples.circuit_ids == cid
        out[rows] = scalers[cid].inverse(values[rows])
    return out


def _scale_labels(samples) -> np.ndarray:
    return np.array([samples.scale_names[i] for i in samples.scale_index], dtype=object)


def model_predictions(model: MultipofoModel, samples, scalers=None) -> PredictionSet:
    scalers = model.scalers if scalers is None else scalers
    z = encode(model, samples.embedded)
    yhat = predict(model, z, samples.scale_index)[:, 0]
    return PredictionSet(
        samples.circuit_ids,
        _scale_labels(samples),
        to_kw(samples, yhat, scalers),
        to_kw(samples, samples.targets, scalers),
    )


def naive_baselines(train_samples, test_samples, scalers) -> dict[str, PredictionSet]:
    """Persistence (previous window's peak) and train-mean baselines on the test samples.

    The train-mean baseline predicts, for each (circuit, scale), the mean target
    of that circuit's training samples at that scale.
    """
    if len(test_samples) == 0:
        raise ValueError("no test samples")
    targets = to_kw(test_samples, test_samples.targets, scalers)
    labels = _scale_labels(test_samples)
    persistence = to_kw(test_samples, test_samples.last_period_max, scalers)

    train_labels = _scale_labels(train_samples)
    train_kw = to_kw(train_samples, train_samples.targets, scalers)
    train_mean = np.empty(len(test_samples))
    for cid in np.unique(test_samples.circuit_ids):
        for scale in np.unique(labels):
            rows = (test_samples.circuit_ids == cid) & (labels == scale)
            src = (train_samples.circuit_ids == cid) & (train_labels == scale)
            if not np.any(rows):
                continue
            if not np.any(src):
                raise ValueError(f"no training samples for circuit {cid!r} at scale {scale!r}")
            train_mean[rows] = train_kw[src].mean()

    cids = test_samples.circuit_ids
    return {
        "persistence": PredictionSet(cids, labels, persistence, targets),
        "train_mean": PredictionSet(cids, labels, train_mean, targets),
    }


def resolve_groups(circuit_ids, groups: dict | None) -> dict[str, list[str]]:
    """Map group name to circuit ids; without a mapping every circuit is its own group."""
    present = sorted({str(c) for c in circuit_ids})
    if not groups:
        return {cid: [cid] for cid in present}
    return {name: [str(c) for c in members] for name, members in groups.items()}


def build_report(predictions: dict[str, PredictionSet], groups: dict | None = None, metadata=None) -> MetricsReport:
    rows = []
    for method, ps in predictions.items():
        if ps.unit != KW:
            raise UnitError(f"{method}: values are in {ps.unit!r}, reports must be in kW")
        scale_order = list(dict.fromkeys(ps.scales))
        for group, members in resolve_groups(ps.circuit_ids, groups).items():
            in_group = np.isin(ps.circuit_ids.astype(str), members)
            for scale in scale_order:
                sel = in_group & (ps.scales == scale)
                if not np.any(sel):
                    continue
                err = ps.preds[sel] - ps.targets[sel]
                rows.append(
                    MetricRow(
                        group,
                        str(scale),
                        method,
                        int(sel.sum()),
                        mae(ps.preds[sel], ps.targets[sel]),
                        **error_distribution(err),
                    )
                )
    return MetricsReport(rows, dict(metadata or {}))


def evaluate(model: MultipofoModel, train_samples, test_samples, groups=None, metadata=None) -> MetricsReport:
    preds = {"multipofo": model_predictions(model, test_samples)}
    preds.update(naive_baselines(train_samples, test_samples, model.scalers))
    return build_report(preds, groups, metadata)


def export_report(report: MetricsReport, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            fh.write(f"# schema_version={SCHEMA_VERSION}\n")
            for key, value in sorted(report.metadata.items()):
                fh.write(f"# {key}={json.dumps(value)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in report.rows:
                d = asdict(r)
                writer.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in CSV_FIELDS])
    else:
        raise ValueError(f"unknown report format {fmt!r}; use json or csv")
    return path


def read_report(path, fmt: str | None = None) -> MetricsReport:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "json":
        return MetricsReport.from_dict(json.loads(path.read_text()))
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}; use json or csv")
    metadata, lines = {}, []
    with path.open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key != "schema_version":
                    metadata[key] = json.loads(value)
            else:
                lines.append(line)
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(
            MetricRow(
                rec["group"],
                rec["scale"],
                rec["method"],
                int(rec["count"]),
                *(float(rec[k]) for k in ("mae", "min", "q1", "median", "q3", "max", "mean")),
                rec["unit"],
            )
        )
    return MetricsReport(rows, metadata)
