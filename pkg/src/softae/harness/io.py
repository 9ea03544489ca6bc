"""On-disk formats.

Every float is written with 17 significant digits, which round-trips IEEE
doubles exactly, and every document has a fixed key order, so
save -> load -> save reproduces the same bytes.

dataset.jsonl
    Line 1: ``{"schema_version", "d_s", "d_a", "n_records", "episode_boundaries"}``.
    Then one ``{"s": [...], "a": [...], "sp": [...]}`` object per transition.
model.json
    ``{"schema_version", "dims", "architecture", "beta", "epsilon",
    "normalizer", "particles"}``; each particle lists its row-major weight
    matrices and biases layer by layer.
record.csv / heatmap.csv / results.csv / curve.csv / trace.csv
    Plain CSV with a fixed header.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from ..ensemble import EnsembleModel, Normalizer, TransitionDataset
from ..errors import ParseError, SchemaVersionError
from ..numerics import MlpParams
from .config import ExperimentConfig, config_from_dict, config_to_dict
from .evaluation import HeatmapGrid
from .experiment import EpisodeRow, ExperimentRecord

DATASET_SCHEMA = 1
MODEL_SCHEMA = 1
CONFIG_SCHEMA = 1
RECORD_SCHEMA = 1

RECORD_COLUMNS = ("episode", "exploration_return", "train_loss", "wall_ms")
HEATMAP_COLUMNS = ("bin_x", "bin_z", "count")
RESULTS_COLUMNS = ("task_id", "seed", "return")
TRACE_COLUMNS = ("t", "x", "z")
CURVE_COLUMNS = ("episode", "task_id", "return")


# ---- low-level encoding ----------------------------------------------------

def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj) -> str:
    """Compact JSON with 17-digit floats and insertion-ordered keys."""
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _loads(text: str, line: int = 1):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line + exc.lineno - 1, exc.colno) from None


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_text(path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def _check_version(doc, expected: int, what: str, line: int = 1):
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ParseError(f"{what}: missing schema_version", line)
    if doc["schema_version"] != expected:
        raise SchemaVersionError(f"{what}: schema_version {doc['schema_version']!r}, "
                                 f"this reader understands {expected}")


def _require(doc: dict, keys, what: str, line: int = 1):
    missing = [k for k in keys if k not in doc]
    if missing:
        raise ParseError(f"{what}: missing keys {missing}", line)


def _as_array(value, shape, what: str, line: int = 1) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: not a numeric array", line) from None
    if arr.shape != tuple(shape):
        raise ParseError(f"{what}: shape {arr.shape}, expected {tuple(shape)}", line)
    return arr


# ---- dataset ---------------------------------------------------------------

def dataset_to_text(data: TransitionDataset) -> str:
    header = {"schema_version": DATASET_SCHEMA, "d_s": data.d_s, "d_a": data.d_a,
              "n_records": len(data), "episode_boundaries": data.episode_boundaries}
    lines = [dumps(header)]
    for s, a, sp in zip(data.states, data.actions, data.next_states):
        lines.append(dumps({"s": s, "a": a, "sp": sp}))
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> TransitionDataset:
    lines = text.split("\n")
    if not text.endswith("\n"):
        raise ParseError("dataset: file does not end with a newline (truncated?)", len(lines),
                         len(lines[-1]))
    lines = lines[:-1]
    if not lines:
        raise ParseError("dataset: empty file", 1)
    header = _loads(lines[0], 1)
    _check_version(header, DATASET_SCHEMA, "dataset")
    _require(header, ("d_s", "d_a", "n_records", "episode_boundaries"), "dataset header")
    d_s, d_a, n = header["d_s"], header["d_a"], header["n_records"]
    if len(lines) - 1 != n:
        raise ParseError(f"dataset: header announces {n} records, found {len(lines) - 1}",
                         len(lines))
    S, A, SP = np.zeros((n, d_s)), np.zeros((n, d_a)), np.zeros((n, d_s))
    for i, raw in enumerate(lines[1:]):
        ln = i + 2
        rec = _loads(raw, ln)
        if not isinstance(rec, dict):
            raise ParseError("dataset: record is not an object", ln)
        _require(rec, ("s", "a", "sp"), "dataset record", ln)
        S[i] = _as_array(rec["s"], (d_s,), "s", ln)
        A[i] = _as_array(rec["a"], (d_a,), "a", ln)
        SP[i] = _as_array(rec["sp"], (d_s,), "sp", ln)
    try:
        return TransitionDataset(d_s, d_a, S, A, SP, header["episode_boundaries"])
    except ValueError as exc:
        raise ParseError(f"dataset: {exc}", 1) from None


def save_dataset(data: TransitionDataset, path):
    _write_text(path, dataset_to_text(data))


def load_dataset(path) -> TransitionDataset:
    return dataset_from_text(_read_text(path))


# ---- model -----------------------------------------------------------------

def model_to_dict(model: EnsembleModel) -> dict:
    nz = model.normalizer
    p = model.particles
    particles = [{"weights": [w[k] for w in p.weights], "biases": [b[k] for b in p.biases]}
                 for k in range(model.size)]
    return {
        "schema_version": MODEL_SCHEMA,
        "dims": {"d_s": model.d_s, "d_a": model.d_a},
        "architecture": {"layer_sizes": p.layer_sizes, "activation": p.activation,
                         "ensemble_size": model.size},
        "beta": model.beta,
        "epsilon": model.aleatoric_std,
        "normalizer": {"input_mean": nz.input_mean, "input_std": nz.input_std,
                       "target_mean": nz.target_mean, "target_std": nz.target_std},
        "particles": particles,
    }


def model_from_dict(doc) -> EnsembleModel:
    _check_version(doc, MODEL_SCHEMA, "model")
    _require(doc, ("dims", "architecture", "beta", "epsilon", "normalizer", "particles"), "model")
    try:
        d_s, d_a = int(doc["dims"]["d_s"]), int(doc["dims"]["d_a"])
        arch = doc["architecture"]
        sizes = [int(x) for x in arch["layer_sizes"]]
        activation = arch["activation"]
        L = int(arch["ensemble_size"])
        nzd = doc["normalizer"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"model: bad header field {exc}") from None
    if sizes[0] != d_s + d_a or sizes[-1] != d_s:
        raise ParseError("model: layer sizes do not match dims")
    if len(doc["particles"]) != L:
        raise ParseError(f"model: expected {L} particles, found {len(doc['particles'])}")
    n_layers = len(sizes) - 1
    weights = [np.zeros((L, sizes[i + 1], sizes[i])) for i in range(n_layers)]
    biases = [np.zeros((L, sizes[i + 1])) for i in range(n_layers)]
    for k, part in enumerate(doc["particles"]):
        if not isinstance(part, dict) or len(part.get("weights", ())) != n_layers \
                or len(part.get("biases", ())) != n_layers:
            raise ParseError(f"model: particle {k} does not have {n_layers} layers")
        for i in range(n_layers):
            weights[i][k] = _as_array(part["weights"][i], weights[i].shape[1:], f"particle {k} W{i}")
            biases[i][k] = _as_array(part["biases"][i], biases[i].shape[1:], f"particle {k} b{i}")
    d_in = d_s + d_a
    nz = Normalizer(_as_array(nzd.get("input_mean"), (d_in,), "input_mean"),
                    _as_array(nzd.get("input_std"), (d_in,), "input_std"),
                    _as_array(nzd.get("target_mean"), (d_s,), "target_mean"),
                    _as_array(nzd.get("target_std"), (d_s,), "target_std"))
    try:
        params = MlpParams(weights, biases, activation)
    except ValueError as exc:
        raise ParseError(f"model: {exc}") from None
    return EnsembleModel(params, nz, d_s, d_a, float(doc["beta"]), float(doc["epsilon"]))


def save_model(model: EnsembleModel, path):
    _write_text(path, dumps(model_to_dict(model)) + "\n")


def load_model(path) -> EnsembleModel:
    return model_from_dict(_loads(_read_text(path)))


# ---- config ----------------------------------------------------------------

def config_to_text(config: ExperimentConfig) -> str:
    doc = {"schema_version": CONFIG_SCHEMA, **config_to_dict(config)}
    # hand-edited configs are the norm here, so keep the stdlib's shortest exact floats
    return json.dumps(doc, indent=2) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    doc = _loads(text)
    if isinstance(doc, dict) and "schema_version" in doc:
        _check_version(doc, CONFIG_SCHEMA, "config")
        doc = {k: v for k, v in doc.items() if k != "schema_version"}
    return config_from_dict(doc)


def save_config(config: ExperimentConfig, path):
    _write_text(path, config_to_text(config))


def load_config(path) -> ExperimentConfig:
    return config_from_text(_read_text(path))


# ---- CSV tables --------------------------------------------------------------

def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _csv_rows(text: str, header, what: str) -> list[list[str]]:
    if text and not text.endswith("\n"):
        raise ParseError(f"{what}: file does not end with a newline (truncated?)",
                         text.count("\n") + 1)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != tuple(header):
        raise ParseError(f"{what}: expected header {','.join(header)}", 1)
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{what}: expected {len(header)} fields, got {len(r)}", i)
    return rows[1:]


def _num(cell: str, kind, what: str, line: int, col: int):
    try:
        return kind(cell)
    except ValueError:
        raise ParseError(f"{what}: bad value {cell!r}", line, col) from None


def record_to_csv(record: ExperimentRecord) -> str:
    return csv_text(RECORD_COLUMNS, [(r.episode, float(r.exploration_return), float(r.train_loss),
                                       float(r.wall_ms)) for r in record.rows])


def rows_from_csv(text: str) -> list[EpisodeRow]:
    out = []
    for i, r in enumerate(_csv_rows(text, RECORD_COLUMNS, "record"), start=2):
        out.append(EpisodeRow(_num(r[0], int, "record", i, 1), _num(r[1], float, "record", i, 2),
                              _num(r[2], float, "record", i, 3), _num(r[3], float, "record", i, 4)))
    return out


def record_to_dict(record: ExperimentRecord) -> dict:
    return {
        "schema_version": RECORD_SCHEMA,
        "method": record.method,
        "seed": record.seed,
        "rows": [[r.episode, float(r.exploration_return), float(r.train_loss), float(r.wall_ms)]
                 for r in record.rows],
        "normalized_mse": record.normalized_mse,
        "task_returns": {k: float(v) for k, v in sorted(record.task_returns.items())},
        "coverage_entropy": record.coverage_entropy,
        "failed_episode": record.failed_episode,
        "failed_phase": record.failed_phase,
        "task_curve": [[int(e), t, float(r)] for e, t, r in record.task_curve],
    }


def record_from_dict(doc) -> ExperimentRecord:
    _check_version(doc, RECORD_SCHEMA, "record")
    _require(doc, ("method", "seed", "rows", "normalized_mse", "task_returns", "coverage_entropy",
                   "failed_episode", "failed_phase"), "record")
    rows = [EpisodeRow(int(e), float(x), float(l), float(w)) for e, x, l, w in doc["rows"]]
    opt = lambda v: None if v is None else float(v)  # noqa: E731
    curve = [(int(e), str(t), float(r)) for e, t, r in doc.get("task_curve", [])]
    return ExperimentRecord(doc["method"], int(doc["seed"]), rows, opt(doc["normalized_mse"]),
                            {k: float(v) for k, v in doc["task_returns"].items()},
                            opt(doc["coverage_entropy"]), doc["failed_episode"], doc["failed_phase"],
                            curve)


def save_record(record: ExperimentRecord, out_dir):
    """Write ``record.csv`` (per-episode rows) and ``record.json`` (everything)."""
    out_dir = Path(out_dir)
    _write_text(out_dir / "record.csv", record_to_csv(record))
    _write_text(out_dir / "record.json", dumps(record_to_dict(record)) + "\n")


def load_record(path) -> ExperimentRecord:
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    return record_from_dict(_loads(_read_text(path)))


def heatmap_to_csv(grid: HeatmapGrid) -> str:
    n = grid.bins
    return csv_text(HEATMAP_COLUMNS, [(i, j, int(grid.counts[i, j])) for i in range(n)
                                       for j in range(n)])


def heatmap_from_csv(text: str, x_bounds, z_bounds) -> HeatmapGrid:
    rows = _csv_rows(text, HEATMAP_COLUMNS, "heatmap")
    cells = [tuple(_num(c, int, "heatmap", i, k + 1) for k, c in enumerate(r))
             for i, r in enumerate(rows, start=2)]
    bins = int(round(math.sqrt(len(cells))))
    if bins * bins != len(cells):
        raise ParseError("heatmap: cell count is not a square", len(cells) + 1)
    counts = np.zeros((bins, bins), dtype=np.int64)
    for i, j, c in cells:
        counts[i, j] = c
    return HeatmapGrid(tuple(x_bounds), tuple(z_bounds), bins, counts)


def curve_to_csv(curve) -> str:
    """Zero-shot return curve as ``episode, task_id, return`` rows."""
    return csv_text(CURVE_COLUMNS, [(int(e), t, float(r)) for e, t, r in curve])


def results_to_csv(rows) -> str:
    """``rows``: iterable of ``(task_id, seed, return)``."""
    return csv_text(RESULTS_COLUMNS, [(t, int(s), float(r)) for t, s, r in rows])


def results_from_csv(text: str) -> list[tuple]:
    return [(r[0], _num(r[1], int, "results", i, 2), _num(r[2], float, "results", i, 3))
            for i, r in enumerate(_csv_rows(text, RESULTS_COLUMNS, "results"), start=2)]


def trace_to_csv(tips, dt: float) -> str:
    """Tip trajectory as ``t, x, z`` rows."""
    tips = np.asarray(tips, dtype=np.float64).reshape(-1, 2)
    return csv_text(TRACE_COLUMNS, [(float((k + 1) * dt), float(x), float(z))
                                     for k, (x, z) in enumerate(tips)])


def write_csv(path, text: str):
    _write_text(path, text)


def read_text(path) -> str:
    return _read_text(path)
