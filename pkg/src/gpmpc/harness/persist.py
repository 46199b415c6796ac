"""JSON model documents, dataset CSVs and the artifact manifest.

A GP document stores hyperparameters, the normalization offset and the raw
training data; factorizations are recomputed on load. Sparse documents
add an ``inducing`` block. Every document carries ``schema_version``;
loading a newer version fails.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from gpmpc.errors import ConfigError
from gpmpc.gp.core import GpDataset, GpHyperparams, GpModel, gp_fit
from gpmpc.gp.sparse import SparseGpModel, fic_fit
from gpmpc.platoon.hv import ArxModel

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


def _check_version(doc: dict, what: str):
    v = doc.get("schema_version")
    if not isinstance(v, int):
        raise ConfigError([f"{what}: missing integer schema_version"])
    if v > SCHEMA_VERSION:
        raise ConfigError([f"{what}: schema_version {v} is newer than supported ({SCHEMA_VERSION})"])


def gp_to_doc(model) -> dict:
    h = model.hyperparams
    doc = {
        "schema_version": SCHEMA_VERSION,
        "type": "fic" if isinstance(model, SparseGpModel) else "exact",
        "hyperparams": {"signal_std": h.signal_std, "length_scales": h.length_scales.tolist(), "noise_std": h.noise_std},
        "offset": model.offset,
        "dataset": None,
    }
    if model.dataset is not None:
        doc["dataset"] = {"X": model.dataset.X.tolist(), "y": model.dataset.y.tolist()}
    if isinstance(model, SparseGpModel):
        doc["inducing"] = model.inducing.tolist()
    return doc


def gp_from_doc(doc: dict):
    _check_version(doc, "GP document")
    hp = doc["hyperparams"]
    h = GpHyperparams(hp["signal_std"], np.asarray(hp["length_scales"], dtype=float), hp["noise_std"])
    offset = float(doc.get("offset", 0.0))
    ds = doc.get("dataset")
    if doc["type"] == "exact":
        if ds is None:
            return GpModel.prior(h, offset)
        return gp_fit(GpDataset(np.asarray(ds["X"], dtype=float), ds["y"]), h, offset)
    if doc["type"] == "fic":
        data = GpDataset(np.asarray(ds["X"], dtype=float), ds["y"])
        return fic_fit(data, h, np.asarray(doc["inducing"], dtype=float), offset)
    raise ConfigError([f"GP document: unknown type {doc['type']!r}"])


def models_to_doc(application: str, bundle: dict) -> dict:
    """``bundle`` maps names to GP models, lists of GP models or an :class:`ArxModel`."""
    out = {"schema_version": SCHEMA_VERSION, "application": application, "models": {}}
    for name, obj in bundle.items():
        if obj is None:
            out["models"][name] = None
        elif isinstance(obj, ArxModel):
            out["models"][name] = {"type": "arx", "c": obj.c.tolist(), "b": obj.b.tolist()}
        elif isinstance(obj, (list, tuple)):
            out["models"][name] = {"type": "list", "items": [gp_to_doc(g) for g in obj]}
        else:
            out["models"][name] = gp_to_doc(obj)
    return out


def models_from_doc(doc: dict) -> dict:
    _check_version(doc, "model bundle")
    out = {}
    for name, m in doc["models"].items():
        if m is None:
            out[name] = None
        elif m.get("type") == "arx":
            out[name] = ArxModel(m["c"], m["b"])
        elif m.get("type") == "list":
            out[name] = tuple(gp_from_doc(g) for g in m["items"])
        else:
            out[name] = gp_from_doc(m)
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def save_models(path, application: str, bundle: dict):
    Path(path).write_text(dump_json(models_to_doc(application, bundle)), encoding="utf-8")


def load_models(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "models.json"
    return models_from_doc(json.loads(p.read_text(encoding="utf-8")))


def write_dataset_csv(path, data: GpDataset):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(data.dim)] + ["y"])
    for x, y in zip(data.X, data.y):
        w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_dataset_csv(path) -> GpDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header != [f"x{i}" for i in range(d)] + ["y"]:
        raise ValueError(f"{path}: header must be x0..x{{d-1}},y")
    arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if arr.size == 0:
        raise ValueError(f"{path}: no data rows")
    return GpDataset(arr[:, :d], arr[:, d])


def format_value(v) -> str:
    v = float(v)
    return "nan" if v != v else repr(v)


def columns_to_csv(columns: dict) -> str:
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    cols = [np.asarray(columns[k], dtype=float) for k in names]
    for i in range(n):
        w.writerow([format_value(c[i]) for c in cols])
    return buf.getvalue()


def csv_to_columns(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(names))
    return {n: data[:, i] for i, n in enumerate(names)}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir) -> Path:
    """List every file under ``out_dir`` (except the manifest) with its size and SHA-256."""
    out = Path(out_dir)
    items = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p != out / MANIFEST:
            items.append({"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size, "sha256": sha256_file(p)})
    mp = out / MANIFEST
    mp.write_text(dump_json({"schema_version": SCHEMA_VERSION, "artifacts": items}), encoding="utf-8")
    return mp
