"""JSON persistence for checkpoints and datasets.

Floats are written by :mod:`json`, which uses ``repr`` (the shortest text that
parses back to the same double), so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import CompatibilityError, FormatError, LabError
from ..model import ModelSpec
from ..params import ParamVector
from ..tasks import Dataset
from ..trainer import Checkpoint, TrainConfig

CHECKPOINT_VERSION = 1
DATASET_VERSION = 1


def _write_json(path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, allow_nan=False, indent=1), encoding="utf-8")
    tmp.replace(path)


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("<document>", f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("<document>", "top level must be an object")
    return doc


def _field(doc: dict, name: str, kind=None) -> Any:
    if name not in doc:
        raise FormatError(name, "missing")
    value = doc[name]
    if kind is not None and not isinstance(value, kind):
        raise FormatError(name, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _check_version(doc: dict, expected: int) -> None:
    version = _field(doc, "format_version")
    if isinstance(version, bool) or not isinstance(version, int):
        raise FormatError("format_version", "must be an integer")
    if version != expected:
        raise FormatError("format_version", f"unsupported version {version} (expected {expected})")


def _float_array(doc: dict, name: str, expected: int) -> np.ndarray:
    raw = _field(doc, name, list)
    if len(raw) != expected:
        raise FormatError(name, f"expected {expected} numbers, found {len(raw)} (truncated?)")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise FormatError(name, "entries must be numbers")
    arr = np.array(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(name, "contains non-finite values")
    return arr


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "spec": ckpt.spec.to_dict(),
        "layout": [[name, list(shape)] for name, shape in ckpt.params.layout],
        "seed": ckpt.seed,
        "provenance": ckpt.provenance,
        "lineage": ckpt.lineage,
        "train_config": None if ckpt.train_config is None else ckpt.train_config.to_dict(),
        "values": [float(v) for v in ckpt.params.values],
    }


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    _check_version(doc, CHECKPOINT_VERSION)
    try:
        spec = ModelSpec.from_dict(_field(doc, "spec", dict))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("spec", str(exc)) from None
    raw_layout = _field(doc, "layout", list)
    try:
        layout = tuple((str(name), tuple(int(s) for s in shape)) for name, shape in raw_layout)
    except (TypeError, ValueError):
        raise FormatError("layout", "entries must be [name, [dims...]] pairs") from None
    if layout != spec.layout():
        raise CompatibilityError("stored layout does not match the stored model spec")
    expected = sum(math.prod(shape) for _, shape in layout)
    values = _float_array(doc, "values", expected)
    seed = _field(doc, "seed", int)
    provenance = _field(doc, "provenance", str)
    lineage = _field(doc, "lineage", str)
    tc = _field(doc, "train_config")
    try:
        train_config = None if tc is None else TrainConfig.from_dict(tc)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("train_config", str(exc)) from None
    try:
        return Checkpoint(spec, ParamVector(values, layout), provenance, lineage, train_config, seed)
    except CompatibilityError:
        raise
    except LabError as exc:
        raise FormatError("provenance", str(exc)) from None


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    _write_json(path, checkpoint_to_dict(ckpt))


def load_checkpoint(path, spec: ModelSpec | None = None) -> Checkpoint:
    """Load a checkpoint; with ``spec``, also require it to match."""
    ckpt = checkpoint_from_dict(_read_json(path))
    if spec is not None and ckpt.spec != spec:
        raise CompatibilityError(f"checkpoint spec {ckpt.spec} does not match {spec}")
    return ckpt


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format_version": DATASET_VERSION,
        "dim": ds.dim,
        "num_classes": ds.num_classes,
        "inputs": [float(v) for v in ds.inputs.reshape(-1)],
        "labels": [int(v) for v in ds.labels],
    }


def dataset_from_dict(doc: dict) -> Dataset:
    _check_version(doc, DATASET_VERSION)
    dim = _field(doc, "dim", int)
    num_classes = _field(doc, "num_classes", int)
    labels = _field(doc, "labels", list)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in labels):
        raise FormatError("labels", "entries must be integers")
    inputs = _float_array(doc, "inputs", dim * len(labels))
    try:
        return Dataset(inputs.reshape(len(labels), dim), np.array(labels, dtype=np.int64), num_classes)
    except LabError as exc:
        raise FormatError("labels", str(exc)) from None


def save_dataset(ds: Dataset, path) -> None:
    _write_json(path, dataset_to_dict(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_dict(_read_json(path))
