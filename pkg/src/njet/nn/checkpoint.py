"""JSON checkpoints tagged with the ``NJET1`` magic string."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from njet.nn import layers as L

MAGIC = "NJET1"


class CheckpointError(ValueError):
    pass


def _layer_record(layer, index_of):
    rec = {"type": layer.kind, "config": layer.config()}
    if isinstance(layer, L.SafeSubsample):
        rec["config"]["source"] = index_of[id(layer.source)]
    state = layer.state()
    if state:
        rec["state"] = {k: np.asarray(v).tolist() for k, v in state.items()}
    return rec


def to_dict(model: L.Sequential, meta: dict | None = None) -> dict:
    index_of = {id(l): i for i, l in enumerate(model.layers)}
    return {
        "magic": MAGIC,
        "name": model.name,
        "dtype": str(model.dtype),
        "meta": meta or {},
        "layers": [_layer_record(l, index_of) for l in model.layers],
    }


def save(model: L.Sequential, path, meta: dict | None = None):
    path = Path(path)
    path.write_text(json.dumps(to_dict(model, meta)))


def _build(rec, built, dtype):
    kind, cfg = rec["type"], dict(rec.get("config", {}))
    if kind == "njet":
        return L.NJetConv2d(cfg["in_channels"], cfg["out_channels"], cfg["order"],
                            cfg["extent_k"], dtype=dtype)
    if kind == "conv":
        return L.Conv2d(cfg["in_channels"], cfg["out_channels"], cfg["size"], dtype=dtype,
                        padding=cfg.get("padding", "same"))
    if kind == "batchnorm":
        return L.BatchNorm2d(cfg["channels"], cfg["momentum"], cfg["eps"], dtype=dtype)
    if kind == "relu":
        return L.ReLU()
    if kind == "maxpool":
        return L.MaxPool2d(cfg["window"], cfg["stride"])
    if kind == "global_avgpool":
        return L.GlobalAvgPool()
    if kind == "dense":
        return L.Dense(cfg["in_features"], cfg["out_features"], dtype=dtype)
    if kind == "safe_subsample":
        return L.SafeSubsample(built[cfg["source"]], cfg["r"])
    raise CheckpointError(f"unknown layer type {kind!r}")


def from_dict(doc: dict) -> tuple[L.Sequential, dict]:
    if doc.get("magic") != MAGIC:
        raise CheckpointError(f"not an {MAGIC} checkpoint (magic={doc.get('magic')!r})")
    dtype = np.dtype(doc.get("dtype", "float32"))
    built = []
    for rec in doc["layers"]:
        layer = _build(rec, built, dtype)
        for k, v in rec.get("state", {}).items():
            if k in ("running_mean", "running_var"):
                setattr(layer, k, np.asarray(v, dtype=np.float64))
            else:
                ref = layer.params[k]
                layer.params[k] = np.asarray(v, dtype=ref.dtype).reshape(ref.shape)
        layer.zero_grad()
        built.append(layer)
    return L.Sequential(built, name=doc.get("name", "model")), doc.get("meta", {})


def load(path) -> tuple[L.Sequential, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON ({e})") from e
    return from_dict(doc)
