"""Checkpoint directories: ``manifest.json`` plus a raw little-endian float64 blob.

Each tensor entry records name, shape, byte offset, byte length and a CRC-32
of its bytes. Loading is strict: unknown or missing tensors and checksum
mismatches are errors.
"""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .adapter import expert_weights, merged_weight
from .config import Config
from .errors import ContractError, IntegrityError, ManifestError, ParameterError
from .model import ToyBackbone, backbone_forward, build_model
from .router import RoutingStats
from .train import TrainState, init_state

FORMAT = "ept-checkpoint"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "tensors.bin"


def _write(path, tensors: dict[str, np.ndarray], header: dict):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(path / BLOB, "wb") as fh:
        for name in sorted(tensors):
            raw = np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(np.shape(tensors[name])), "offset": offset,
                            "nbytes": len(raw), "crc32": zlib.crc32(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "format_version": FORMAT_VERSION, **header, "tensors": entries}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest in {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest in {path} is not valid JSON") from exc
    if manifest.get("format") != FORMAT or manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestError(f"unsupported checkpoint format {manifest.get('format')!r} "
                            f"version {manifest.get('format_version')!r}")
    blob = (path / BLOB).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        name = e["name"]
        if name in tensors:
            raise ManifestError(f"tensor {name!r} listed twice")
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"] or e["nbytes"] != 8 * int(np.prod(e["shape"], dtype=np.int64)):
            raise IntegrityError(f"tensor {name!r} is truncated or mis-sized")
        if zlib.crc32(raw) != e["crc32"]:
            raise IntegrityError(f"checksum mismatch for tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return manifest, tensors


def _state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    out = {f"param/{k}": p.data for k, p in state.model.trainable().items()}
    out.update({f"frozen/{k}": t.data for k, t in state.model.frozen_tensors().items()})
    for k in state.optimizer.m:
        out[f"opt.m/{k}"] = state.optimizer.m[k]
        out[f"opt.v/{k}"] = state.optimizer.v[k]
    return out


def save_checkpoint(state: TrainState, path):
    header = {
        "kind": "train",
        "config": state.config.to_dict(),
        "state": {
            "step": state.step,
            "optimizer_step": state.optimizer.step,
            "rng": state.rng.bit_generator.state,
            "stats": {k: s.to_dict() for k, s in state.stats.items()},
            "log": state.log,
        },
    }
    _write(path, _state_tensors(state), header)


def load_checkpoint(path) -> TrainState:
    manifest, tensors = _read(path)
    if manifest.get("kind") != "train":
        raise ManifestError(f"{path} is not a training checkpoint (kind={manifest.get('kind')!r})")
    config = Config.from_dict(manifest["config"])
    state = init_state(config)
    meta = manifest["state"]
    params = state.model.trainable()
    frozen = state.model.frozen_tensors()
    expected = {f"param/{k}" for k in params} | {f"frozen/{k}" for k in frozen}
    if meta["optimizer_step"] > 0:
        expected |= {f"opt.m/{k}" for k in params} | {f"opt.v/{k}" for k in params}
    extra, missing = set(tensors) - expected, expected - set(tensors)
    if extra:
        raise ManifestError(f"unknown tensors in manifest: {sorted(extra)}")
    if missing:
        raise ManifestError(f"tensors missing from manifest: {sorted(missing)}")
    for k, p in params.items():
        _assign(p.data, tensors[f"param/{k}"], k)
    for k, t in frozen.items():
        _assign(t.data, tensors[f"frozen/{k}"], k)
    if meta["optimizer_step"] > 0:
        state.optimizer.m = {k: tensors[f"opt.m/{k}"].copy() for k in params}
        state.optimizer.v = {k: tensors[f"opt.v/{k}"].copy() for k in params}
    state.optimizer.step = meta["optimizer_step"]
    state.step = meta["step"]
    state.rng.bit_generator.state = meta["rng"]
    state.stats = {k: RoutingStats.from_dict(v) for k, v in meta["stats"].items()}
    state.log = list(meta["log"])
    return state


def _assign(dst: np.ndarray, src: np.ndarray, name: str):
    if dst.shape != src.shape:
        raise ManifestError(f"tensor {name!r} has shape {src.shape}, config expects {dst.shape}")
    dst[...] = src


# ------------------------------------------------------------ merged export


def policy_gates(state: TrainState, policy: str, gates=None) -> dict[str, dict]:
    """Gate vector per layer and per merge key under ``policy``.

    ``per_task_mean`` yields one key per task (``task{t}``) from the mean gate
    mass recorded while training; ``fixed`` applies ``gates`` to every layer.
    """
    n = state.config.n_experts
    if policy == "fixed":
        if gates is None:
            raise ContractError("fixed policy needs a gate vector")
        g = np.asarray(gates, dtype=np.float64)
        if g.shape != (n,):
            raise ParameterError(f"expected {n} gates, got {g.shape}")
        return {layer: {"all": g} for layer in state.model.adapters}
    if policy == "per_task_mean":
        out = {}
        for layer in state.model.adapters:
            stats = state.stats.get(layer)
            if stats is None or not stats.tokens.any():
                raise ContractError(f"no routing statistics recorded for layer {layer}")
            out[layer] = {f"task{t}": stats.mean_gates(t) for t in range(state.config.n_tasks)}
        return out
    raise ParameterError(f"unknown merge policy {policy!r}")


def export_merged(state: TrainState, policy: str = "per_task_mean", gates=None) -> dict:
    """Fold adapters into dense weights; the source state is left untouched.

    Returns ``{"dense": {name: array}, "gates": {...}, "policy": ...}`` where
    adapted layers appear as ``{layer}.{key}`` and everything else keeps its
    frozen name.
    """
    per_layer = policy_gates(state, policy, gates)
    dense = {k: t.data.copy() for k, t in state.model.frozen.items()}
    for layer_name, layer in state.model.adapters.items():
        weights = expert_weights(layer)
        for key, g in per_layer[layer_name].items():
            dense[f"{layer_name}.{key}"] = merged_weight(layer, g, weights)
    return {"dense": dense, "policy": policy,
            "gates": {l: {k: v.tolist() for k, v in d.items()} for l, d in per_layer.items()},
            "config": state.config.to_dict()}


def save_merged(merged: dict, path):
    header = {"kind": "merged", "config": merged["config"], "policy": merged["policy"], "gates": merged["gates"]}
    _write(path, merged["dense"], header)


def load_merged(path) -> dict:
    manifest, tensors = _read(path)
    if manifest.get("kind") != "merged":
        raise ManifestError(f"{path} is not a merged checkpoint")
    return {"dense": tensors, "policy": manifest["policy"], "gates": manifest["gates"],
            "config": manifest["config"]}


def merged_forward(merged: dict, tokens, task: int, key: str | None = None):
    """Plain dense forward of a merged export for a batch from one task."""
    cfg = Config.from_dict(merged["config"])
    model = build_model(cfg)
    for k, t in model.frozen.items():
        t.data[...] = merged["dense"][k]
    key = key or ("all" if merged["policy"] == "fixed" else f"task{task}")
    dense = {name: merged["dense"][f"{name}.{key}"] for name in model.adapters}
    tokens = np.asarray(tokens)
    return backbone_forward(model, tokens, np.full(tokens.shape[0], task), dense=dense)
