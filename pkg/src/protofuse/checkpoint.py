"""On-disk model state: ``manifest.json`` plus one little-endian float32 blob
per parameter group (``<group>.bin``), tensors concatenated in manifest order."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch

from .config import TrainConfig
from .errors import LoadError, SchemaError
from .model import PARAMETER_GROUPS
from .training import ModelState, build_model_from

FORMAT = "protofuse-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
MEAN_TOKENS = "mean_tokens.bin"


def _write_blob(path: Path, tensors: List[torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        for t in tensors:
            fh.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def _read_blob(path: Path) -> np.ndarray:
    if not path.is_file():
        raise LoadError(f"checkpoint blob missing: {path}")
    return np.frombuffer(path.read_bytes(), dtype="<f4")


def save_checkpoint(state: ModelState, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: Dict[str, List[Dict]] = {}
    for group, params in state.model.named_group_parameters().items():
        entries, offset = [], 0
        for name, p in params.items():
            entries.append({"name": name, "shape": list(p.shape), "offset": offset})
            offset += p.numel()
        groups[group] = entries
        _write_blob(out / f"{group}.bin", list(params.values()))
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": state.config.to_dict(),
        "config_hash": state.config.hash(),
        "step": state.step,
        "phase": state.phase,
        "frozen": state.frozen,
        "freeze_epoch": state.freeze_epoch,
        "cuts": None if state.cuts is None else [float(c) for c in state.cuts],
        "gene_ids": list(state.gene_ids),
        "gene_groups": [int(x) for x in state.gene_groups],
        "category_names": list(state.category_names),
        "d_embed": state.d_embed,
        "groups": groups,
        "mean_tokens": None if state.mean_tokens is None else list(state.mean_tokens.shape),
        "log": state.log,
    }
    if state.mean_tokens is not None:
        _write_blob(out / MEAN_TOKENS, [state.mean_tokens])
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(in_dir) -> ModelState:
    src = Path(in_dir)
    path = src / MANIFEST
    if not path.is_file():
        raise LoadError(f"no checkpoint manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise SchemaError(f"unsupported checkpoint format {manifest.get('format')!r} v{manifest.get('version')}")
    cfg = TrainConfig(**manifest["config"])
    if cfg.hash() != manifest["config_hash"]:
        raise SchemaError("checkpoint config does not match its recorded hash")
    model = build_model_from(cfg, manifest["d_embed"], manifest["category_names"])
    named = model.named_group_parameters()
    if set(manifest["groups"]) != set(PARAMETER_GROUPS):
        raise SchemaError(f"checkpoint groups {sorted(manifest['groups'])} != {sorted(PARAMETER_GROUPS)}")
    with torch.no_grad():
        for group, entries in manifest["groups"].items():
            blob = _read_blob(src / f"{group}.bin")
            expected = sum(int(np.prod(e["shape"])) for e in entries)
            if blob.size != expected:
                raise SchemaError(f"{group}.bin holds {blob.size} values, manifest expects {expected}")
            if [e["name"] for e in entries] != list(named[group]):
                raise SchemaError(f"parameter names of group {group!r} do not match this model")
            for e in entries:
                p = named[group][e["name"]]
                if list(p.shape) != e["shape"]:
                    raise SchemaError(f"{e['name']}: shape {e['shape']} != model {list(p.shape)}")
                n = p.numel()
                p.copy_(torch.from_numpy(blob[e["offset"] : e["offset"] + n].copy()).reshape(p.shape))
    mean_tokens = None
    if manifest["mean_tokens"] is not None:
        mean_tokens = torch.from_numpy(_read_blob(src / MEAN_TOKENS).copy()).reshape(manifest["mean_tokens"])
    return ModelState(
        model=model,
        config=cfg,
        gene_ids=tuple(manifest["gene_ids"]),
        gene_groups=np.asarray(manifest["gene_groups"], dtype=np.int64),
        category_names=tuple(manifest["category_names"]),
        d_embed=manifest["d_embed"],
        cuts=None if manifest["cuts"] is None else np.asarray(manifest["cuts"], dtype=float),
        mean_tokens=mean_tokens,
        step=manifest["step"],
        phase=manifest["phase"],
        frozen=manifest["frozen"],
        freeze_epoch=manifest["freeze_epoch"],
        log=list(manifest.get("log", [])),
    )
