"""Interpretability exports: prototype importance, cross-modal affinity,
patch attention maps and the alignment trace, as tab-separated files plus
an ``index.json`` that lists them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .data_model import Cohort
from .model import make_batch
from .training import ModelState

CHUNK = 64


@dataclass
class ExplainBundle:
    patient_ids: List[str]
    prototype_names: List[str]  # 6 histology then 6 genomic
    importance: np.ndarray  # (n_patients, 12), min-max scaled per patient; NaN where undefined
    affinity: Dict[str, np.ndarray] = field(default_factory=dict)  # patient -> (6, 6) cosine
    attention: Dict[str, np.ndarray] = field(default_factory=dict)  # slide -> (M, 6), columns sum to 1
    coords: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    alignment_trace: List[Tuple[int, int, float, int]] = field(default_factory=list)  # epoch, phase, cosine, frozen


def minmax_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to [0, 1] over its finite entries; constant rows map to 0."""
    out = np.full_like(x, np.nan, dtype=float)
    for i, row in enumerate(x):
        ok = np.isfinite(row)
        if not ok.any():
            continue
        lo, hi = row[ok].min(), row[ok].max()
        out[i, ok] = (row[ok] - lo) / (hi - lo) if hi > lo else 0.0
    return out


@torch.no_grad()
def explain(state: ModelState, cohort: Cohort) -> ExplainBundle:
    """Per-slide quantities are averaged over a patient's slides."""
    model = state.model
    model.eval()
    pairs = [(p, s) for p in cohort.patients for s in range(len(p.slides))]
    w_all, aff_all, attn_all = [], [], []
    for start in range(0, len(pairs), CHUNK):
        chunk = pairs[start : start + CHUNK]
        batch = make_batch([p for p, _ in chunk], [s for _, s in chunk], state.gene_groups)
        out = model(batch)
        w_p = out["w_p"].double().numpy()
        if model.multimodal:
            w_g = out["w_g"].double().numpy()
            aff_all.append(out["affinity"].double().numpy())
        else:
            w_g = np.full_like(w_p, np.nan)
        w_all.append(np.concatenate([w_p, w_g], axis=1))
        attn = out["attention"].double().numpy()  # (B, 6, M)
        for i, (p, s) in enumerate(chunk):
            n_patches = p.slides[s].patch_embeddings.shape[0]
            attn_all.append(attn[i, :, :n_patches].T)
    model.train()
    w_all = np.concatenate(w_all)
    aff_all = np.concatenate(aff_all) if aff_all else None

    importance, affinity, attention, coords = [], {}, {}, {}
    pos = 0
    for p in cohort.patients:
        k = len(p.slides)
        importance.append(w_all[pos : pos + k].mean(axis=0))
        if aff_all is not None:
            affinity[p.patient_id] = aff_all[pos : pos + k].mean(axis=0)
        for j, slide in enumerate(p.slides):
            attention[slide.slide_id] = attn_all[pos + j]
            coords[slide.slide_id] = slide.patch_coords
        pos += k

    genomic_names = [f"genomic:{n}" for n in (cohort.gene_group_names)]
    names = [f"histology:{n}" for n in state.category_names] + genomic_names
    trace = [
        (int(r["epoch"]), int(r["phase"]), float(r.get("paired_cosine", math.nan)), int(r.get("frozen", 0)))
        for r in state.log
    ]
    return ExplainBundle(
        patient_ids=cohort.patient_ids,
        prototype_names=names,
        importance=minmax_rows(np.stack(importance)),
        affinity=affinity,
        attention=attention,
        coords=coords,
        alignment_trace=trace,
    )


def _fmt(v: float) -> str:
    return "NA" if not np.isfinite(v) else f"{v:.6f}"


def write_bundle(bundle: ExplainBundle, out_dir) -> Path:
    out = Path(out_dir)
    (out / "attention").mkdir(parents=True, exist_ok=True)
    n_hist = len(bundle.prototype_names) // 2

    lines = ["\t".join(["patient_id", *bundle.prototype_names])]
    for pid, row in zip(bundle.patient_ids, bundle.importance):
        lines.append("\t".join([pid, *(_fmt(v) for v in row)]))
    (out / "importance.tsv").write_text("\n".join(lines) + "\n")

    files = {"importance": "importance.tsv", "attention": {}, "alignment_trace": "alignment_trace.tsv"}
    if bundle.affinity:
        hist, gen = bundle.prototype_names[:n_hist], bundle.prototype_names[n_hist:]
        lines = ["patient_id\thistology_prototype\tgenomic_prototype\taffinity"]
        for pid in bundle.patient_ids:
            a = bundle.affinity[pid]
            for i in range(a.shape[0]):
                for j in range(a.shape[1]):
                    lines.append(f"{pid}\t{hist[i]}\t{gen[j]}\t{_fmt(a[i, j])}")
        (out / "affinity.tsv").write_text("\n".join(lines) + "\n")
        files["affinity"] = "affinity.tsv"

    cat_names = bundle.prototype_names[:n_hist]
    for slide_id, attn in bundle.attention.items():
        xy = bundle.coords.get(slide_id)
        lines = ["\t".join(["patch_index", "row", "col", *cat_names])]
        for k, row in enumerate(attn):
            r, c = ("NA", "NA") if xy is None else (str(int(xy[k, 0])), str(int(xy[k, 1])))
            lines.append("\t".join([str(k), r, c, *(_fmt(v) for v in row)]))
        rel = f"attention/{slide_id}.tsv"
        (out / rel).write_text("\n".join(lines) + "\n")
        files["attention"][slide_id] = rel

    lines = ["epoch\tphase\tpaired_cosine\tfrozen"]
    lines += [f"{e}\t{ph}\t{_fmt(c)}\t{fr}" for e, ph, c, fr in bundle.alignment_trace]
    (out / "alignment_trace.tsv").write_text("\n".join(lines) + "\n")

    index = {
        "patients": bundle.patient_ids,
        "prototype_names": bundle.prototype_names,
        "importance_normalization": "per-patient min-max over the 12 prototypes; constant rows -> 0",
        "files": files,
    }
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return out


def export_explain(state: ModelState, cohort: Cohort, out_dir) -> ExplainBundle:
    bundle = explain(state, cohort)
    write_bundle(bundle, out_dir)
    return bundle
