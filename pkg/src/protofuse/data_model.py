"""Cohort data model, on-disk formats, synthetic cohorts and missingness simulation.

A cohort is a tuple of :class:`PatientRecord` objects.  Each patient owns one or
more slide bags (patch-embedding matrices) and at most one genomic profile.
Every container here is immutable; operations that "modify" a cohort return a
new one.

On-disk layout (see :func:`load_cohort` / :func:`write_cohort`)::

    manifest.json         patients, slide paths, table paths
    genomics.tsv          patient_id, <gene ids...>   ("NA" = feature missing)
    gene_groups.tsv       gene_id, group_id
    labels.tsv            patient_id, diagnosis, grade, survival_time, event
    slides/<id>.pfe       b"PFE1" + uint64 n_patches + uint64 d_embed + float32 rows
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, LoadError, SchemaError

HISTOLOGY_CATEGORIES: Tuple[str, ...] = (
    "Neoplastic",
    "Necrotic",
    "Inflammatory",
    "Stromal",
    "Infiltrative",
    "Other Cell Types",
)
GENE_GROUPS: Tuple[str, ...] = (
    "Tumor Suppressor Genes",
    "Oncogenes",
    "Protein Kinases",
    "Cell Differentiation Markers",
    "Transcription Factors",
    "Cytokines and Growth Factors",
)
N_GROUPS = 6
N_DIAGNOSIS = 6
N_GRADES = 3

EMBEDDING_MAGIC = b"PFE1"
_HEADER = struct.Struct("<4sQQ")
MANIFEST_VERSION = 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SlideBag:
    slide_id: str
    patch_embeddings: np.ndarray
    patch_coords: Optional[np.ndarray] = None

    def __post_init__(self):
        emb = np.asarray(self.patch_embeddings, dtype=np.float32)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise SchemaError(
                f"slide {self.slide_id!r}: patch embeddings must be (n_patches>=1, D), got {emb.shape}"
            )
        if not np.all(np.isfinite(emb)):
            raise SchemaError(f"slide {self.slide_id!r}: non-finite patch embedding")
        object.__setattr__(self, "patch_embeddings", _frozen(emb))
        if self.patch_coords is not None:
            coords = np.asarray(self.patch_coords, dtype=np.int64)
            if coords.shape != (emb.shape[0], 2):
                raise SchemaError(
                    f"slide {self.slide_id!r}: expected {emb.shape[0]} (row, col) coords, got {coords.shape}"
                )
            object.__setattr__(self, "patch_coords", _frozen(coords))

    @property
    def n_patches(self) -> int:
        return self.patch_embeddings.shape[0]

    @property
    def d_embed(self) -> int:
        return self.patch_embeddings.shape[1]


@dataclass(frozen=True, eq=False)
class GenomicProfile:
    """Gene values of one patient, stored column-aligned with ``gene_ids``.

    The mapping views required by callers (``gene_values``, ``group_map``,
    ``feature_mask``) are derived from the arrays.
    """

    gene_ids: Tuple[str, ...]
    values: np.ndarray
    groups: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        n = len(self.gene_ids)
        values = np.asarray(self.values, dtype=np.float32)
        groups = np.asarray(self.groups, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != (n,) or groups.shape != (n,) or mask.shape != (n,):
            raise SchemaError("genomic profile arrays must all have one entry per gene")
        if n and (groups.min() < 0 or groups.max() >= N_GROUPS):
            raise SchemaError(f"gene group ids must lie in [0, {N_GROUPS})")
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "groups", _frozen(groups))
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def gene_values(self) -> Dict[str, float]:
        return dict(zip(self.gene_ids, self.values.tolist()))

    @property
    def group_map(self) -> Dict[str, int]:
        return dict(zip(self.gene_ids, self.groups.tolist()))

    @property
    def feature_mask(self) -> Dict[str, bool]:
        return dict(zip(self.gene_ids, self.mask.tolist()))

    def with_mask(self, mask: np.ndarray) -> "GenomicProfile":
        return replace(self, mask=mask)


@dataclass(frozen=True, eq=False)
class PatientRecord:
    patient_id: str
    slides: Tuple[SlideBag, ...]
    genomic: Optional[GenomicProfile]
    label_diagnosis: int
    label_grade: int
    survival_time: float
    event_indicator: bool
    genomic_missing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "slides", tuple(self.slides))
        if not self.slides:
            raise SchemaError(f"patient {self.patient_id!r} has no slides")
        if not (self.survival_time > 0 and math.isfinite(self.survival_time)):
            raise SchemaError(f"patient {self.patient_id!r}: survival_time must be > 0")
        if not 0 <= self.label_diagnosis < N_DIAGNOSIS:
            raise SchemaError(f"patient {self.patient_id!r}: diagnosis label out of range")
        if not 0 <= self.label_grade < N_GRADES:
            raise SchemaError(f"patient {self.patient_id!r}: grade label out of range")
        if self.genomic is None and not self.genomic_missing:
            object.__setattr__(self, "genomic_missing", True)

    @property
    def has_genomics(self) -> bool:
        return self.genomic is not None and not self.genomic_missing


@dataclass(frozen=True, eq=False)
class Cohort:
    patients: Tuple[PatientRecord, ...]
    gene_group_names: Tuple[str, ...] = GENE_GROUPS
    histology_category_names: Tuple[str, ...] = HISTOLOGY_CATEGORIES
    provenance: str = ""
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "gene_group_names", tuple(self.gene_group_names))
        object.__setattr__(self, "histology_category_names", tuple(self.histology_category_names))
        if len(self.gene_group_names) != N_GROUPS or len(self.histology_category_names) != N_GROUPS:
            raise SchemaError("cohorts need exactly 6 gene group names and 6 histology category names")
        index = {}
        for i, p in enumerate(self.patients):
            if p.patient_id in index:
                raise SchemaError(f"duplicate patient id {p.patient_id!r}")
            index[p.patient_id] = i
        object.__setattr__(self, "_index", index)
        dims = {s.d_embed for p in self.patients for s in p.slides}
        if len(dims) > 1:
            raise SchemaError(f"inconsistent patch embedding dimensions across slides: {sorted(dims)}")
        gene_sets = {p.genomic.gene_ids for p in self.patients if p.genomic is not None}
        if len(gene_sets) > 1:
            raise SchemaError("genomic profiles disagree on gene ids")

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def patient_ids(self) -> List[str]:
        return [p.patient_id for p in self.patients]

    @property
    def d_embed(self) -> int:
        return self.patients[0].slides[0].d_embed

    @property
    def gene_ids(self) -> Tuple[str, ...]:
        for p in self.patients:
            if p.genomic is not None:
                return p.genomic.gene_ids
        return ()

    @property
    def gene_groups(self) -> np.ndarray:
        for p in self.patients:
            if p.genomic is not None:
                return p.genomic.groups
        return np.zeros(0, dtype=np.int64)

    def patient(self, patient_id: str) -> PatientRecord:
        return self.patients[self._index[patient_id]]

    def subset(self, ids: Iterable[str]) -> "Cohort":
        return replace(self, patients=tuple(self.patient(i) for i in ids), _index={})

    def with_patients(self, patients: Sequence[PatientRecord]) -> "Cohort":
        return replace(self, patients=tuple(patients), _index={})

    def fingerprint(self) -> str:
        """SHA-256 over every field of every patient, in order."""
        h = hashlib.sha256()
        h.update(json.dumps([self.gene_group_names, self.histology_category_names, self.provenance]).encode())
        for p in self.patients:
            h.update(
                json.dumps(
                    [p.patient_id, p.label_diagnosis, p.label_grade, repr(float(p.survival_time)),
                     bool(p.event_indicator), bool(p.genomic_missing)]
                ).encode()
            )
            for s in p.slides:
                h.update(s.slide_id.encode())
                h.update(s.patch_embeddings.tobytes())
                if s.patch_coords is not None:
                    h.update(s.patch_coords.tobytes())
            if p.genomic is not None:
                h.update("\x1f".join(p.genomic.gene_ids).encode())
                h.update(p.genomic.values.tobytes())
                h.update(p.genomic.groups.tobytes())
                h.update(p.genomic.mask.tobytes())
        return h.hexdigest()


class MissingMode(str, Enum):
    PATIENT_WISE = "patient_wise"
    FEATURE_WISE = "feature_wise"


@dataclass(frozen=True)
class MissingnessSpec:
    mode: MissingMode
    rate: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", MissingMode(self.mode))
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"missingness rate must lie in [0, 1], got {self.rate}")


def missing_count(rate: float, n: int) -> int:
    # round first so that e.g. 0.29 * 100 floors to 29, not 28
    return int(math.floor(round(rate * n, 9)))


# ---------------------------------------------------------------------------
# Missingness and folds
# ---------------------------------------------------------------------------


def apply_missingness(cohort: Cohort, spec: MissingnessSpec) -> Cohort:
    """Return a copy of ``cohort`` with simulated genomic missingness.

    Selections are prefixes of seeded permutations, so for a fixed seed the set
    of affected patients (or genes) grows monotonically with the rate.
    Existing missingness is never undone.
    """
    n = len(cohort)
    if spec.rate == 0.0 or n == 0:
        return cohort
    if spec.mode is MissingMode.PATIENT_WISE:
        order = np.random.default_rng(spec.seed).permutation(n)
        flagged = set(order[: missing_count(spec.rate, n)].tolist())
        patients = [
            replace(p, genomic_missing=True) if i in flagged else p
            for i, p in enumerate(cohort.patients)
        ]
        return cohort.with_patients(patients)

    patients = []
    for i, p in enumerate(cohort.patients):
        if p.genomic is None:
            patients.append(p)
            continue
        n_genes = len(p.genomic.gene_ids)
        rng = np.random.default_rng([spec.seed, i])
        drop = rng.permutation(n_genes)[: missing_count(spec.rate, n_genes)]
        mask = p.genomic.mask.copy()
        mask[drop] = False
        patients.append(replace(p, genomic=p.genomic.with_mask(mask)))
    return cohort.with_patients(patients)


def split_folds(cohort: Cohort, k: int, seed: int) -> List[Tuple[List[str], List[str]]]:
    """Patient-level k-fold split; fold sizes differ by at most one."""
    n = len(cohort)
    if k < 2 or k > n:
        raise ConfigError(f"need 2 <= k <= n_patients ({n}), got k={k}")
    order = np.random.default_rng(seed).permutation(n)
    ids = cohort.patient_ids
    folds = []
    for chunk in np.array_split(order, k):
        val = set(chunk.tolist())
        folds.append(
            ([ids[i] for i in range(n) if i not in val], [ids[i] for i in sorted(val)])
        )
    return folds


def sample_slide_indices(cohort: Cohort, rng: np.random.Generator) -> List[int]:
    """Pick one slide per patient uniformly at random."""
    return [int(rng.integers(len(p.slides))) for p in cohort.patients]


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

# per-latent visibility in histology; genomics sees every coordinate clearly
_HISTOLOGY_VISIBILITY = np.array([1.0, 0.7, 0.3, 0.3, 0.3, 0.3])


def generate_synthetic(
    n_patients: int,
    d_embed: int,
    n_genes: int,
    seed: int,
    *,
    patches_per_slide: Tuple[int, int] = (16, 40),
    max_slides: int = 3,
) -> Cohort:
    """Latent-factor cohort where both modalities are noisy views of a shared ``z``.

    ``z`` has one coordinate per gene group.  Gene ``j`` of group ``k`` loads
    mainly on ``z[k]``; patch embeddings mix per-category signatures with a
    projection of ``z`` that sees the first two coordinates well and the rest
    faintly.  Diagnosis quantizes ``z[0]`` into 6 equiprobable bins, grade
    quantizes ``z[1]`` into 3, and survival time is exponential with a hazard
    that grows with grade and ``z[2]``, under independent exponential censoring.
    """
    if n_patients < 2:
        raise ConfigError("n_patients must be >= 2")
    if n_genes < N_GROUPS:
        raise ConfigError(f"n_genes must be >= {N_GROUPS} to populate every gene group")
    if d_embed < 1:
        raise ConfigError("d_embed must be >= 1")
    from scipy.stats import norm

    rng = np.random.default_rng(seed)
    n_lat = N_GROUPS
    z = rng.standard_normal((n_patients, n_lat))

    diag_cuts = norm.ppf(np.arange(1, N_DIAGNOSIS) / N_DIAGNOSIS)
    grade_cuts = norm.ppf(np.arange(1, N_GRADES) / N_GRADES)
    diagnosis = np.digitize(z[:, 0], diag_cuts)
    grade = np.digitize(z[:, 1], grade_cuts)

    hazard = 0.05 * np.exp(0.7 * grade + 0.9 * z[:, 2])
    event_time = rng.exponential(1.0 / hazard)
    censor_time = rng.exponential(1.0 / 0.03, size=n_patients)
    event = event_time <= censor_time
    time = np.maximum(np.minimum(event_time, censor_time), 1e-3)

    # histology: per-category signature + category-specific view of z + noise
    signatures = rng.standard_normal((N_GROUPS, d_embed)) * 1.5
    projections = rng.standard_normal((N_GROUPS, n_lat, d_embed)) / np.sqrt(n_lat)
    category_drive = rng.standard_normal((n_lat, N_GROUPS)) * 0.8
    visible = z * _HISTOLOGY_VISIBILITY

    # genomics: positive within-group loadings, weak cross-loadings
    group_of = (np.arange(n_genes) * N_GROUPS) // n_genes
    loadings = rng.normal(0.0, 0.1, size=(n_genes, n_lat))
    loadings[np.arange(n_genes), group_of] = rng.uniform(0.6, 1.4, size=n_genes)
    gene_noise = rng.standard_normal((n_patients, n_genes))
    gene_values = (z @ loadings.T + gene_noise).astype(np.float32)
    gene_ids = tuple(f"G{j:04d}" for j in range(n_genes))

    lo, hi = patches_per_slide
    grid = 16
    patients = []
    for i in range(n_patients):
        logits = visible[i] @ category_drive
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        slides = []
        for s in range(int(rng.integers(1, max_slides + 1))):
            n_p = int(rng.integers(lo, hi + 1))
            cats = rng.choice(N_GROUPS, size=n_p, p=probs)
            slide_offset = rng.standard_normal(d_embed) * 0.3
            emb = (
                signatures[cats]
                + np.einsum("l,pld->pd", visible[i], projections[cats]) * 2.0
                + slide_offset
                + rng.standard_normal((n_p, d_embed))
            )
            cells = rng.choice(grid * grid, size=n_p, replace=False)
            coords = np.stack([cells // grid, cells % grid], axis=1)
            slides.append(SlideBag(f"P{i:04d}_S{s}", emb.astype(np.float32), coords))
        genomic = GenomicProfile(gene_ids, gene_values[i], group_of, np.ones(n_genes, dtype=bool))
        patients.append(
            PatientRecord(
                patient_id=f"P{i:04d}",
                slides=tuple(slides),
                genomic=genomic,
                label_diagnosis=int(diagnosis[i]),
                label_grade=int(grade[i]),
                survival_time=float(time[i]),
                event_indicator=bool(event[i]),
            )
        )
    provenance = f"synthetic(n_patients={n_patients}, d_embed={d_embed}, n_genes={n_genes}, seed={seed})"
    return Cohort(tuple(patients), GENE_GROUPS, HISTOLOGY_CATEGORIES, provenance)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_embedding(path: Path, emb: np.ndarray) -> None:
    emb = np.asarray(emb, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, emb.shape[0], emb.shape[1]))
        fh.write(np.ascontiguousarray(emb).tobytes())


def read_embedding(path: Path) -> np.ndarray:
    """Read a ``PFE1`` binary, or a delimited-text matrix as fallback."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"embedding file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if head[:4] == EMBEDDING_MAGIC:
            if len(head) < _HEADER.size:
                raise SchemaError(f"{path}: truncated header")
            _, n, d = _HEADER.unpack(head)
            data = np.frombuffer(fh.read(), dtype="<f4")
            if data.size != n * d:
                raise SchemaError(f"{path}: header says {n}x{d}, payload has {data.size} values")
            return data.reshape(n, d).astype(np.float32)
    try:
        text = path.read_text()
        delim = "\t" if "\t" in text.splitlines()[0] else ","
        arr = np.loadtxt(path, delimiter=delim, dtype=np.float32, ndmin=2)
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable embedding file ({exc})") from exc
    return arr


def _read_table(path: Path) -> List[List[str]]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"table not found: {path}")
    with open(path, newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        delim = "\t" if "\t" in first else ","
        rows = [r for r in csv.reader(fh, delimiter=delim) if r]
    if not rows:
        raise SchemaError(f"{path}: empty table")
    return rows


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise SchemaError(f"cannot parse boolean {text!r}")


def load_cohort(manifest_path) -> Cohort:
    """Load and validate a cohort described by a JSON manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise LoadError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from exc
    root = manifest_path.parent
    for key in ("patients", "genomic_table", "gene_group_table", "labels_table"):
        if key not in manifest:
            raise SchemaError(f"{manifest_path}: missing key {key!r}")

    group_rows = _read_table(root / manifest["gene_group_table"])
    if group_rows[0][0].strip().lower() in ("gene_id", "gene"):
        group_rows = group_rows[1:]
    group_map: Dict[str, int] = {}
    for row in group_rows:
        try:
            gid = int(row[1])
        except (IndexError, ValueError) as exc:
            raise SchemaError(f"bad gene-group row {row!r}") from exc
        if not 0 <= gid < N_GROUPS:
            raise SchemaError(f"gene {row[0]!r}: group id {gid} outside [0, {N_GROUPS})")
        group_map[row[0].strip()] = gid

    geno_rows = _read_table(root / manifest["genomic_table"])
    gene_ids = tuple(g.strip() for g in geno_rows[0][1:])
    ungrouped = [g for g in gene_ids if g not in group_map]
    if ungrouped:
        raise SchemaError(f"genes without a functional group: {ungrouped[:5]}")
    groups = np.array([group_map[g] for g in gene_ids], dtype=np.int64)
    genomics: Dict[str, GenomicProfile] = {}
    for row in geno_rows[1:]:
        if len(row) != len(gene_ids) + 1:
            raise SchemaError(f"genomic row for {row[0]!r} has {len(row) - 1} values, expected {len(gene_ids)}")
        cells = [c.strip() for c in row[1:]]
        mask = np.array([c not in ("", "NA", "nan", "NaN") for c in cells])
        values = np.array([float(c) if m else 0.0 for c, m in zip(cells, mask)], dtype=np.float32)
        genomics[row[0].strip()] = GenomicProfile(gene_ids, values, groups, mask)

    label_rows = _read_table(root / manifest["labels_table"])
    header = [h.strip() for h in label_rows[0]]
    needed = ("patient_id", "diagnosis", "grade", "survival_time", "event")
    if any(h not in header for h in needed):
        raise SchemaError(f"labels table needs columns {needed}, got {header}")
    col = {h: header.index(h) for h in needed}
    labels = {}
    for row in label_rows[1:]:
        try:
            labels[row[col["patient_id"]].strip()] = (
                int(row[col["diagnosis"]]),
                int(row[col["grade"]]),
                float(row[col["survival_time"]]),
                _parse_bool(row[col["event"]]),
            )
        except (IndexError, ValueError) as exc:
            raise SchemaError(f"bad labels row {row!r}") from exc

    patients = []
    for entry in manifest["patients"]:
        pid = entry["patient_id"]
        if pid not in labels:
            raise SchemaError(f"patient {pid!r} has no labels row")
        slides = []
        for s in entry.get("slides", []):
            emb = read_embedding(root / s["path"])
            coords = None
            if s.get("coords"):
                cpath = root / s["coords"]
                if not cpath.is_file():
                    raise LoadError(f"coords file not found: {cpath}")
                coords = np.loadtxt(cpath, dtype=np.int64, ndmin=2, delimiter="\t")
            slides.append(SlideBag(s.get("slide_id", Path(s["path"]).stem), emb, coords))
        diag, grade, t, ev = labels[pid]
        genomic = genomics.get(pid)
        patients.append(
            PatientRecord(pid, tuple(slides), genomic, diag, grade, t, ev, genomic is None)
        )
    return Cohort(
        tuple(patients),
        tuple(manifest.get("gene_group_names", GENE_GROUPS)),
        tuple(manifest.get("histology_category_names", HISTOLOGY_CATEGORIES)),
        provenance=str(manifest_path),
    )


def write_cohort(cohort: Cohort, out_dir) -> Path:
    """Write ``cohort`` in the manifest layout; returns the manifest path.

    Patients flagged ``genomic_missing`` are omitted from the genomic table and
    masked genes are written as ``NA``, so :func:`load_cohort` round-trips both.
    """
    out = Path(out_dir)
    (out / "slides").mkdir(parents=True, exist_ok=True)
    gene_ids = cohort.gene_ids
    groups = cohort.gene_groups
    with open(out / "gene_groups.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["gene_id", "group_id"])
        w.writerows(zip(gene_ids, groups.tolist()))
    with open(out / "genomics.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["patient_id", *gene_ids])
        for p in cohort.patients:
            if not p.has_genomics:
                continue
            g = p.genomic
            w.writerow([p.patient_id, *(repr(float(v)) if m else "NA" for v, m in zip(g.values, g.mask))])
    with open(out / "labels.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["patient_id", "diagnosis", "grade", "survival_time", "event"])
        for p in cohort.patients:
            w.writerow([p.patient_id, p.label_diagnosis, p.label_grade, repr(float(p.survival_time)), int(p.event_indicator)])
    entries = []
    for p in cohort.patients:
        slides = []
        for s in p.slides:
            rel = f"slides/{s.slide_id}.pfe"
            write_embedding(out / rel, s.patch_embeddings)
            item = {"slide_id": s.slide_id, "path": rel}
            if s.patch_coords is not None:
                crel = f"slides/{s.slide_id}.coords.tsv"
                np.savetxt(out / crel, s.patch_coords, fmt="%d", delimiter="\t")
                item["coords"] = crel
            slides.append(item)
        entries.append({"patient_id": p.patient_id, "slides": slides})
    manifest = {
        "version": MANIFEST_VERSION,
        "provenance": cohort.provenance,
        "genomic_table": "genomics.tsv",
        "gene_group_table": "gene_groups.tsv",
        "labels_table": "labels.tsv",
        "gene_group_names": list(cohort.gene_group_names),
        "histology_category_names": list(cohort.histology_category_names),
        "patients": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
