import json

import numpy as np
import pytest

from protofuse.checkpoint import load_checkpoint, save_checkpoint
from protofuse.data_model import MissingnessSpec
from protofuse.errors import LoadError, SchemaError
from protofuse.evaluation import predict
from protofuse.explain import explain, export_explain, minmax_rows
from protofuse.model import PARAMETER_GROUPS


@pytest.fixture(scope="module")
def checkpoint_dir(trained_tiny, tmp_path_factory):
    state, _ = trained_tiny
    return save_checkpoint(state, tmp_path_factory.mktemp("ckpt"))


# -- checkpoint ----------------------------------------------------------------


def test_checkpoint_layout(checkpoint_dir, trained_tiny):
    state, _ = trained_tiny
    manifest = json.loads((checkpoint_dir / "manifest.json").read_text())
    assert manifest["config_hash"] == state.config.hash()
    assert manifest["step"] == state.step and manifest["version"] == 1
    for group in PARAMETER_GROUPS:
        entries = manifest["groups"][group]
        n = sum(int(np.prod(e["shape"])) for e in entries)
        assert (checkpoint_dir / f"{group}.bin").stat().st_size == 4 * n


def test_checkpoint_round_trip_predictions(checkpoint_dir, trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    loaded = load_checkpoint(checkpoint_dir)
    for spec in (None, MissingnessSpec("patient_wise", 1.0)):
        for strategy in ("sgi", "mean_fill"):
            a = predict(state, tiny_cohort, spec, strategy).scores
            b = predict(loaded, tiny_cohort, spec, strategy).scores
            np.testing.assert_array_equal(a, b)
    assert loaded.config == state.config and loaded.step == state.step
    np.testing.assert_array_equal(loaded.cuts, state.cuts)


def test_checkpoint_tampering(checkpoint_dir, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(checkpoint_dir, bad)
    manifest = json.loads((bad / "manifest.json").read_text())
    manifest["config"]["seed"] = 99
    (bad / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError, match="hash"):
        load_checkpoint(bad)

    shutil.rmtree(bad)
    shutil.copytree(checkpoint_dir, bad)
    (bad / "fusion.bin").write_bytes((bad / "fusion.bin").read_bytes()[:-4])
    with pytest.raises(SchemaError):
        load_checkpoint(bad)
    (bad / "fusion.bin").unlink()
    with pytest.raises(LoadError):
        load_checkpoint(bad)
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "nowhere")


# -- explain -------------------------------------------------------------------


def test_minmax_rows():
    out = minmax_rows(np.array([[1.0, 3.0, 2.0], [5.0, 5.0, 5.0], [np.nan, 1.0, 0.0]]))
    np.testing.assert_array_equal(out[0], [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(out[1], [0.0, 0.0, 0.0])
    assert np.isnan(out[2, 0]) and out[2, 1] == 1.0


def test_explain_contracts(trained_tiny, tiny_cohort):
    state, _ = trained_tiny
    bundle = explain(state, tiny_cohort)
    assert bundle.importance.shape == (len(tiny_cohort), 12)
    assert len(bundle.prototype_names) == 12
    for row in bundle.importance:
        assert row.min() == 0.0 and row.max() == 1.0
    for a in bundle.affinity.values():
        assert a.shape == (6, 6) and np.all(np.abs(a) <= 1 + 1e-6)
    n_slides = sum(len(p.slides) for p in tiny_cohort.patients)
    assert len(bundle.attention) == n_slides
    for p in tiny_cohort.patients:
        for s in p.slides:
            attn = bundle.attention[s.slide_id]
            assert attn.shape == (s.patch_embeddings.shape[0], 6)
            np.testing.assert_allclose(attn.sum(axis=0), np.ones(6), atol=1e-6)
    assert [e for e, *_ in bundle.alignment_trace] == list(range(len(state.log)))


def test_explain_files(trained_tiny, tiny_cohort, tmp_path):
    state, _ = trained_tiny
    export_explain(state, tiny_cohort, tmp_path)
    index = json.loads((tmp_path / "index.json").read_text())
    assert index["patients"] == tiny_cohort.patient_ids
    imp = (tmp_path / "importance.tsv").read_text().splitlines()
    assert len(imp) == len(tiny_cohort) + 1 and len(imp[0].split("\t")) == 13
    aff = (tmp_path / "affinity.tsv").read_text().splitlines()
    assert len(aff) == 36 * len(tiny_cohort) + 1
    assert all(-1 <= float(line.split("\t")[3]) <= 1 for line in aff[1:])
    for slide_id, rel in index["files"]["attention"].items():
        lines = (tmp_path / rel).read_text().splitlines()
        body = np.array([[float(v) for v in line.split("\t")[3:]] for line in lines[1:]])
        np.testing.assert_allclose(body.sum(axis=0), np.ones(6), atol=1e-5)
        # coordinates come from the slide's patch grid
        assert lines[1].split("\t")[1] != "NA"
    trace = (tmp_path / "alignment_trace.tsv").read_text().splitlines()
    assert trace[0] == "epoch\tphase\tpaired_cosine\tfrozen" and len(trace) == len(state.log) + 1
