import json
import time

import numpy as np
import pytest

from opfbovw.core import DataError
from opfbovw.dictionary import Dictionary
from opfbovw.supervised import train_cpl, train_knn
from opfbovw import io as fio


# -- descriptor text format ----------------------------------------------------

def test_text_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(17, 5)) * 1e3
    path = tmp_path / "d.txt"
    fio.write_descriptors(path, arr)
    back = fio.read_descriptors(path)
    assert np.array_equal(arr, back)
    first = path.read_text().splitlines()[0]
    assert first == "dim=5"


def test_text_empty_body_allowed(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("dim=4\n")
    assert fio.read_descriptors(path).shape == (0, 4)


def test_text_header_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3\n1,2,3\n")
    with pytest.raises(DataError, match="dim="):
        fio.read_descriptors(path)
    path.write_text("dim=zebra\n")
    with pytest.raises(DataError, match="malformed dimension"):
        fio.read_descriptors(path)


def test_text_ragged_row_reports_line_number(tmp_path):
    path = tmp_path / "ragged.txt"
    path.write_text("dim=3\n1,2,3\n4,5\n6,7,8\n")
    with pytest.raises(DataError, match="ragged.txt:3"):
        fio.read_descriptors(path)


def test_text_bad_token_reports_line_number(tmp_path):
    path = tmp_path / "tok.txt"
    path.write_text("dim=2\n1,2\n3,oops\n")
    with pytest.raises(DataError, match="tok.txt:3"):
        fio.read_descriptors(path)


def test_text_non_finite_reports_line_number(tmp_path):
    path = tmp_path / "nan.txt"
    path.write_text("dim=2\n1,2\n3,nan\n5,6\n")
    with pytest.raises(DataError, match="nan.txt:3"):
        fio.read_descriptors(path)


def test_text_width_mismatch_against_header(tmp_path):
    path = tmp_path / "wide.txt"
    path.write_text("dim=3\n1,2\n3,4\n")
    with pytest.raises(DataError, match="header declares dim=3"):
        fio.read_descriptors(path)


def test_large_file_reads_quickly(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.normal(size=(100_000, 64)).astype(np.float64)
    path = tmp_path / "big.txt"
    fio.write_descriptors(path, arr)
    start = time.perf_counter()
    back = fio.read_descriptors(path)
    elapsed = time.perf_counter() - start
    assert back.shape == (100_000, 64)
    assert elapsed < 2.0


# -- binary format ---------------------------------------------------------------

def test_binary_round_trip_single_precision(tmp_path):
    rng = np.random.default_rng(2)
    arr = rng.normal(size=(9, 6))
    path = tmp_path / "d.bin"
    fio.write_descriptors_binary(path, arr)
    back = fio.read_descriptors(path)  # sniffed via magic
    assert back.dtype == np.float64
    assert np.array_equal(back, arr.astype(np.float32).astype(np.float64))


def test_binary_truncation_detected(tmp_path):
    path = tmp_path / "t.bin"
    fio.write_descriptors_binary(path, np.ones((4, 3)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(DataError, match="expected"):
        fio.read_descriptors(path)
    path.write_bytes(blob + b"\x00")
    with pytest.raises(DataError):
        fio.read_descriptors(path)


def test_binary_bad_version(tmp_path):
    path = tmp_path / "v.bin"
    fio.write_descriptors_binary(path, np.ones((2, 2)))
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="version"):
        fio.read_descriptors_binary(path)


# -- dictionary files -------------------------------------------------------------

def test_dictionary_round_trip(tmp_path):
    d = Dictionary(
        words=np.array([[0.5, -1.25], [3.0, 4.0]]),
        builder="kmeans",
        params={"size": 2, "seed": 7, "max_iter": 300, "tol": 1e-6, "iterations": 3},
    )
    path = tmp_path / "dict.json"
    fio.write_dictionary(path, d)
    back = fio.read_dictionary(path)
    assert np.array_equal(back.words, d.words)
    assert back.builder == d.builder
    assert back.params == d.params


def test_dictionary_rejects_unknown_builder(tmp_path):
    path = tmp_path / "dict.json"
    payload = {
        "format": "opf-bovw-dictionary", "version": 1, "builder": "magic",
        "dim": 1, "size": 1, "params": {}, "words": [[1.0]],
    }
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="unknown builder"):
        fio.read_dictionary(path)


def test_dictionary_rejects_bad_version_and_truncation(tmp_path):
    path = tmp_path / "dict.json"
    payload = {"format": "opf-bovw-dictionary", "version": 2, "builder": "opf",
               "dim": 1, "size": 1, "params": {}, "words": [[1.0]]}
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="version"):
        fio.read_dictionary(path)
    path.write_text(json.dumps(payload)[:25])
    with pytest.raises(DataError, match="JSON"):
        fio.read_dictionary(path)
    path.write_text(json.dumps({"format": "something-else", "version": 1}))
    with pytest.raises(DataError):
        fio.read_dictionary(path)


def test_dictionary_shape_consistency_checked(tmp_path):
    path = tmp_path / "dict.json"
    payload = {"format": "opf-bovw-dictionary", "version": 1, "builder": "opf",
               "dim": 2, "size": 3, "params": {}, "words": [[1.0, 2.0]]}
    path.write_text(json.dumps(payload))
    with pytest.raises(DataError, match="shape"):
        fio.read_dictionary(path)


# -- model files -------------------------------------------------------------------

def _training_data():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 0.4, (8, 3)), rng.normal(5, 0.4, (8, 3))])
    y = np.repeat([0, 1], 8)
    return X, y


def test_cpl_model_round_trip(tmp_path):
    X, y = _training_data()
    model = train_cpl(X, y)
    path = tmp_path / "m.json"
    fio.write_model(path, model, ["neg", "pos"], normalization="l1")
    back, label_set, norm = fio.read_model(path)
    assert label_set == ["neg", "pos"] and norm == "l1"
    assert np.array_equal(back.nodes, model.nodes)
    assert np.array_equal(back.cost, model.cost)
    assert np.array_equal(back.order, model.order)
    assert np.array_equal(back.labels, model.labels)


def test_knn_model_round_trip(tmp_path):
    X, y = _training_data()
    model = train_knn(X, y, 3)
    path = tmp_path / "m.json"
    fio.write_model(path, model, ["a", "b"])
    back, label_set, norm = fio.read_model(path)
    assert norm == "none"
    assert back.k == 3
    assert back.bandwidth == model.bandwidth
    assert np.array_equal(back.cost, model.cost)
    assert np.array_equal(back.density, model.density)


def test_model_unknown_kind(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({
        "format": "opf-bovw-model", "version": 1, "kind": "mystery",
        "label_set": [], "nodes": [[0.0]], "true_labels": [0], "labels": [0],
        "cost": [0.0], "prototypes": [0],
    }))
    with pytest.raises(DataError, match="kind"):
        fio.read_model(path)


# -- manifests ----------------------------------------------------------------------

def make_manifest(tmp_path, labels_directive=True):
    fio.write_descriptors(tmp_path / "a.txt", np.array([[1.0, 2.0], [3.0, 4.0]]))
    fio.write_descriptors(tmp_path / "b.txt", np.array([[5.0, 6.0]]))
    lines = []
    if labels_directive:
        lines.append("# labels: pos,neg")
    lines += ["image_id,label,descriptors,mask", "a,pos,a.txt,", "b,neg,b.txt,"]
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_manifest_loads_dataset(tmp_path):
    ds = fio.read_manifest(make_manifest(tmp_path))
    assert len(ds) == 2 and ds.dim == 2
    assert ds.label_set == ["pos", "neg"]
    assert ds.records[0].descriptors.shape == (2, 2)
    assert ds.records[1].label == "neg"


def test_manifest_label_order_without_directive(tmp_path):
    ds = fio.read_manifest(make_manifest(tmp_path, labels_directive=False))
    assert ds.label_set == ["pos", "neg"]  # first-appearance order


def test_manifest_errors(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("who,what\n")
    with pytest.raises(DataError, match="header"):
        fio.read_manifest(path)
    path.write_text("image_id,label,descriptors,mask\na,pos,missing.txt,\n")
    with pytest.raises(DataError, match="not found"):
        fio.read_manifest(path)
    path.write_text("image_id,label,descriptors,mask\n")
    with pytest.raises(DataError, match="no images"):
        fio.read_manifest(path)
    path.write_text("image_id,label,descriptors,mask\na,pos\n")
    with pytest.raises(DataError, match="manifest.csv:2"):
        fio.read_manifest(path)


def test_write_dataset_round_trip(tmp_path):
    from opfbovw.evaluation import gen_synthetic

    ds = gen_synthetic(2, 4, 3, 1.0, seed=0)
    manifest = fio.write_dataset(ds, tmp_path / "out")
    back = fio.read_manifest(manifest)
    assert back.label_set == ds.label_set
    assert [r.image_id for r in back.records] == [r.image_id for r in ds.records]
    for a, b in zip(ds.records, back.records):
        assert np.array_equal(a.descriptors, b.descriptors)


# -- masks, coords, config, predictions ------------------------------------------

def test_pgm_ascii_and_binary(tmp_path):
    p2 = tmp_path / "m.pgm"
    p2.write_text("P2\n# a comment\n3 2\n255\n0 10 0\n255 0 1\n")
    mask = fio.read_pgm(p2)
    assert mask.width == 3 and mask.height == 2
    assert mask.bitmap.tolist() == [[False, True, False], [True, False, True]]

    p5 = tmp_path / "m5.pgm"
    p5.write_bytes(b"P5\n3 2\n255\n" + bytes([0, 10, 0, 255, 0, 1]))
    mask5 = fio.read_pgm(p5)
    assert np.array_equal(mask5.bitmap, mask.bitmap)


def test_pgm_sixteen_bit_and_errors(tmp_path):
    p5 = tmp_path / "wide.pgm"
    raster = np.array([[0, 300], [70000 % 65536, 0]], dtype=">u2").tobytes()
    p5.write_bytes(b"P5\n2 2\n65535\n" + raster)
    mask = fio.read_pgm(p5)
    assert mask.bitmap.tolist() == [[False, True], [True, False]]

    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P7\n2 2\n255\n" + bytes(4))
    with pytest.raises(DataError, match="magic"):
        fio.read_pgm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(DataError, match="raster"):
        fio.read_pgm(short)


def test_coords_reader(tmp_path):
    path = tmp_path / "pts.csv"
    path.write_text("# x,y\n1.5,2.5\n3.0,4.0\n")
    pts = fio.read_coords(path)
    assert pts.tolist() == [[1.5, 2.5], [3.0, 4.0]]
    path.write_text("1.5\n")
    with pytest.raises(DataError):
        fio.read_coords(path)


def test_config_reader(tmp_path):
    path = tmp_path / "conf"
    path.write_text("# comment\nbuilder = opf\nruns=5\n\nseed=42\n")
    assert fio.read_config(path) == {"builder": "opf", "runs": "5", "seed": "42"}
    path.write_text("builder opf\n")
    with pytest.raises(DataError, match="key=value"):
        fio.read_config(path)


def test_predictions_reader(tmp_path):
    path = tmp_path / "pred.csv"
    path.write_text("run,image_id,predicted\n0,img1,pos\n1,img1,neg\n")
    preds = fio.read_predictions(path)
    assert preds == {(0, "img1"): "pos", (1, "img1"): "neg"}
    path.write_text("run,image_id,predicted\nx,img1,pos\n")
    with pytest.raises(DataError, match="not an integer"):
        fio.read_predictions(path)
    path.write_text("a,b\n")
    with pytest.raises(DataError, match="header"):
        fio.read_predictions(path)


def test_write_histograms(tmp_path):
    path = tmp_path / "h.csv"
    fio.write_histograms(path, [("a", "pos", [1, 2, 0]), ("b", None, [0, 0, 3])])
    lines = path.read_text().splitlines()
    assert lines[0] == "image_id,label,word_0,word_1,word_2"
    assert lines[1] == "a,pos,1,2,0"
    assert lines[2] == "b,,0,0,3"


# -- reports ------------------------------------------------------------------------

def test_report_json_byte_identical(tmp_path):
    report = {"kind": "experiment", "config": {"a": 1}, "runs": [],
              "aggregate": {"completed_runs": 0, "failed_runs": 0,
                            "mean_accuracy": None, "std_accuracy": None,
                            "mean_sensitivity": None, "mean_specificity": None}}
    p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
    fio.write_report(p1, report)
    fio.write_report(p2, report)
    assert p1.read_bytes() == p2.read_bytes()


def test_render_experiment_table():
    report = {
        "kind": "experiment",
        "config": {"builder": "kmeans", "size": 10, "classifier": "opf_cpl"},
        "aggregate": {"completed_runs": 3, "failed_runs": 0, "mean_accuracy": 0.915,
                      "std_accuracy": 0.02, "mean_sensitivity": 0.9, "mean_specificity": 0.93},
    }
    text = fio.render_table(report)
    assert "91.5±2.0" in text
    assert "completed runs" in text


def test_render_sweep_table_alignment():
    cells = []
    for b in ("random", "kmeans"):
        for s in (10, 20):
            for c in ("opf_cpl",):
                cells.append({"builder": b, "size": s, "classifier": c,
                              "mean_accuracy": 0.8, "std_accuracy": 0.1})
    report = {"kind": "sweep", "builders": ["random", "kmeans"], "sizes": [10, 20],
              "classifiers": ["opf_cpl"], "cells": cells}
    text = fio.render_table(report)
    lines = text.splitlines()
    assert lines[0].startswith("builder")
    assert "size=10" in lines[0] and "size=20" in lines[0]
    assert len(lines) == 1 + 1 + 2  # header, rule, one row per builder/classifier
    with pytest.raises(DataError):
        fio.render_table({"kind": "mystery"})
