import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from emagslabel.cli import EXIT_INPUT, EXIT_OK, main, parse_slices, InputError
from emagslabel.container import read_emags, write_emags
from emagslabel.evaluate import evaluate
from emagslabel.geometry import OrientedRect, rect_iou
from emagslabel.grid_core import build_canvas
from emagslabel.labels import LabelRecord, read_labels
from emagslabel.render import LABEL_COLOR, world_to_pixel
from emagslabel.synth import GroundTruth, TruthBox, generate

from conftest import make_scenario


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def ped_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("ped")
    emags = d / "ped.emags"
    labels = d / "ped.jsonl"
    assert main(["synth", "--input", "single_pedestrian", "--output", str(emags), "--seed", "1"]) == 0
    assert main(["label", "--input", str(emags), "--output", str(labels)]) == 0
    return d, emags, labels


# ------------------------------------------------------------------ synth

def test_synth_writes_two_files(tmp_path, capsys):
    out = tmp_path / "a.emags"
    assert main(["synth", "--input", "single_pedestrian", "--output", str(out)]) == EXIT_OK
    assert out.exists() and (tmp_path / "a.emags.truth.jsonl").exists()
    assert len(read_emags(out)) == 100


def test_synth_malformed_json_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "duration": 3,\n  "grid": {"width": 4 "height": 4}\n}\n')
    code = main(["synth", "--input", str(bad), "--output", str(tmp_path / "x.emags")])
    assert code == EXIT_INPUT
    assert ":3:" in capsys.readouterr().err


def test_synth_invalid_scenario_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"duration": -1, "grid": {"width": 4, "height": 4}}))
    assert main(["synth", "--input", str(bad), "--output", str(tmp_path / "x")]) == EXIT_INPUT
    assert main(["synth", "--input", "no_such_thing", "--output", str(tmp_path / "y")]) == EXIT_INPUT


def test_synth_same_seed_same_hash(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--input", "three_peds", "--output", str(tmp_path / f"{name}.emags"),
                     "--seed", "5"]) == 0
    assert _sha(tmp_path / "a.emags") == _sha(tmp_path / "b.emags")
    assert _sha(tmp_path / "a.emags.truth.jsonl") == _sha(tmp_path / "b.emags.truth.jsonl")


def test_synth_writes_buildings(tmp_path):
    out = tmp_path / "g.emags"
    assert main(["synth", "--input", "glass_mirror", "--output", str(out)]) == 0
    doc = json.loads((tmp_path / "g.emags.buildings.geojson").read_text())
    assert doc["features"]


# ------------------------------------------------------------------ label

def test_label_empty_scene(tmp_path):
    emags, _ = generate(make_scenario(duration=10), 0)
    src = tmp_path / "empty.emags"
    write_emags(src, emags)
    out = tmp_path / "empty.jsonl"
    assert main(["label", "--input", str(src), "--output", str(out)]) == 0
    assert out.read_text() == ""
    summary = json.loads((tmp_path / "empty.jsonl.summary.json").read_text())
    assert summary["records"] == 0 and summary["objects_found"] == 0


def test_label_one_pedestrian_one_track(ped_run):
    d, _, labels = ped_run
    recs = read_labels(labels)
    assert recs and len({r.track for r in recs}) == 1
    summary = json.loads((d / "ped.jsonl.summary.json").read_text())
    assert summary["building_filter"] is False
    assert summary["objects_found"] == 1


def test_label_round_trip(ped_run):
    _, _, labels = ped_run
    lines = labels.read_text().splitlines()
    recs = read_labels(labels)
    assert [r.to_json() for r in recs] == lines
    keys = [(r.track, r.slice) for r in recs]
    assert len(set(keys)) == len(keys)


def test_label_deterministic(ped_run, tmp_path):
    _, emags, labels = ped_run
    again = tmp_path / "again.jsonl"
    assert main(["label", "--input", str(emags), "--output", str(again), "--jobs", "2"]) == 0
    assert _sha(again) == _sha(labels)


def test_label_corrupt_container(tmp_path, capsys):
    bad = tmp_path / "bad.emags"
    bad.write_bytes(b"not an emags container at all")
    assert main(["label", "--input", str(bad), "--output", str(tmp_path / "o.jsonl")]) == EXIT_INPUT
    assert main(["label", "--input", str(tmp_path / "missing"), "--output", str(tmp_path / "o")]) == EXIT_INPUT


def test_label_bad_config_and_buildings(ped_run, tmp_path):
    _, emags, _ = ped_run
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["label", "--input", str(emags), "--output", str(tmp_path / "o"),
                 "--config", str(cfg)]) == EXIT_INPUT
    b = tmp_path / "b.geojson"
    b.write_text("{")
    assert main(["label", "--input", str(emags), "--output", str(tmp_path / "o"),
                 "--buildings", str(b)]) == EXIT_INPUT


# ------------------------------------------------------------------- eval

def _truth_box(t, center, phi=0.0, w=2.0, l=4.5):
    return TruthBox("car", t, 0.1 * t, center, phi, w, l, 1.0, True)


def _label(t, center, phi=0.0, w=2.0, l=4.5, track=0):
    return LabelRecord(track, t, 0.1 * t, center, phi, w, l, (w, l), "forward", False)


def test_eval_identical():
    truth = GroundTruth([_truth_box(t, (t * 0.5, 1.0), 0.3) for t in range(10)])
    labels = [_label(t, (t * 0.5, 1.0), 0.3) for t in range(10)]
    rep = evaluate(labels, truth)
    a = rep["actors"][0]
    assert a["matched_fraction"] == 1.0
    assert a["mean_iou"] == pytest.approx(1.0)
    assert a["dim_error"] == pytest.approx(0.0)
    assert a["id_switches"] == 0 and rep["unmatched_tracks"] == []


def test_eval_one_cell_shift_closed_form():
    truth = GroundTruth([_truth_box(0, (0.0, 0.0))])
    rep = evaluate([_label(0, (0.15, 0.0))], truth)
    want = (2.0 * 4.35) / (2 * 9.0 - 2.0 * 4.35)
    assert want == pytest.approx(0.93, abs=0.01)
    assert rep["actors"][0]["mean_iou"] == pytest.approx(want, rel=1e-9)


def test_eval_rotated_iou_symmetry():
    a = OrientedRect(1.0, 2.0, 0.7, 4.5, 2.0)
    b = OrientedRect(1.1, 2.05, 0.75, 4.5, 2.0)
    assert rect_iou(a, b) == pytest.approx(rect_iou(b, a))
    assert rect_iou(a, a.translated(100, 0)) == 0.0


def test_eval_empty_labels():
    truth = GroundTruth([_truth_box(t, (0.0, 0.0)) for t in range(5)])
    rep = evaluate([], truth)
    assert rep["actors"][0]["matched_fraction"] == 0.0


def test_eval_id_switch_counted():
    truth = GroundTruth([_truth_box(t, (0.0, 0.0)) for t in range(6)])
    labels = [_label(t, (0.0, 0.0), track=0 if t < 3 else 1) for t in range(6)]
    assert evaluate(labels, truth)["actors"][0]["id_switches"] == 1


def test_eval_cli(ped_run, tmp_path, capsys):
    d, emags, labels = ped_run
    out = tmp_path / "report.json"
    assert main(["eval", "--input", str(labels), "--truth", str(d / "ped.emags.truth.jsonl"),
                 "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["actors"][0]["actor"] == "ped"
    assert rep["actors"][0]["mean_iou"] > 0.5
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"track": 1}\n')
    assert main(["eval", "--input", str(bad), "--truth", str(d / "ped.emags.truth.jsonl")]) == EXIT_INPUT


# ----------------------------------------------------------------- render

def test_parse_slices():
    assert list(parse_slices("2..4", 10)) == [2, 3, 4]
    assert list(parse_slices(None, 3)) == [0, 1, 2]
    with pytest.raises(InputError):
        parse_slices("5..12", 10)
    with pytest.raises(InputError):
        parse_slices("a..b", 10)


def test_render_single_slice(tmp_path):
    emags, _ = generate(make_scenario(duration=1), 0)
    src = tmp_path / "one.emags"
    write_emags(src, emags)
    out = tmp_path / "img"
    assert main(["render", "--input", str(src), "--output", str(out)]) == 0
    files = sorted(out.glob("*.png"))
    assert len(files) == 1
    img = np.asarray(Image.open(files[0]))
    assert img.shape == (60 * 2, 80 * 2, 3)
    assert not (img == LABEL_COLOR).all(axis=2).any()


def test_render_label_corners_probe(tmp_path):
    emags, _ = generate(make_scenario(duration=3), 0)
    src = tmp_path / "s.emags"
    write_emags(src, emags)
    rec = _label(1, (0.3, -0.45), 0.0, w=1.5, l=3.0)
    labels = tmp_path / "l.jsonl"
    labels.write_text(rec.to_json() + "\n")
    out = tmp_path / "img"
    scale = 4
    assert main(["render", "--input", str(src), "--output", str(out), "--labels", str(labels),
                 "--slices", "1..2", "--scale", str(scale)]) == 0
    assert sorted(p.name for p in out.glob("*.png")) == ["slice_00001.png", "slice_00002.png"]
    img = np.asarray(Image.open(out / "slice_00001.png"))
    canvas = build_canvas(read_emags(src))
    rect = OrientedRect(rec.center[0], rec.center[1], rec.orientation, rec.length, rec.width)
    for e, n in rect.corners():
        x, y = world_to_pixel(canvas, e, n, scale)
        xi, yi = min(int(round(x)), img.shape[1] - 1), min(int(round(y)), img.shape[0] - 1)
        patch = img[max(yi - 1, 0):yi + 2, max(xi - 1, 0):xi + 2]
        assert (patch == LABEL_COLOR).all(axis=2).any()
    assert not (np.asarray(Image.open(out / "slice_00002.png")) == LABEL_COLOR).all(axis=2).any()


def test_render_out_of_range(tmp_path, capsys):
    emags, _ = generate(make_scenario(duration=2), 0)
    src = tmp_path / "s.emags"
    write_emags(src, emags)
    assert main(["render", "--input", str(src), "--output", str(tmp_path / "o"),
                 "--slices", "0..5"]) == EXIT_INPUT
    assert "outside" in capsys.readouterr().err
