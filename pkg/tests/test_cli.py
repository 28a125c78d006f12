import json

import pytest

from hbtrack.cli import main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["synth", "--num-frames", "40", "--seed", "2", "--out-dir", str(d)]) == 0
    assert main(["pair", "--detections", str(d / "detections.jsonl"),
                 "--out", str(d / "paired.jsonl")]) == 0
    return d


def test_pipeline(run_dir):
    d = run_dir
    assert main(["track", "--detections", str(d / "paired.jsonl"), "--out", str(d / "res.txt")]) == 0
    assert main(["eval", "--gt", str(d / "gt.txt"), "--results", str(d / "res.txt"),
                 "--out", str(d / "report.json"), "--gt-head", str(d / "gt_head.txt"),
                 "--pairs", str(d / "paired.jsonl"), "--figure", str(d / "report.png")]) == 0
    report = json.loads((d / "report.json").read_text())
    assert report["mota"] > 0
    assert report["pair_mismatch_rate"] is not None
    assert (d / "report.png").stat().st_size > 0
    echoed = json.loads((d / "res.config.json").read_text())
    assert echoed["tracker"]["max_age"] == 10 and echoed["body_only"] is False


def test_eval_on_itself(run_dir):
    d = run_dir
    assert main(["eval", "--gt", str(d / "gt.txt"), "--results", str(d / "gt.txt"),
                 "--out", str(d / "self.json")]) == 0
    rep = json.loads((d / "self.json").read_text())
    assert rep["mota"] == 1.0 and rep["idf1"] == 1.0


def test_config_precedence(run_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_age": 4, "min_hits": 3}))
    out = tmp_path / "r.txt"
    assert main(["track", "--detections", str(run_dir / "paired.jsonl"), "--out", str(out),
                 "--config", str(cfg), "--min-hits", "1", "--no-couple-parts"]) == 0
    echoed = json.loads((tmp_path / "r.config.json").read_text())["tracker"]
    assert (echoed["max_age"], echoed["min_hits"], echoed["couple_parts"]) == (4, 1, False)
    assert echoed["high_conf"] == 0.6
    # the echoed file is itself a valid config
    again = tmp_path / "again.txt"
    assert main(["track", "--detections", str(run_dir / "paired.jsonl"), "--out", str(again),
                 "--config", str(tmp_path / "r.config.json")]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_body_only_switches_more(tmp_path):
    assert main(["synth", "--preset", "occlusion", "--seed", "0", "--out-dir", str(tmp_path)]) == 0
    assert main(["pair", "--detections", str(tmp_path / "detections.jsonl"),
                 "--out", str(tmp_path / "p.jsonl")]) == 0
    sw = {}
    for name, extra in (("hb", []), ("body", ["--body-only"])):
        res = tmp_path / f"{name}.txt"
        assert main(["track", "--detections", str(tmp_path / "p.jsonl"), "--out", str(res)] + extra) == 0
        assert main(["eval", "--gt", str(tmp_path / "gt.txt"), "--results", str(res),
                     "--out", str(tmp_path / f"{name}.json")]) == 0
        sw[name] = json.loads((tmp_path / f"{name}.json").read_text())["id_switches"]
    assert sw["hb"] < sw["body"]


def test_tile_and_fuse(tmp_path):
    assert main(["synth", "--preset", "gigapixel", "--num-frames", "3", "--out-dir", str(tmp_path)]) == 0
    assert main(["tile", "--width", "12800", "--height", "6400", "--scales", "1600", "6400",
                 "--out", str(tmp_path / "plan.json"), "--detections",
                 str(tmp_path / "detections.jsonl"), "--tiled-out", str(tmp_path / "t.jsonl")]) == 0
    assert main(["fuse", "--plan", str(tmp_path / "plan.json"), "--detections",
                 str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "f.jsonl")]) == 0
    n_in = len((tmp_path / "t.jsonl").read_text().splitlines())
    n_out = len((tmp_path / "f.jsonl").read_text().splitlines())
    assert 1 < n_out < n_in


def test_loss_check(tmp_path):
    out = tmp_path / "loss.json"
    assert main(["loss-check", "--random", "5", "--seed", "3", "--out", str(out),
                 "--save-batches", str(tmp_path / "b.jsonl")]) == 0
    rep = json.loads(out.read_text())
    assert rep["failed"] == [] and len(rep["batches"]) == 5
    assert main(["loss-check", "--batches", str(tmp_path / "b.jsonl")]) == 0


def test_render_and_ablation(run_dir, tmp_path):
    assert main(["render", "--results", str(run_dir / "gt.txt"), "--width", "1920",
                 "--height", "1080", "--frames", "1", "5", "--out-dir", str(tmp_path / "fr")]) == 0
    assert sorted(p.name for p in (tmp_path / "fr").iterdir()) == ["frame_00001.png",
                                                                   "frame_00005.png"]
    assert main(["ablation", "pairing", "--seeds", "2", "--num-frames", "20",
                 "--out", str(tmp_path / "a.csv"), "--figure", str(tmp_path / "a.png")]) == 0
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "seed,method,mismatch_rate,heavy_mismatch_rate" and len(lines) == 5


def test_errors(tmp_path, capsys):
    assert main(["track", "--detections", str(tmp_path / "missing.jsonl"),
                 "--out", str(tmp_path / "r.txt")]) == 1
    assert "no such file" in capsys.readouterr().err
    assert not (tmp_path / "r.txt").exists()
    assert main(["track", "--frobnicate"]) == 2
    assert main(["synth", "--out-dir", str(tmp_path), "--preset", "nope"]) == 2


def test_failed_command_removes_outputs(tmp_path):
    plan_path = tmp_path / "plan.json"
    rc = main(["tile", "--width", "4000", "--height", "3000", "--out", str(plan_path),
               "--detections", str(tmp_path / "missing.jsonl"), "--tiled-out", str(tmp_path / "t.jsonl")])
    assert rc == 1
    assert list(tmp_path.iterdir()) == []
