import json

import pytest

from hyperl1.analysis import AlgorithmLabel
from hyperl1.cli import RESULTS_SCHEMA, main, read_table, version_string
from hyperl1.constructors import ConstructorConfig, build_pudding
from hyperl1.network import MlpSpec, MlpWeights

TINY = {
    "train": {"n_inputs": 2, "n_hidden": 4, "steps": 4, "checkpoint_every": 2, "batch_size": 32,
              "hyper": {"depth": 2, "act_width": 4, "pos_width": 2, "random_width": 2, "head_width": 2,
                        "learned_width": 2, "channel_width": 2}},
    "baseline": {"n_inputs": 2, "n_hidden": 4, "steps": 20},
    "seeds": [0, 1],
    "beta_steps": 3,
    "eval_size": 500,
    "grid_eval_size": 200,
    "generalize_n_inputs": [2, 3, 4],
    "generalize_n_hidden": [2, 4, 6],
    "calibration_per_class": 10,
}


def write_config(path, **over):
    cfg = json.loads(json.dumps(TINY))
    for k, v in over.items():
        cfg[k] = dict(cfg[k], **v) if isinstance(v, dict) else v
    path.write_text(json.dumps(cfg))
    return str(path)


def run(out, *args, config=None):
    argv = list(args) + ["--out", str(out), "--quiet"]
    if config:
        argv += ["--config", config]
    return main(argv)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = write_config(out / "config.json")
    assert run(out, "train", config=cfg) == 0
    return out, cfg


def weights_file(path, w):
    path.write_text(json.dumps(w.to_dict()))
    return str(path)


def test_draw_pudding_and_determinism(tmp_path):
    src = weights_file(tmp_path / "pud.json", build_pudding(ConstructorConfig(16, 48)))
    assert run(tmp_path, "draw", src) == 0
    svg = (tmp_path / "pud.svg").read_bytes()
    side = json.loads((tmp_path / "pud.layout.json").read_text())
    assert side["edge_floor_fraction"] == 0.02 and side["version"] == version_string()
    assert run(tmp_path, "draw", src) == 4  # refuse by default
    assert run(tmp_path, "draw", src, "--overwrite", "replace") == 0
    assert (tmp_path / "pud.svg").read_bytes() == svg
    assert "weights" in json.loads((tmp_path / "pud.json").read_text())  # source untouched


def test_draw_zero_network(tmp_path):
    src = weights_file(tmp_path / "zero.json", MlpWeights.zeros(MlpSpec.l1(3, 4)))
    assert run(tmp_path, "draw", src) == 0
    doc = (tmp_path / "zero.svg").read_text()
    assert doc.count("<line") == 0 and doc.count("<circle") == 8


def test_draw_malformed_json(tmp_path, caplog):
    bad = tmp_path / "bad.json"
    bad.write_text('{"weights": [1, 2,, 3]}')
    assert run(tmp_path, "draw", str(bad)) == 2
    assert "line 1" in caplog.text and "column" in caplog.text
    assert not (tmp_path / "bad.svg").exists()


def test_draw_shape_mismatch(tmp_path):
    bad = tmp_path / "shape.json"
    bad.write_text(json.dumps({"weights": [[[1.0, 2.0]], [[1.0, 2.0]]], "biases": [[0.0], [0.0]]}))
    assert run(tmp_path, "draw", str(bad)) == 2


def test_calibrate(tmp_path):
    assert run(tmp_path, "calibrate", "--scale", "desk") == 0
    th = json.loads((tmp_path / "thresholds.json").read_text())
    assert th["theta1"] > 0 and th["theta2"] > 0


def test_train_resume_and_mismatch(tiny_run, tmp_path):
    out, cfg = tiny_run
    names = sorted(p.name for p in (out / "checkpoints").glob("*.json"))
    assert names == ["ckpt_0000000.json", "ckpt_0000002.json", "ckpt_0000004.json"]
    resume_dir = tmp_path / "resume"
    resume_dir.mkdir()
    assert run(resume_dir, "train", config=write_config(tmp_path / "short.json", train={"steps": 2})) == 0
    assert run(resume_dir, "train", config=write_config(tmp_path / "long.json")) == 0
    assert (resume_dir / "checkpoints" / "ckpt_0000004.json").exists()
    meta, rows = read_table(resume_dir / "train_log.csv")
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]  # one row per update, none repeated across the resume
    other = write_config(tmp_path / "other.json", train={"n_hidden": 5})
    assert run(resume_dir, "train", config=other) == 2


def test_sweep_and_ablate(tiny_run):
    out, cfg = tiny_run
    assert run(out, "sweep", "--overwrite", "replace", config=cfg) == 0
    meta, rows = read_table(out / "sweep.csv")
    assert len(rows) == 3 * 2 * 2
    assert meta["schema"] == RESULTS_SCHEMA and meta["version"] == version_string()
    assert all(0.0 <= float(r["alpha3"]) <= 2.0 for r in rows)
    scatter = json.loads((out / "sweep_order_params.json").read_text())
    assert "encoder_independent" in scatter and len(scatter["points"]) == len(rows)
    assert run(out, "ablate", "--overwrite", "replace", config=cfg) == 0
    _, rows = read_table(out / "ablate.csv")
    assert len(rows) == 6 and {r["mode"] for r in rows} == {"decoder_only"}


def test_desk_sweep_row_count(desk_sweep):
    meta, rows = desk_sweep
    assert len(rows) == 30 * 5 * 2
    assert all(0.0 <= float(r["alpha3"]) <= 2.0 for r in rows)


def test_phases(tiny_run, tmp_path):
    out, cfg = tiny_run
    ckpts = sorted(str(p) for p in (out / "checkpoints").glob("*.json"))
    assert run(tmp_path, "phases", *ckpts, config=cfg) == 0
    _, rows = read_table(tmp_path / "phases.csv")
    svg = (tmp_path / "phases.svg").read_text()
    assert len(rows) == 3 * 3 and svg.count("<rect") == len(rows)
    assert {r["label"] for r in rows} <= {l.value for l in AlgorithmLabel}
    assert all(f'fill="{AlgorithmLabel(r["label"]).color}"' in svg for r in rows)
    assert run(tmp_path / "one", "phases", ckpts[0], config=cfg) == 2


def test_generalize(tiny_run, tmp_path):
    out, cfg = tiny_run
    ckpt = sorted((out / "checkpoints").glob("*.json"))[-1]
    assert run(tmp_path, "generalize", "--checkpoint", str(ckpt), config=cfg) == 0
    meta, rows = read_table(tmp_path / "generalize.csv")
    assert {(int(r["n_inputs"]), int(r["n_hidden"])) for r in rows} == {(a, b) for a in (2, 3, 4) for b in (2, 4, 6)}
    assert all(r["shape_ok"] == "True" for r in rows)
    assert json.loads(meta["contour_levels"]) == [0.07, 0.15]


def test_baseline(tiny_run, tmp_path):
    out, cfg = tiny_run
    ckpt = sorted((out / "checkpoints").glob("*.json"))[-1]
    assert run(tmp_path, "baseline", "--checkpoint", str(ckpt), config=cfg) == 0
    _, rows = read_table(tmp_path / "baseline.csv")
    assert [r["experiment"] for r in rows] == ["baseline", "hypernet"]
    for name in ("baseline.svg", "hypernet.svg"):
        assert "<svg" in (tmp_path / name).read_text()


def test_overwrite_policies(tmp_path):
    assert run(tmp_path, "calibrate", "--scale", "desk") == 0
    assert run(tmp_path, "calibrate", "--scale", "desk") == 4
    assert run(tmp_path, "calibrate", "--scale", "desk", "--overwrite", "version") == 0
    assert (tmp_path / "thresholds.v1.json").exists()


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert run(tmp_path, "calibrate", config=str(bad)) == 2
    assert run(tmp_path, "sweep", "--scale", "desk") == 2  # no checkpoints yet
