import json
import subprocess
import sys

import numpy as np
import pytest

from pcwm import cli
from pcwm.geometry_io import read_cloud

SUBCOMMANDS = ["sample", "embed", "extract", "attack", "metrics", "train", "evaluate", "roc", "synth"]


def run(argv, capsys):
    try:
        code = cli.main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cloud_file(small_root, tmp_path, capsys):
    mesh = sorted(small_root.rglob("*.off"))[0]
    path = tmp_path / "c.pcb"
    code, _, _ = run(["sample", mesh, "--points", 1024, "--seed", 3, "-o", path], capsys)
    assert code == 0
    return path


def test_embed_then_extract_prints_bits(cloud_file, tmp_path, capsys):
    wm, key = tmp_path / "wm.pcb", tmp_path / "key.json"
    assert run(["embed", cloud_file, "--bits", "101", "-o", wm, "--key", key], capsys)[0] == 0
    code, out, _ = run(["extract", wm, "--key", key], capsys)
    assert code == 0 and out.strip() == "101"
    assert json.loads(key.read_text())["mode"] == "reference"


def test_qim_xyz_round_trip(cloud_file, tmp_path, capsys):
    wm, key = tmp_path / "wm.xyz", tmp_path / "key.json"
    args = ["embed", cloud_file, "--bits", "0110", "--mode", "qim", "-o", wm, "--key", key]
    assert run(args, capsys)[0] == 0
    assert run(["extract", wm, "--key", key], capsys)[1].strip() == "0110"


def test_attack_and_metrics(cloud_file, tmp_path, capsys):
    wm, key = tmp_path / "wm.pcb", tmp_path / "key.json"
    run(["embed", cloud_file, "--bits", "110", "-o", wm, "--key", key], capsys)
    out1, out2 = tmp_path / "a1.pcb", tmp_path / "a2.pcb"
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "dropout", "params": {"fraction": 0.1}, "seed": 4}))
    assert run(["attack", wm, "--spec", spec, "-o", out1], capsys)[0] == 0
    assert run(["attack", wm, "--spec", spec, "-o", out2], capsys)[0] == 0
    assert len(read_cloud(out1)) == 1024 - 102
    assert read_cloud(out1).tobytes() == read_cloud(out2).tobytes()
    code, out, _ = run(["metrics", wm, out1, "--key", key, "--bits", "110"], capsys)
    assert code == 0
    fields = dict(line.split(": ") for line in out.strip().splitlines())
    assert {"chamfer", "psnr", "accuracy", "ber", "iou"} <= set(fields)


def test_unknown_flag_exits_1(capsys):
    code, _, err = run(["embed", "x.pcb", "--bogus"], capsys)
    assert code == 1 and "usage:" in err


def test_negative_alpha_names_field(cloud_file, tmp_path, capsys):
    code, _, err = run(["embed", cloud_file, "--bits", "1", "--alpha", "-1", "-o", tmp_path / "o.pcb",
                        "--key", tmp_path / "k.json"], capsys)
    assert code == 1 and "alpha" in err


def test_data_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n")
    assert run(["sample", bad, "-o", tmp_path / "o.pcb"], capsys)[0] == 2
    assert run(["extract", tmp_path / "missing.pcb", "--key", tmp_path / "k.json"], capsys)[0] == 2


def test_bad_config_exits_1(small_root, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}, "colour": "red"}))
    code, _, err = run(["train", "--dataset", small_root, "--config", cfg, "-o", tmp_path / "c.pcwm"], capsys)
    assert code == 1 and "colour" in err


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_exits_0(command, capsys):
    code, out, _ = run([command, "--help"], capsys)
    assert code == 0 and "usage:" in out
    parser = cli.build_parser()
    sub = parser._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in out


def test_train_evaluate_roc_pipeline(small_root, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "embed": {"n_points": 256},
        "decoder": {"sa1_centroids": 16, "sa1_k": 4, "sa1_mlp": [3, 8], "sa2_centroids": 8,
                    "sa2_k": 4, "sa2_mlp": [11, 8]},
        "train": {"epochs": 2, "batch_size": 2, "augment": False},
    }))
    ckpt = tmp_path / "m.pcwm"
    code, out, err = run(["train", "--dataset", small_root, "--config", cfg, "-o", ckpt], capsys)
    assert code == 0, err
    assert (tmp_path / "m.log.csv").exists()
    attacks = tmp_path / "attacks.json"
    attacks.write_text(json.dumps([{"kind": "clean", "label": "clean"}, {"kind": "shuffle", "seed": 1}]))
    report = tmp_path / "report"
    code, out, err = run(["evaluate", "--dataset", small_root, "--key-config", cfg, "--ckpt", ckpt,
                          "--attacks", attacks, "-o", report], capsys)
    assert code == 0, err
    assert (report / "results.csv").exists() and (report / "roc.svg").exists()
    assert "| clean | 1.000 |" in out
    code, out, err = run(["roc", "--dataset", small_root, "--key-config", cfg, "--ckpt", ckpt,
                          "-o", tmp_path / "roc"], capsys)
    assert code == 0 and out.startswith("AUC")


def test_synth_and_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pcwm", "synth", str(tmp_path / "d"), "--train", "1",
                           "--test", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(list((tmp_path / "d").rglob("*.off"))) + len(list((tmp_path / "d").rglob("*.ply"))) == 20


def test_sample_is_deterministic(small_root, tmp_path, capsys):
    mesh = sorted(small_root.rglob("*.off"))[0]
    for name in ("a.pcb", "b.pcb"):
        run(["sample", mesh, "--points", 64, "--seed", 9, "-o", tmp_path / name], capsys)
    a, b = read_cloud(tmp_path / "a.pcb"), read_cloud(tmp_path / "b.pcb")
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a, axis=1).max() - 1.0) < 1e-12
