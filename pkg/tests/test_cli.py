import json

import pytest

from strandsim.cli import build_parser, main
from strandsim.groom import load_groom
from strandsim.motion import parse_bvh


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Groom + clip + checkpoints built through the CLI itself."""
    root = tmp_path_factory.mktemp("cli_ws")
    paths = {
        "groom": str(root / "g.groom"),
        "clip": str(root / "sway.bvh"),
        "encoder": str(root / "enc.ckpt"),
        "sim": str(root / "sim.ckpt"),
        "root": root,
    }
    assert main(["gen-groom", "--style", "wavy", "--strands", "10", "--seed", "4", "--out", paths["groom"]]) == 0
    assert main(["gen-motion", "--kind", "sway", "--seconds", "0.5", "--out", paths["clip"]]) == 0
    assert (
        main(
            [
                "train-encoder",
                "--groom", paths["groom"],
                "--steps", "25",
                "--batch-size", "8",
                "--out", paths["encoder"],
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "train-sim",
                "--groom", paths["groom"],
                "--clip", paths["clip"],
                "--encoder", paths["encoder"],
                "--steps", "2",
                "--batch-size", "2",
                "--history", "5",
                "--no-body",
                "--out", paths["sim"],
            ]
        )
        == 0
    )
    return paths


def test_gen_groom_roundtrip(tmp_path, capsys):
    out = tmp_path / "g.groom"
    rc = main(["gen-groom", "--style", "straight", "--strands", "100", "--seed", "7", "--out", str(out)])
    assert rc == 0
    assert "100 strands" in capsys.readouterr().out
    assert load_groom(out).vertices.shape[0] == 100


def test_gen_motion_frame_count(tmp_path, capsys):
    out = tmp_path / "m.bvh"
    rc = main(["gen-motion", "--kind", "sway", "--seconds", "2", "--out", str(out)])
    assert rc == 0
    assert "60 frames" in capsys.readouterr().out
    assert parse_bvh(out.read_text()).frames == 60


def test_same_seed_same_bytes(tmp_path):
    blobs = []
    for name in ("a.groom", "b.groom"):
        out = tmp_path / name
        assert main(["gen-groom", "--style", "curly", "--strands", "8", "--seed", "9", "--out", str(out)]) == 0
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


def test_train_sim_without_encoder_names_prerequisite(ws, tmp_path, capsys):
    rc = main(
        [
            "train-sim",
            "--groom", ws["groom"],
            "--clip", ws["clip"],
            "--steps", "1",
            "--out", str(tmp_path / "s.ckpt"),
        ]
    )
    assert rc == 2
    assert "train-encoder" in capsys.readouterr().err


def test_invalid_choice_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["gen-groom", "--style", "mohawk", "--strands", "5", "--out", "x.groom"])
    assert e.value.code == 2


def test_missing_input_exits_4(tmp_path, capsys):
    rc = main(
        [
            "train-encoder",
            "--groom", str(tmp_path / "missing.groom"),
            "--steps", "1",
            "--out", str(tmp_path / "e.ckpt"),
        ]
    )
    assert rc == 4
    assert "error (io)" in capsys.readouterr().err


def test_bad_beta_exits_2(ws, tmp_path, capsys):
    rc = main(
        [
            "infer",
            "--checkpoint", ws["sim"],
            "--groom", ws["groom"],
            "--clip", ws["clip"],
            "--out-dir", str(tmp_path / "t"),
            "--beta", "1,2",
        ]
    )
    assert rc == 2
    assert "four" in capsys.readouterr().err


def test_infer_eval_bench_pipeline(ws, tmp_path, capsys):
    out_dir = tmp_path / "traj"
    rc = main(
        [
            "infer",
            "--checkpoint", ws["sim"],
            "--groom", ws["groom"],
            "--clip", ws["clip"],
            "--out-dir", str(out_dir),
        ]
    )
    assert rc == 0
    assert "wrote 15 frames" in capsys.readouterr().out
    assert sorted(out_dir.glob("frame_*.obj"))[-1].name == "frame_00014.obj"

    report = tmp_path / "self.json"
    rc = main(
        [
            "eval",
            "--candidate", str(out_dir),
            "--reference", str(out_dir),
            "--groom", ws["groom"],
            "--clip", ws["clip"],
            "--no-body",
            "--out", str(report),
        ]
    )
    assert rc == 0
    assert "rmse 0" in capsys.readouterr().out
    assert json.loads(report.read_text())["rmse"]["mean"] == 0.0

    rc = main(
        [
            "bench",
            "--checkpoint", ws["sim"],
            "--strands", "4",
            "--method", "neural",
            "--frames", "100",
            "--warmup", "1",
            "--no-body",
            "--out-dir", str(tmp_path / "bench"),
        ]
    )
    assert rc == 0
    table = capsys.readouterr().out
    assert "neural" in table and "mean_ms" in table


def test_config_file_supplies_defaults(ws, tmp_path, capsys):
    cfg = {
        "paths": {"grooms": [ws["groom"]], "out": str(tmp_path / "enc.ckpt")},
        "train": {"steps": 7, "batch_size": 4},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train-encoder", "--config", str(cfg_path)])
    assert rc == 0
    assert "7 steps" in capsys.readouterr().out


def test_config_flag_overrides_file(ws, tmp_path, capsys):
    cfg = {
        "paths": {"grooms": [ws["groom"]], "out": str(tmp_path / "enc.ckpt")},
        "train": {"steps": 7, "batch_size": 4},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train-encoder", "--config", str(cfg_path), "--steps", "3"])
    assert rc == 0
    assert "3 steps" in capsys.readouterr().out


def test_config_invalid_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "run.json"
    bad.write_text("{not json")
    rc = main(["gen-groom", "--style", "wavy", "--strands", "2", "--out", str(tmp_path / "g.groom"), "--config", str(bad)])
    assert rc == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_config_schema_violation_exits_2(tmp_path, capsys):
    bad = tmp_path / "run.json"
    bad.write_text(json.dumps({"train": {"steps": -5}}))
    rc = main(["gen-groom", "--style", "wavy", "--strands", "2", "--out", str(tmp_path / "g.groom"), "--config", str(bad)])
    assert rc == 2
    assert "rejected" in capsys.readouterr().err


def test_parser_lists_all_subcommands():
    ap = build_parser()
    text = ap.format_help()
    for name in ("gen-groom", "gen-motion", "train-encoder", "train-sim", "infer", "simulate-xpbd", "eval", "bench", "serve"):
        assert name in text


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.startswith("strandsim ")
