import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from strandsim import artifacts
from strandsim.groom import load_groom
from strandsim.motion import parse_bvh
from strandsim.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def ws(client, tmp_path_factory):
    """Tiny end-to-end workspace: groom, clip, both checkpoints."""
    root = tmp_path_factory.mktemp("ws")
    paths = {
        "groom": str(root / "g.groom"),
        "clip": str(root / "sway.bvh"),
        "encoder": str(root / "enc.ckpt"),
        "sim": str(root / "sim.ckpt"),
        "root": root,
    }
    r = client.post(
        "/grooms/generate",
        json={"style": "wavy", "strands": 12, "seed": 7, "out": paths["groom"]},
    )
    assert r.status_code == 200, r.text
    r = client.post(
        "/motions/generate",
        json={"kind": "sway", "seconds": 0.5, "out": paths["clip"]},
    )
    assert r.status_code == 200, r.text
    r = client.post(
        "/train/encoder",
        json={
            "grooms": [paths["groom"]],
            "train": {"steps": 30, "batch_size": 8},
            "out": paths["encoder"],
        },
    )
    assert r.status_code == 200, r.text
    paths["encoder_resp"] = r.json()
    r = client.post(
        "/train/simulator",
        json={
            "grooms": [paths["groom"]],
            "clips": [paths["clip"]],
            "encoder": paths["encoder"],
            "train": {"steps": 3, "batch_size": 4, "samples_per_step": 1, "history": 5},
            "use_body": False,
            "out": paths["sim"],
        },
    )
    assert r.status_code == 200, r.text
    paths["sim_resp"] = r.json()
    return paths


def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["version"]


def test_gen_groom_writes_loadable_file(client, ws, tmp_path):
    g = load_groom(ws["groom"])
    assert g.vertices.shape[0] == 12
    man = json.loads((ws["root"] / "g.groom.manifest.json").read_text())
    assert man["command"] == "gen-groom"
    assert man["seed"] == 7
    assert len(man["config_hash"]) == 64


def test_gen_groom_same_seed_same_bytes(client, tmp_path):
    out = []
    for name in ("a.groom", "b.groom"):
        r = client.post(
            "/grooms/generate",
            json={"style": "curly", "strands": 6, "seed": 3, "out": str(tmp_path / name)},
        )
        assert r.status_code == 200
        out.append((tmp_path / name).read_bytes())
    assert out[0] == out[1]


def test_gen_motion_frame_arithmetic(client, tmp_path):
    r = client.post(
        "/motions/generate",
        json={"kind": "sway", "seconds": 2.0, "fps": 30.0, "out": str(tmp_path / "m.bvh")},
    )
    assert r.status_code == 200
    assert r.json()["frames"] == 60
    clip = parse_bvh((tmp_path / "m.bvh").read_text())
    assert clip.frames == 60


def test_validation_failures_report_config_kind(client, tmp_path):
    r = client.post(
        "/grooms/generate",
        json={"style": "bald", "strands": 5, "out": str(tmp_path / "x.groom")},
    )
    assert r.status_code == 400
    assert r.json()["kind"] == "config"
    r = client.post(
        "/grooms/generate",
        json={"style": "wavy", "strands": 0, "out": str(tmp_path / "x.groom")},
    )
    assert r.status_code == 400
    r = client.post(
        "/grooms/generate",
        json={"style": "wavy", "strands": 5, "out": str(tmp_path / "x.groom"), "extra": 1},
    )
    assert r.status_code == 400


def test_missing_input_reports_io_kind(client, tmp_path):
    r = client.post(
        "/train/encoder",
        json={"grooms": [str(tmp_path / "missing.groom")], "out": str(tmp_path / "e.ckpt")},
    )
    assert r.status_code == 500
    assert r.json()["kind"] == "io"


def test_wrong_checkpoint_kind_is_config_error(client, ws, tmp_path):
    r = client.post(
        "/train/simulator",
        json={
            "grooms": [ws["groom"]],
            "clips": [ws["clip"]],
            "encoder": ws["groom"],
            "train": {"steps": 1, "batch_size": 2, "samples_per_step": 1, "history": 5},
            "use_body": False,
            "out": str(tmp_path / "s.ckpt"),
        },
    )
    assert r.status_code == 400
    assert r.json()["kind"] == "config"


def test_encoder_loss_csv_has_one_row_per_step(ws):
    resp = ws["encoder_resp"]
    lines = open(resp["history_csv"]).read().strip().splitlines()
    assert len(lines) == 30 + 1  # header + steps
    assert np.isfinite(resp["final_rmse"])


def test_simulator_loss_csv_and_terms(ws):
    resp = ws["sim_resp"]
    lines = open(resp["history_csv"]).read().strip().splitlines()
    assert len(lines) == 3 + 1
    assert "stretch" in lines[0] and "inertia" in lines[0]


def test_infer_writes_frames_and_timings(client, ws, tmp_path):
    out = tmp_path / "neural"
    r = client.post(
        "/infer",
        json={
            "checkpoint": ws["sim"],
            "groom": ws["groom"],
            "clip": ws["clip"],
            "out_dir": str(out),
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["frames"] == 15
    assert body["strands"] == 12
    traj = artifacts.read_trajectory(out)
    assert traj.shape == (15, 12, 25, 3)
    assert np.isfinite(traj).all()
    timings = (out / "timings.csv").read_text().strip().splitlines()
    assert len(timings) == 16
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "infer"


def test_infer_strand_subset_and_overflow(client, ws, tmp_path):
    r = client.post(
        "/infer",
        json={
            "checkpoint": ws["sim"],
            "groom": ws["groom"],
            "clip": ws["clip"],
            "out_dir": str(tmp_path / "sub"),
            "strands": 5,
        },
    )
    assert r.status_code == 200
    assert r.json()["strands"] == 5
    r = client.post(
        "/infer",
        json={
            "checkpoint": ws["sim"],
            "groom": ws["groom"],
            "clip": ws["clip"],
            "out_dir": str(tmp_path / "over"),
            "strands": 999,
        },
    )
    assert r.status_code == 400
    assert "12 strands" in r.json()["message"]


def test_infer_vertex_count_mismatch(client, ws, tmp_path):
    small = tmp_path / "small.groom"
    r = client.post(
        "/grooms/generate",
        json={"style": "wavy", "strands": 4, "n_vertices": 9, "out": str(small)},
    )
    assert r.status_code == 200
    r = client.post(
        "/infer",
        json={
            "checkpoint": ws["sim"],
            "groom": str(small),
            "clip": ws["clip"],
            "out_dir": str(tmp_path / "bad"),
        },
    )
    assert r.status_code == 400
    assert "vertices" in r.json()["message"]


def test_infer_zero_lock_changes_output(client, ws, tmp_path):
    frames = {}
    for name, flag in (("on", False), ("off", True)):
        r = client.post(
            "/infer",
            json={
                "checkpoint": ws["sim"],
                "groom": ws["groom"],
                "clip": ws["clip"],
                "out_dir": str(tmp_path / name),
                "zero_lock": flag,
            },
        )
        assert r.status_code == 200
        frames[name] = (tmp_path / name / "frame_00005.obj").read_bytes()
    assert frames["on"] != frames["off"]


def test_infer_repeat_is_bit_identical(client, ws, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        r = client.post(
            "/infer",
            json={
                "checkpoint": ws["sim"],
                "groom": ws["groom"],
                "clip": ws["clip"],
                "out_dir": str(tmp_path / name),
            },
        )
        assert r.status_code == 200
        outs.append(b"".join((tmp_path / name / f"frame_{f:05d}.obj").read_bytes() for f in range(15)))
    assert outs[0] == outs[1]


def test_xpbd_simulate_and_eval_self_compare(client, ws, tmp_path):
    xp = tmp_path / "xp"
    r = client.post(
        "/xpbd/simulate",
        json={
            "groom": ws["groom"],
            "clip": ws["clip"],
            "out_dir": str(xp),
            "use_body": False,
        },
    )
    assert r.status_code == 200, r.text
    assert r.json()["frames"] == 15
    report = tmp_path / "self.json"
    r = client.post(
        "/eval",
        json={
            "candidate": str(xp),
            "reference": str(xp),
            "groom": ws["groom"],
            "clip": ws["clip"],
            "use_body": False,
            "out": str(report),
        },
    )
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["rmse_mean"] == 0.0
    doc = json.loads(report.read_text())
    assert doc["rmse"]["per_frame"] == [0.0] * 15
    assert doc["candidate"] == doc["reference"]


def test_eval_frame_count_mismatch(client, ws, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    rng = np.random.default_rng(0)
    t = rng.standard_normal((4, 12, 25, 3))
    artifacts.write_trajectory(a, t)
    artifacts.write_trajectory(b, t[:3])
    r = client.post(
        "/eval",
        json={
            "candidate": str(a),
            "reference": str(b),
            "groom": ws["groom"],
            "use_body": False,
            "out": str(tmp_path / "r.json"),
        },
    )
    assert r.status_code == 400
    assert "frame counts differ" in r.json()["message"]


def test_eval_groom_shape_mismatch(client, ws, tmp_path):
    a = tmp_path / "a2"
    artifacts.write_trajectory(a, np.zeros((2, 3, 25, 3)))
    r = client.post(
        "/eval",
        json={
            "candidate": str(a),
            "groom": ws["groom"],
            "use_body": False,
            "out": str(tmp_path / "r.json"),
        },
    )
    assert r.status_code == 400


def test_bench_smoke(client, ws, tmp_path):
    r = client.post(
        "/bench",
        json={
            "checkpoint": ws["sim"],
            "strand_counts": [4],
            "methods": ["neural", "xpbd"],
            "frames": 100,
            "warmup": 2,
            "use_body": False,
            "out_dir": str(tmp_path / "bench"),
        },
    )
    assert r.status_code == 200, r.text
    rows = r.json()["rows"]
    assert len(rows) == 2
    assert {row["method"] for row in rows} == {"neural", "xpbd"}
    for row in rows:
        assert row["frames"] == 100
        assert row["mean_ms"] > 0 and np.isfinite(row["mean_ms"])
        assert row["median_ms"] > 0
    table = open(r.json()["table"]).read()
    assert "neural" in table and "xpbd" in table
    csv_lines = open(r.json()["csv"]).read().strip().splitlines()
    assert csv_lines[0] == "strands,method,mean_ms,median_ms,frames"
    assert len(csv_lines) == 3


def test_bench_requires_checkpoint_for_neural(client, tmp_path):
    r = client.post(
        "/bench",
        json={
            "strand_counts": [4],
            "methods": ["neural"],
            "out_dir": str(tmp_path / "bench"),
        },
    )
    assert r.status_code == 400
    assert "checkpoint" in r.json()["message"]


def test_runconfig_schema_in_docs_matches_model():
    from pathlib import Path

    from strandsim.service.schemas import RunConfig

    shipped = json.loads(Path(__file__).resolve().parents[1].joinpath("docs/runconfig.schema.json").read_text())
    assert shipped == RunConfig.model_json_schema()
