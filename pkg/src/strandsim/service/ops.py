"""Work functions behind the service endpoints.

Each op takes a validated request model, does file IO plus the actual
computation through the core modules, writes its artifacts and a
manifest, and returns the response model. Ops raise ConfigError /
NumericError / OSError; the app layer translates those to HTTP, the CLI
to exit codes.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .. import artifacts, energy, metrics, nn, xpbd
from ..body import default_body, pose_body, rest_state
from ..errors import ConfigError
from ..groom import Groom, generate_groom, load_groom, save_groom
from ..motion import (
    ReducedMotion,
    head_transforms,
    history_window,
    parse_bvh,
    reduce_clip,
    synth_motion,
    write_bvh,
)
from ..rotation import RigidTransform
from . import schemas as sc


def _load_clip(path) -> ReducedMotion:
    return reduce_clip(parse_bvh(Path(path).read_text()))


def _file_manifest(out_path: Path, manifest: dict) -> Path:
    path = out_path.parent / (out_path.name + ".manifest.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# ----------------------------------------------------------- generation


def gen_groom(req: sc.GenGroomRequest) -> sc.GenGroomResponse:
    g = generate_groom(req.style, req.strands, seed=req.seed, n_vertices=req.n_vertices)
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_groom(out, g)
    man = artifacts.run_manifest("gen-groom", req.model_dump(), req.seed, [out.name])
    man_path = _file_manifest(out, man)
    locks = int(g.lock_ids.max()) + 1 if len(g.lock_ids) else 0
    return sc.GenGroomResponse(
        path=str(out), strands=g.vertices.shape[0], vertices=g.n_vertices, locks=locks, manifest=str(man_path)
    )


def gen_motion(req: sc.GenMotionRequest) -> sc.GenMotionResponse:
    clip = synth_motion(req.kind, req.seconds, req.fps, req.amplitude, req.seed)
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_bvh(clip))
    man = artifacts.run_manifest("gen-motion", req.model_dump(), req.seed, [out.name])
    man_path = _file_manifest(out, man)
    return sc.GenMotionResponse(path=str(out), frames=clip.frames, frame_time=clip.frame_time, manifest=str(man_path))


# ------------------------------------------------------------- training


def train_encoder(req: sc.TrainEncoderRequest) -> sc.TrainEncoderResponse:
    grooms = [load_groom(p) for p in req.grooms]
    cfg = req.train.to_config()
    codec, history = nn.train_encoder(grooms, cfg)
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_codec(out, codec, extra={"seed": cfg.seed, "steps": cfg.steps})
    loss_csv = out.parent / (out.stem + ".loss.csv")
    # one row per optimization step; the dataset-wide RMSE summary row
    # goes to the response and manifest instead
    artifacts.write_history_csv(loss_csv, [r for r in history if "mse" in r])
    man = artifacts.run_manifest("train-encoder", req.model_dump(), cfg.seed, [out.name, loss_csv.name])
    man_path = _file_manifest(out, man)
    return sc.TrainEncoderResponse(
        checkpoint=str(out),
        steps=cfg.steps,
        final_rmse=float(history[-1]["rmse"]),
        history_csv=str(loss_csv),
        manifest=str(man_path),
    )


def train_simulator(req: sc.TrainSimulatorRequest) -> sc.TrainSimulatorResponse:
    grooms = [load_groom(p) for p in req.grooms]
    clips = [_load_clip(p) for p in req.clips]
    codec, _ = nn.load_codec(req.encoder)
    cfg = req.train.to_config()
    energy_cfg = req.energy.to_config()
    body = default_body() if req.use_body else None
    net, history = nn.train_simulator(grooms, clips, codec, cfg, energy_cfg, body_model=body)
    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_simulator(out, net, codec.encoder, extra={"seed": cfg.seed, "steps": cfg.steps, "mode": cfg.mode})
    loss_csv = out.parent / (out.stem + ".loss.csv")
    artifacts.write_history_csv(loss_csv, history)
    man = artifacts.run_manifest("train-sim", req.model_dump(), cfg.seed, [out.name, loss_csv.name])
    man_path = _file_manifest(out, man)
    return sc.TrainSimulatorResponse(
        checkpoint=str(out),
        steps=cfg.steps,
        final_total=float(history[-1]["total"]),
        history_csv=str(loss_csv),
        manifest=str(man_path),
    )


# ------------------------------------------------------------ inference


def infer(req: sc.InferRequest) -> sc.InferResponse:
    net, encoder, _ = nn.load_simulator(req.checkpoint)
    g = load_groom(req.groom)
    if req.strands is not None:
        if req.strands > g.vertices.shape[0]:
            raise ConfigError(f"groom has {g.vertices.shape[0]} strands, requested {req.strands}")
        g = g.subset(np.arange(req.strands))
    if g.n_vertices != net.layout.n_vertices:
        raise ConfigError(
            f"checkpoint expects {net.layout.n_vertices} vertices per strand, groom has {g.n_vertices}"
        )
    energy_cfg = req.energy.to_config()
    rest = energy.build_rest(g, energy_cfg)
    z = nn.mlp_forward(encoder, nn.strand_features(rest.canonical))
    z_lock = np.zeros_like(z) if req.zero_lock else nn.lock_latents(z, g.lock_ids)
    rm = _load_clip(req.clip)
    rot, pos = head_transforms(rm)
    beta = np.asarray(req.beta, dtype=np.float64)
    n_hist = max(net.layout.history, 1)

    frames = rm.frames
    S, V = rest.canonical.shape[:2]
    world = np.zeros((frames, S, V, 3))
    ms = np.zeros(frames)
    for t in range(frames):
        t0 = time.perf_counter()
        window = history_window(rm, t, n_hist, beta)
        head = RigidTransform(rot[t], pos[t])
        world[t] = nn.predict(net, rest, z, z_lock, window, g.root_uv, head)
        ms[t] = (time.perf_counter() - t0) * 1e3

    out_dir = Path(req.out_dir)
    artifacts.write_trajectory(out_dir, world)
    timings = out_dir / "timings.csv"
    artifacts.write_timings_csv(timings, ms)
    man = artifacts.run_manifest(
        "infer", req.model_dump(), req.seed, [artifacts.FRAME_PATTERN % f for f in range(frames)]
    )
    man_path = artifacts.write_manifest(out_dir, man)
    return sc.InferResponse(
        out_dir=str(out_dir),
        frames=frames,
        strands=S,
        mean_ms=float(ms.mean()),
        timings_csv=str(timings),
        manifest=str(man_path),
    )


def xpbd_simulate(req: sc.XpbdSimulateRequest) -> sc.XpbdSimulateResponse:
    g = load_groom(req.groom)
    rm = _load_clip(req.clip)
    cfg = req.config.to_config()
    energy_cfg = req.energy.to_config()
    body = default_body() if req.use_body else None
    beta = np.asarray(req.beta, dtype=np.float64)
    res = xpbd.simulate_clip(g, rm, cfg, energy_cfg, body_model=body, beta=beta)
    out_dir = Path(req.out_dir)
    artifacts.write_trajectory(out_dir, res.positions)
    timings = out_dir / "timings.csv"
    artifacts.write_timings_csv(timings, res.frame_ms)
    man = artifacts.run_manifest(
        "simulate-xpbd", req.model_dump(), req.seed, [artifacts.FRAME_PATTERN % f for f in range(rm.frames)]
    )
    man_path = artifacts.write_manifest(out_dir, man)
    return sc.XpbdSimulateResponse(
        out_dir=str(out_dir),
        frames=res.positions.shape[0],
        strands=res.positions.shape[1],
        mean_ms=float(res.frame_ms.mean()),
        timings_csv=str(timings),
        manifest=str(man_path),
    )


# ----------------------------------------------------------- evaluation


def _trajectory_report(traj, rest, cfg, body_states, heads, head_pos, dt):
    rows = metrics.loss_per_frame(traj, rest, cfg, body_state=body_states, heads=heads, dt=dt)
    violation = metrics.edge_violation(traj, np.asarray(rest.rest_lengths))
    report = {
        "edge_violation": {
            "max": float(violation.max()),
            "mean": float(violation.mean()),
            "per_frame": violation.tolist(),
        },
        "loss_terms": {
            name: float(np.mean([r[name] for r in rows])) for name in energy.TERM_ORDER
        },
        "loss_total_mean": float(np.mean([r["total"] for r in rows])),
    }
    if body_states is not None:
        counts, depth = metrics.penetration_stats(traj, body_states)
        report["penetration"] = {
            "count_per_frame": counts.tolist(),
            "total": int(counts.sum()),
            "mean_depth": float(depth[counts > 0].mean()) if (counts > 0).any() else 0.0,
        }
    else:
        report["penetration"] = {"count_per_frame": [], "total": 0, "mean_depth": 0.0}
    report["lag"] = int(metrics.tip_lag(traj, head_pos)) if head_pos is not None else None
    return report


def _headline(report: dict) -> sc.TrajectoryReport:
    return sc.TrajectoryReport(
        penetration_total=report["penetration"]["total"],
        penetration_mean_depth=report["penetration"]["mean_depth"],
        edge_violation_max=report["edge_violation"]["max"],
        loss_total_mean=report["loss_total_mean"],
        lag=report["lag"],
    )


def evaluate(req: sc.EvalRequest) -> sc.EvalResponse:
    cand = artifacts.read_trajectory(req.candidate).astype(np.float64)
    ref = None
    if req.reference is not None:
        ref = artifacts.read_trajectory(req.reference).astype(np.float64)
        if ref.shape[0] != cand.shape[0]:
            raise ConfigError(f"frame counts differ: candidate {cand.shape[0]}, reference {ref.shape[0]}")
        if ref.shape != cand.shape:
            raise ConfigError(f"trajectory shapes differ: {cand.shape} vs {ref.shape}")

    g = load_groom(req.groom)
    energy_cfg = req.energy.to_config()
    rest = energy.build_rest(g, energy_cfg)
    if cand.shape[1:3] != rest.canonical.shape[:2]:
        raise ConfigError(
            f"trajectory strands/vertices {cand.shape[1:3]} do not match groom {rest.canonical.shape[:2]}"
        )

    heads = None
    head_pos = None
    dt = None
    rm = None
    if req.clip is not None:
        rm = _load_clip(req.clip)
        if rm.frames != cand.shape[0]:
            raise ConfigError(f"clip has {rm.frames} frames, trajectory {cand.shape[0]}")
        rot, pos = head_transforms(rm)
        heads = [RigidTransform(rot[t], pos[t]) for t in range(rm.frames)]
        head_pos = pos
        dt = rm.frame_time

    body_states = None
    if req.use_body:
        model = default_body()
        beta = np.asarray(req.beta, dtype=np.float64)
        if rm is not None:
            body_states = [pose_body(model, rm.pose_at(t), beta) for t in range(rm.frames)]
        else:
            body_states = rest_state(model, beta)

    report = {
        "frames": int(cand.shape[0]),
        "strands": int(cand.shape[1]),
        "vertices": int(cand.shape[2]),
        "candidate": _trajectory_report(cand, rest, energy_cfg, body_states, heads, head_pos, dt),
    }
    rmse_mean = None
    if ref is not None:
        rmse = metrics.vertex_rmse(cand, ref)
        normalized = metrics.length_normalized_rmse(cand, ref, np.asarray(rest.rest_lengths))
        rmse_mean = float(rmse.mean())
        report["rmse"] = {
            "per_frame": rmse.tolist(),
            "mean": rmse_mean,
            "normalized_mean": float(normalized.mean()),
        }
        report["reference"] = _trajectory_report(ref, rest, energy_cfg, body_states, heads, head_pos, dt)

    out = Path(req.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    man = artifacts.run_manifest("eval", req.model_dump(), None, [out.name])
    man_path = _file_manifest(out, man)
    return sc.EvalResponse(
        report=str(out),
        frames=report["frames"],
        rmse_mean=rmse_mean,
        candidate=_headline(report["candidate"]),
        reference=_headline(report["reference"]) if ref is not None else None,
        manifest=str(man_path),
    )


# ------------------------------------------------------------ benchmark


def _bench_neural(checkpoint, g: Groom, rm: ReducedMotion, beta, total_frames):
    net, encoder, _ = nn.load_simulator(checkpoint)
    if g.n_vertices != net.layout.n_vertices:
        raise ConfigError(
            f"checkpoint expects {net.layout.n_vertices} vertices per strand, groom has {g.n_vertices}"
        )
    rest = energy.build_rest(g, energy.EnergyConfig())
    z = nn.mlp_forward(encoder, nn.strand_features(rest.canonical))
    z_lock = nn.lock_latents(z, g.lock_ids)
    rot, pos = head_transforms(rm)
    n_hist = max(net.layout.history, 1)
    ms = np.zeros(total_frames)
    for t in range(total_frames):
        t0 = time.perf_counter()
        window = history_window(rm, t, n_hist, beta)
        nn.predict(net, rest, z, z_lock, window, g.root_uv, RigidTransform(rot[t], pos[t]))
        ms[t] = (time.perf_counter() - t0) * 1e3
    return ms


def bench(req: sc.BenchRequest) -> sc.BenchResponse:
    if "neural" in req.methods and req.checkpoint is None:
        raise ConfigError("bench with the neural method needs a checkpoint")
    total_frames = req.warmup + req.frames
    clip = synth_motion("sway", total_frames / 30.0, 30.0, 0.25, req.seed)
    rm = reduce_clip(clip)
    if rm.frames < total_frames:
        raise ConfigError("benchmark clip shorter than requested frame count")
    beta = np.zeros(4)
    body = default_body() if req.use_body else None
    n_vertices = 25
    if req.checkpoint is not None:
        net, _, _ = nn.load_simulator(req.checkpoint)
        n_vertices = net.layout.n_vertices

    rows = []
    for count in req.strand_counts:
        g = generate_groom("wavy", count, seed=req.seed, n_vertices=n_vertices)
        for method in req.methods:
            if method == "neural":
                ms = _bench_neural(req.checkpoint, g, rm, beta, total_frames)
            else:
                res = xpbd.simulate_clip(g, rm, xpbd.XpbdConfig(), energy.EnergyConfig(), body_model=body, beta=beta)
                ms = res.frame_ms[:total_frames]
            measured = ms[req.warmup :]
            rows.append(
                sc.BenchRow(
                    strands=count,
                    method=method,
                    mean_ms=float(measured.mean()),
                    median_ms=float(np.median(measured)),
                    frames=len(measured),
                )
            )

    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    with csv_path.open("w") as f:
        f.write("strands,method,mean_ms,median_ms,frames\n")
        for r in rows:
            f.write(f"{r.strands},{r.method},{r.mean_ms:.6f},{r.median_ms:.6f},{r.frames}\n")
    table_path = out_dir / "bench.txt"
    header = f"{'strands':>8}  {'method':<8} {'mean_ms':>12} {'median_ms':>12} {'frames':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.strands:>8}  {r.method:<8} {r.mean_ms:>12.3f} {r.median_ms:>12.3f} {r.frames:>7}")
    table_path.write_text("\n".join(lines) + "\n")
    man = artifacts.run_manifest("bench", req.model_dump(), req.seed, [csv_path.name, table_path.name])
    man_path = artifacts.write_manifest(out_dir, man)
    return sc.BenchResponse(csv=str(csv_path), table=str(table_path), rows=rows, manifest=str(man_path))
