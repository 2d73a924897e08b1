"""Command-line client for the toolkit.

Every subcommand builds a request for the HTTP service and either calls
it in-process (default) or sends it to a running server via --server.
File paths in requests are resolved on the machine running the service,
so --server is only useful against a local daemon.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from . import __version__
from .errors import ConfigError, NumericError

_KIND_CODES = {"config": 2, "numeric": 3, "io": 4}


class ServiceFailure(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = _KIND_CODES.get(kind, 3)


def _post(args, path: str, payload: dict) -> dict:
    if args.server:
        with httpx.Client(base_url=args.server, timeout=None) as client:
            resp = client.post(path, json=payload)
            body = resp.json()
    else:
        from .service import create_app

        async def run():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport, base_url="http://strandsim", timeout=None) as client:
                resp = await client.post(path, json=payload)
                return resp.status_code, resp.json()

        status, body = asyncio.run(run())
        if status != 200:
            raise ServiceFailure(body.get("kind", "numeric"), body.get("message", "service error"))
        return body
    if resp.status_code != 200:
        raise ServiceFailure(body.get("kind", "numeric"), body.get("message", "service error"))
    return body


def _load_run_config(path: str | None) -> dict:
    """Validate a RunConfig document and return it as a plain dict."""
    from .service import schemas as sc

    if path is None:
        return sc.RunConfig().model_dump()
    raw = Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from e
    try:
        cfg = sc.RunConfig.model_validate(doc)
    except ValueError as e:
        raise ConfigError(f"config file rejected: {e}") from e
    return cfg.model_dump()


def _pick(flag, config_value, default=None):
    if flag is not None:
        return flag
    if config_value is not None:
        return config_value
    return default


def _beta(text: str | None, config_beta) -> list:
    if text is None:
        return list(config_beta)
    parts = [p for p in text.split(",") if p]
    if len(parts) != 4:
        raise ConfigError("--beta wants four comma-separated numbers")
    return [float(p) for p in parts]


def _train_section(cfg: dict, args) -> dict:
    train = dict(cfg["train"])
    for name in ("steps", "batch_size", "history", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            train[name] = v
    if getattr(args, "lr", None) is not None:
        train["learning_rate"] = args.lr
    if getattr(args, "mode", None) is not None:
        train["mode"] = args.mode
    if getattr(args, "loss_mode", None) is not None:
        train["loss_mode"] = args.loss_mode
    return train


def _energy_section(cfg: dict, args) -> dict:
    en = dict(cfg["energy"])
    if getattr(args, "pt_mode", None) is not None:
        en["pt_mode"] = args.pt_mode
    return en


# ------------------------------------------------------------- commands


def cmd_gen_groom(args) -> int:
    cfg = _load_run_config(args.config)
    req = {
        "style": args.style,
        "strands": args.strands,
        "seed": _pick(args.seed, None, cfg["seed"]),
        "n_vertices": args.vertices,
        "out": args.out,
    }
    r = _post(args, "/grooms/generate", req)
    print(
        f"wrote {r['path']}: {r['strands']} strands x {r['vertices']} vertices, "
        f"{r['locks']} locks (seed {req['seed']})"
    )
    return 0


def cmd_gen_motion(args) -> int:
    cfg = _load_run_config(args.config)
    req = {
        "kind": args.kind,
        "seconds": args.seconds,
        "fps": args.fps,
        "amplitude": args.amplitude,
        "seed": _pick(args.seed, None, cfg["seed"]),
        "out": args.out,
    }
    r = _post(args, "/motions/generate", req)
    fps = 1.0 / r["frame_time"]
    print(f"wrote {r['path']}: {r['frames']} frames at {fps:.6g} fps")
    return 0


def cmd_train_encoder(args) -> int:
    cfg = _load_run_config(args.config)
    grooms = args.groom or cfg["paths"]["grooms"]
    if not grooms:
        raise ConfigError("train-encoder needs at least one --groom (or paths.grooms in --config)")
    train = _train_section(cfg, args)
    req = {
        "grooms": grooms,
        "energy": _energy_section(cfg, args),
        "train": train,
        "out": _pick(args.out, cfg["paths"]["out"]),
    }
    if req["out"] is None:
        raise ConfigError("train-encoder needs --out (or paths.out in --config)")
    r = _post(args, "/train/encoder", req)
    print(f"wrote {r['checkpoint']}: {r['steps']} steps, final reconstruction rmse {r['final_rmse']:.6g}")
    return 0


def cmd_train_sim(args) -> int:
    cfg = _load_run_config(args.config)
    grooms = args.groom or cfg["paths"]["grooms"]
    clips = args.clip or cfg["paths"]["clips"]
    encoder = _pick(args.encoder, cfg["paths"]["encoder"])
    if not grooms or not clips:
        raise ConfigError("train-sim needs --groom and --clip (or paths in --config)")
    if encoder is None:
        raise ConfigError("train-sim needs --encoder: the stage-1 codec checkpoint trained by train-encoder")
    req = {
        "grooms": grooms,
        "clips": clips,
        "encoder": encoder,
        "energy": _energy_section(cfg, args),
        "train": _train_section(cfg, args),
        "use_body": _pick(args.use_body, cfg["use_body"], True),
        "out": _pick(args.out, cfg["paths"]["out"]),
    }
    if req["out"] is None:
        raise ConfigError("train-sim needs --out (or paths.out in --config)")
    r = _post(args, "/train/simulator", req)
    print(f"wrote {r['checkpoint']}: {r['steps']} steps, final loss {r['final_total']:.6g}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_run_config(args.config)
    req = {
        "checkpoint": _pick(args.checkpoint, cfg["paths"]["checkpoint"]),
        "groom": args.groom,
        "clip": args.clip,
        "out_dir": args.out_dir,
        "strands": args.strands,
        "zero_lock": _pick(args.zero_lock, cfg["zero_lock"], False),
        "beta": _beta(args.beta, cfg["beta"]),
        "energy": _energy_section(cfg, args),
        "seed": _pick(args.seed, None, cfg["seed"]),
    }
    if req["checkpoint"] is None:
        raise ConfigError("infer needs --checkpoint (or paths.checkpoint in --config)")
    r = _post(args, "/infer", req)
    print(
        f"wrote {r['frames']} frames for {r['strands']} strands to {r['out_dir']} "
        f"(mean {r['mean_ms']:.3f} ms/frame)"
    )
    return 0


def cmd_simulate_xpbd(args) -> int:
    cfg = _load_run_config(args.config)
    xp = dict(cfg["xpbd"])
    for flag, key in (
        ("substeps", "substeps"),
        ("iterations", "iterations"),
        ("damping", "damping"),
        ("k_stretch", "k_stretch"),
        ("k_bend", "k_bend"),
    ):
        v = getattr(args, flag)
        if v is not None:
            xp[key] = v
    req = {
        "groom": args.groom,
        "clip": args.clip,
        "out_dir": args.out_dir,
        "config": xp,
        "energy": _energy_section(cfg, args),
        "use_body": _pick(args.use_body, cfg["use_body"], True),
        "beta": _beta(args.beta, cfg["beta"]),
        "seed": _pick(args.seed, None, cfg["seed"]),
    }
    r = _post(args, "/xpbd/simulate", req)
    print(
        f"wrote {r['frames']} frames for {r['strands']} strands to {r['out_dir']} "
        f"(mean {r['mean_ms']:.3f} ms/frame)"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args.config)
    req = {
        "candidate": args.candidate,
        "reference": args.reference,
        "groom": args.groom,
        "clip": args.clip,
        "energy": _energy_section(cfg, args),
        "use_body": _pick(args.use_body, cfg["use_body"], True),
        "beta": _beta(args.beta, cfg["beta"]),
        "out": args.out,
    }
    r = _post(args, "/eval", req)
    line = f"wrote {r['report']}"
    if r["rmse_mean"] is not None:
        line += f": rmse {r['rmse_mean']:.6g} cm"
    c = r["candidate"]
    line += (
        f"; candidate penetrations {c['penetration_total']}, "
        f"edge violation max {c['edge_violation_max']:.4g}"
    )
    if c["lag"] is not None:
        line += f", lag {c['lag']} frames"
    print(line)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_run_config(args.config)
    counts = [int(p) for p in args.strands.split(",") if p]
    methods = [p for p in args.method.split(",") if p]
    req = {
        "checkpoint": _pick(args.checkpoint, cfg["paths"]["checkpoint"]),
        "strand_counts": counts,
        "methods": methods,
        "frames": args.frames,
        "warmup": args.warmup,
        "use_body": _pick(args.use_body, cfg["use_body"], True),
        "seed": _pick(args.seed, None, cfg["seed"]),
        "out_dir": args.out_dir,
    }
    r = _post(args, "/bench", req)
    print(Path(r["table"]).read_text() if args.server is None else f"wrote {r['table']}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return 0


# --------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON document; flags override its values")
    p.add_argument("--server", help="base URL of a running service (default: run in-process)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strandsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"strandsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-groom", help="generate a procedural groom file")
    p.add_argument("--style", required=True, choices=["straight", "wavy", "curly", "ponytail"])
    p.add_argument("--strands", type=int, required=True)
    p.add_argument("--vertices", type=int, default=25)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_gen_groom)

    p = sub.add_parser("gen-motion", help="synthesize a BVH motion clip")
    p.add_argument("--kind", required=True, choices=["sway", "head_bob", "jump", "walk"])
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--amplitude", type=float, default=0.25)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_gen_motion)

    p = sub.add_parser("train-encoder", help="stage 1: train the strand autoencoder")
    p.add_argument("--groom", action="append", help="groom file; repeatable")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    _add_common(p)
    p.set_defaults(fn=cmd_train_encoder)

    p = sub.add_parser("train-sim", help="stage 2: train the dynamics network")
    p.add_argument("--groom", action="append")
    p.add_argument("--clip", action="append", help="BVH clip; repeatable")
    p.add_argument("--encoder", help="stage-1 checkpoint")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--history", type=int)
    p.add_argument("--mode", choices=["dynamic", "static"])
    p.add_argument("--loss-mode", dest="loss_mode", choices=["last-frame", "all-frames"])
    p.add_argument("--no-body", dest="use_body", action="store_false", default=None)
    p.add_argument("--pt-mode", dest="pt_mode", choices=["fast", "full"])
    _add_common(p)
    p.set_defaults(fn=cmd_train_sim)

    p = sub.add_parser("infer", help="run the trained simulator over a clip")
    p.add_argument("--checkpoint")
    p.add_argument("--groom", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--strands", type=int, help="run only the first N strands of the groom")
    p.add_argument("--zero-lock", dest="zero_lock", action="store_true", default=None)
    p.add_argument("--beta", help="four comma-separated body shape coefficients")
    p.add_argument("--pt-mode", dest="pt_mode", choices=["fast", "full"])
    _add_common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("simulate-xpbd", help="run the reference XPBD simulator over a clip")
    p.add_argument("--groom", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--substeps", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--k-stretch", dest="k_stretch", type=float)
    p.add_argument("--k-bend", dest="k_bend", type=float)
    p.add_argument("--no-body", dest="use_body", action="store_false", default=None)
    p.add_argument("--beta")
    p.add_argument("--pt-mode", dest="pt_mode", choices=["fast", "full"])
    _add_common(p)
    p.set_defaults(fn=cmd_simulate_xpbd)

    p = sub.add_parser("eval", help="compare stored trajectories and report metrics")
    p.add_argument("--candidate", required=True, help="trajectory directory to evaluate")
    p.add_argument("--reference", help="trajectory directory to compare against")
    p.add_argument("--groom", required=True)
    p.add_argument("--clip")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-body", dest="use_body", action="store_false", default=None)
    p.add_argument("--beta")
    p.add_argument("--pt-mode", dest="pt_mode", choices=["fast", "full"])
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="per-frame timing table across strand counts")
    p.add_argument("--checkpoint")
    p.add_argument("--strands", required=True, help="comma-separated strand counts")
    p.add_argument("--method", required=True, help="comma-separated subset of neural,xpbd")
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--no-body", dest="use_body", action="store_false", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8411)
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ServiceFailure as e:
        print(f"error ({e.kind}): {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"error (config): {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error (numeric): {e}", file=sys.stderr)
        return 3
    except httpx.HTTPError as e:
        print(f"error (io): cannot reach service: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
