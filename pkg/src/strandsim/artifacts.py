"""File artifacts shared by the service and CLI.

Trajectories are directories of OBJ polyline frames (frame_00000.obj,
...), one file per frame, written at float32 precision. Every command
drops a manifest.json beside its outputs recording the config hash,
seed and library versions; manifests carry no timestamps so repeated
runs with the same seed produce bit-identical files. Timing CSVs are
measurements, not results, and are the one output excluded from that
guarantee.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import re
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .groom import read_obj_frame, write_obj_frame

FRAME_PATTERN = "frame_%05d.obj"
_FRAME_RE = re.compile(r"^frame_(\d{5})\.obj$")


def write_trajectory(out_dir, positions: np.ndarray) -> list[Path]:
    positions = np.asarray(positions)
    if positions.ndim != 4 or positions.shape[-1] != 3:
        raise ConfigError("trajectory must be (frames, strands, vertices, 3)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in range(positions.shape[0]):
        p = out_dir / (FRAME_PATTERN % f)
        p.write_text(write_obj_frame(positions[f]))
        paths.append(p)
    return paths


def read_trajectory(traj_dir) -> np.ndarray:
    """Read a frame directory back to (F, S, V, 3) positions.

    Values carry float32 precision (the file format's), held in float64.
    """
    traj_dir = Path(traj_dir)
    if not traj_dir.is_dir():
        raise ConfigError(f"trajectory directory not found: {traj_dir}")
    found = sorted(p for p in traj_dir.iterdir() if _FRAME_RE.match(p.name))
    if not found:
        raise ConfigError(f"no frame_*.obj files in {traj_dir}")
    for i, p in enumerate(found):
        if int(_FRAME_RE.match(p.name).group(1)) != i:
            raise ConfigError(f"frame files not contiguous at {p.name}")
    frames = [read_obj_frame(p.read_text()) for p in found]
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ConfigError("frames disagree on strand/vertex counts")
    return np.stack(frames)


def write_timings_csv(path, ms: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "ms"])
        for i, v in enumerate(np.asarray(ms, dtype=np.float64)):
            w.writerow([i, f"{v:.6f}"])


def write_history_csv(path, rows: list[dict]) -> None:
    """Write loss-history rows; columns are the union of row keys in
    first-seen order, missing cells left blank."""
    path = Path(path)
    if not rows:
        raise ConfigError("history is empty")
    cols: list[str] = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, restval="")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return v


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_manifest(command: str, config: dict, seed: int | None, outputs: list[str]) -> dict:
    return {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "outputs": sorted(outputs),
        "versions": {
            "strandsim": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def write_manifest(out_dir, manifest: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
