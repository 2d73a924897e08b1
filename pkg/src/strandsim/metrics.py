"""Trajectory comparison and report metrics.

All functions take trajectories shaped (F, S, V, 3) and are pure numpy;
nothing here touches the tape. Penetration is measured against the mesh
itself (signed distance < 0), not the collision offset shell, matching
how visible intersections are counted.
"""

from __future__ import annotations

import numpy as np

from . import energy, grad
from .body import BodyState, query_surface
from .errors import ConfigError


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 4 or b.ndim != 4:
        raise ConfigError("trajectories must be (frames, strands, vertices, 3)")
    if a.shape != b.shape:
        raise ConfigError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return a, b


def vertex_rmse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-frame RMSE over all vertex coordinates, in cm."""
    a, b = _check_pair(a, b)
    d = a - b
    return np.sqrt(np.einsum("fsvd,fsvd->f", d, d) / (a.shape[1] * a.shape[2]))


def length_normalized_rmse(a: np.ndarray, b: np.ndarray, rest_lengths: np.ndarray) -> np.ndarray:
    """vertex_rmse divided by the mean rest strand length."""
    mean_len = float(np.asarray(rest_lengths).sum(axis=1).mean())
    if mean_len <= 0:
        raise ConfigError("rest lengths must be positive")
    return vertex_rmse(a, b) / mean_len


def edge_violation(traj: np.ndarray, rest_lengths: np.ndarray) -> np.ndarray:
    """Per-frame max relative edge-length error."""
    traj = np.asarray(traj, dtype=np.float64)
    e = np.linalg.norm(traj[:, :, 1:] - traj[:, :, :-1], axis=-1)
    return np.max(np.abs(e - rest_lengths) / rest_lengths, axis=(1, 2))


def penetration_stats(traj: np.ndarray, body_state: BodyState | list) -> tuple[np.ndarray, np.ndarray]:
    """Counts of vertices inside the body mesh and their mean depth.

    Returns (counts (F,), mean_depth (F,)); depth is 0 where nothing
    penetrates. body_state may be one state or a per-frame list for
    animated bodies.
    """
    traj = np.asarray(traj, dtype=np.float64)
    F = traj.shape[0]
    counts = np.zeros(F, dtype=np.int64)
    depth = np.zeros(F)
    for f in range(F):
        bs = body_state[f] if isinstance(body_state, list) else body_state
        q = query_surface(bs, traj[f].reshape(-1, 3), max_dist=16.0)
        inside = np.isfinite(q.d) & (q.d < 0.0)
        counts[f] = int(inside.sum())
        depth[f] = float(-q.d[inside].mean()) if counts[f] else 0.0
    return counts, depth


def loss_per_frame(
    traj: np.ndarray,
    rest: energy.GroomRest,
    cfg: energy.EnergyConfig,
    body_state: BodyState | list | None = None,
    heads: list | None = None,
    dt: float | None = None,
) -> list:
    """Physics-loss terms per frame of a stored trajectory.

    With dt set, frames from index 2 on get the inertia term computed
    from the two preceding stored frames; earlier frames and dt=None are
    quasi-static. body_state may be one state or a per-frame list.
    """
    traj = np.asarray(traj, dtype=np.float64)
    rows = []
    for f in range(traj.shape[0]):
        head = heads[f] if heads is not None else rest.head_rest
        bs = body_state[f] if isinstance(body_state, list) else body_state
        st = energy.state_from_world(rest, traj[f], head)
        if dt is not None and f >= 2:
            total, terms = energy.total_loss(
                st, cfg, body_state=bs, prev=traj[f - 1], prev2=traj[f - 2], dt=dt, quasi_static=False
            )
        else:
            total, terms = energy.total_loss(st, cfg, body_state=bs)
        row = {"frame": f, "total": float(grad.value_of(total))}
        row.update(terms)
        rows.append(row)
    return rows


def principal_axis(points: np.ndarray) -> np.ndarray:
    """Dominant motion direction of a point track (F, 3), unit length.

    Sign is fixed so the axis points along the first nonzero excursion,
    keeping projections reproducible.
    """
    p = np.asarray(points, dtype=np.float64)
    c = p - p.mean(axis=0)
    cov = (c.T @ c) / max(len(c), 1)
    w, v = np.linalg.eigh(cov)
    axis = v[:, -1]
    proj = c @ axis
    nz = np.nonzero(np.abs(proj) > 1e-12)[0]
    if len(nz) and proj[nz[0]] < 0:
        axis = -axis
    return axis


def motion_lag(boundary: np.ndarray, response: np.ndarray, max_lag: int | None = None) -> int:
    """Shift (in frames) at which the response best aligns with the
    boundary signal: argmax over k >= 0 of corr(response[k:], boundary[:-k]).
    Ties within float noise (periodic signals) resolve to the smallest lag."""
    b = np.asarray(boundary, dtype=np.float64)
    r = np.asarray(response, dtype=np.float64)
    if b.shape != r.shape or b.ndim != 1:
        raise ConfigError("signals must be equal-length 1-D arrays")
    F = len(b)
    if max_lag is None:
        max_lag = F // 2
    max_lag = min(max_lag, F - 2)
    b = b - b.mean()
    r = r - r.mean()
    best_k, best_c = 0, -np.inf
    for k in range(max_lag + 1):
        rb = r[k:]
        bb = b[: F - k]
        denom = np.linalg.norm(rb) * np.linalg.norm(bb)
        c = float(rb @ bb / denom) if denom > 1e-12 else -np.inf
        if c > best_c + 1e-9:
            best_k, best_c = k, c
    return best_k


def tip_lag(traj: np.ndarray, head_positions: np.ndarray, max_lag: int | None = None) -> int:
    """Cross-correlation lag of the mean tip track behind the head track,
    both projected on the head motion's principal axis."""
    traj = np.asarray(traj, dtype=np.float64)
    head = np.asarray(head_positions, dtype=np.float64)
    if traj.shape[0] != head.shape[0]:
        raise ConfigError("trajectory and head track must cover the same frames")
    axis = principal_axis(head)
    boundary = (head - head.mean(axis=0)) @ axis
    tips = traj[:, :, -1, :].mean(axis=1)
    response = (tips - tips.mean(axis=0)) @ axis
    return motion_lag(boundary, response, max_lag)
