"""Position-based reference simulator used as oracle and baseline.

Each strand is a chain of particles with distance constraints on every
edge (stretch) and on every i to i+2 vertex pair (bend). Constraints
carry per-constraint Lagrange multipliers with compliance: each update
solves (G W G^T + alpha~ I) dlambda = -(C + alpha~ lambda), alpha~ =
compliance / dt^2, multipliers reset at the top of every substep. Along
one strand consecutive distance constraints share exactly one vertex, so
the system matrix of each block (stretch edges; even bends; odd bends) is
tridiagonal and solves exactly with the Thomas algorithm, vectorized
across strands. The configured iteration count is the number of Newton
sweeps over the three blocks; because each sweep solves its block
exactly, a handful of iterations converges to the constraint manifold
and the settled equilibrium is independent of the substep count, which
an iteration-starved per-pair projection never achieves on long chains.

Roots are pinned: they follow the animated scalp positions (interpolated
across substeps) and carry zero inverse mass. After the constraint loop
every free vertex found inside the body shell is pushed along its nearest
face normal to the offset surface, repeating up to a fixed number of
passes because a push from one triangle can land a point inside another.
Roots sit on the scalp by construction, so the non-penetration guarantee
covers free vertices only.

Strands never interact (no hair-hair collision here), so all strands
solve in one batch of independent chains.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import energy
from .body import BodyModel, BodyState, pose_body, query_surface
from .errors import ConfigError, NumericError
from .groom import Groom
from .motion import ReducedMotion, head_transforms
from .rotation import RigidTransform

SHAPE_DIM_DEFAULT = 4


@dataclass(frozen=True)
class XpbdConfig:
    """Solver knobs; physical constants ride in on the energy config."""

    substeps: int = 4
    iterations: int = 10
    damping: float = 0.02
    k_stretch: float = 1e4
    k_bend: float = 5e-2
    collision_passes: int = 8

    def validate(self) -> None:
        if self.substeps < 1 or self.iterations < 1:
            raise ConfigError("substeps and iterations must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError("damping must lie in [0, 1)")
        if self.k_stretch <= 0 or self.k_bend < 0:
            raise ConfigError("k_stretch must be positive, k_bend non-negative")
        if self.collision_passes < 1:
            raise ConfigError("collision_passes must be >= 1")


@dataclass
class SimState:
    """Particle state plus constraint tables for one groom."""

    positions: np.ndarray  # (S, V, 3)
    prev_positions: np.ndarray  # (S, V, 3)
    velocities: np.ndarray  # (S, V, 3)
    edge_rest: np.ndarray  # (S, V-1)
    edge_compliance: np.ndarray  # (S, V-1)
    bend_rest: np.ndarray  # (S, V-2)
    bend_compliance: np.ndarray  # (S, V-2)
    pinned: np.ndarray  # (S, V) bool
    inv_mass: np.ndarray  # (S, V) zero where pinned
    gravity: np.ndarray  # (3,)
    collision_offset: float
    damping: float
    substeps: int
    iterations: int
    collision_passes: int = 8

    def __post_init__(self):
        if np.any(self.edge_compliance < 0) or np.any(self.bend_compliance < 0):
            raise ConfigError("compliances must be >= 0")
        if self.pinned.shape != self.positions.shape[:2]:
            raise ConfigError("pinned flags must be per vertex")

    def kinetic_energy(self, mass: float) -> float:
        v = self.velocities[~self.pinned]
        return float(0.5 * mass * np.sum(v * v))


def make_sim_state(rest: energy.GroomRest, cfg: XpbdConfig) -> SimState:
    """Rest-shape particle state with roots pinned to the scalp."""
    cfg.validate()
    x = np.array(rest.rest_world)
    S, V = x.shape[:2]
    if V < 2:
        raise ConfigError("strands need at least 2 vertices")
    ecfg = rest.cfg
    edge_rest = np.asarray(np.linalg.norm(x[:, 1:] - x[:, :-1], axis=-1))
    with_bend = V > 2 and cfg.k_bend > 0
    bend_rest = np.linalg.norm(x[:, 2:] - x[:, :-2], axis=-1) if with_bend else np.zeros((S, 0))
    pinned = np.zeros((S, V), dtype=bool)
    pinned[:, 0] = True
    inv_mass = np.full((S, V), 1.0 / ecfg.mass)
    inv_mass[pinned] = 0.0
    return SimState(
        positions=x,
        prev_positions=x.copy(),
        velocities=np.zeros_like(x),
        edge_rest=edge_rest,
        edge_compliance=np.full((S, V - 1), 1.0 / cfg.k_stretch),
        bend_rest=bend_rest,
        bend_compliance=np.full(bend_rest.shape, 1.0 / cfg.k_bend if with_bend else 0.0),
        pinned=pinned,
        inv_mass=inv_mass,
        gravity=np.asarray(ecfg.gravity, dtype=np.float64),
        collision_offset=ecfg.collision_offset,
        damping=cfg.damping,
        substeps=cfg.substeps,
        iterations=cfg.iterations,
        collision_passes=cfg.collision_passes,
    )


def _thomas(diag, off, rhs):
    """Solve symmetric tridiagonal systems, batched over the first axis.

    diag (S, K), off (S, K-1) sub/super diagonal, rhs (S, K). The solve
    runs sequentially over K and vectorized over S; the matrices here are
    weakly diagonally dominant, so no pivoting is needed.
    """
    K = diag.shape[1]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[:, 0] = diag[:, 0]
    dp[:, 0] = rhs[:, 0]
    for k in range(1, K):
        m = off[:, k - 1] / cp[:, k - 1]
        cp[:, k] = diag[:, k] - m * off[:, k - 1]
        dp[:, k] = rhs[:, k] - m * dp[:, k - 1]
    out = np.empty_like(rhs)
    out[:, K - 1] = dp[:, K - 1] / cp[:, K - 1]
    for k in range(K - 2, -1, -1):
        out[:, k] = (dp[:, k] - off[:, k] * out[:, k + 1]) / cp[:, k]
    return out


def _solve_chain(x, inv_mass, a_idx, b_idx, rest, lam, alpha_t):
    """One exact compliance solve of a chain of distance constraints.

    Constraint k joins vertices (a_idx[k], b_idx[k]); consecutive
    constraints share b_idx[k] == a_idx[k+1], giving the tridiagonal
    coupling. Updates x and lam in place, for all strands at once.
    """
    d = x[:, a_idx, :] - x[:, b_idx, :]
    dist = np.linalg.norm(d, axis=-1)
    n = d / np.maximum(dist, 1e-12)[..., None]
    c = np.where(dist > 1e-12, dist - rest, 0.0)
    wa = inv_mass[:, a_idx]
    wb = inv_mass[:, b_idx]
    diag = wa + wb + alpha_t
    if len(a_idx) > 1:
        shared_w = inv_mass[:, b_idx[:-1]]
        off = -shared_w * np.einsum("skd,skd->sk", n[:, :-1], n[:, 1:])
    else:
        off = np.zeros((x.shape[0], 0))
    dlam = _thomas(diag, off, -(c + alpha_t * lam))
    lam += dlam
    corr = dlam[..., None] * n
    x[:, a_idx, :] += wa[..., None] * corr
    x[:, b_idx, :] -= wb[..., None] * corr


def _push_out_of_body(x, pinned, body_state, offset, passes):
    """Move free vertices to signed distance >= offset, a few passes."""
    flat_free = ~pinned.reshape(-1)
    for _ in range(passes):
        flat = x.reshape(-1, 3)
        q = query_surface(body_state, flat[flat_free], max_dist=16.0)
        inside = np.isfinite(q.d) & (q.d < offset - 1e-9)
        if not inside.any():
            break
        target = np.nonzero(flat_free)[0][inside]
        flat[target] += q.normal[inside] * (offset - q.d[inside])[:, None]


def step(state: SimState, dt: float, body_state: BodyState | None = None, root_targets: np.ndarray | None = None) -> SimState:
    """Advance one frame of length dt; returns a new state.

    root_targets (S, 3) are the pinned root positions at the end of the
    frame; substeps interpolate linearly from the current positions.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    x = state.positions.copy()
    v = state.velocities.copy()
    S, V = x.shape[:2]
    root_start = x[:, 0, :].copy()
    if root_targets is None:
        root_targets = root_start
    root_targets = np.asarray(root_targets, dtype=np.float64)
    if root_targets.shape != (S, 3):
        raise ConfigError(f"root_targets must be (S, 3), got {root_targets.shape}")

    h = dt / state.substeps
    edge_a = np.arange(V - 1)
    n_bend = state.bend_rest.shape[1]
    bend_chains = [np.arange(c, n_bend, 2) for c in range(2) if c < n_bend]
    free = ~state.pinned

    prev = state.prev_positions
    for s in range(1, state.substeps + 1):
        v[free] += state.gravity * h
        prev = x.copy()
        x += v * h
        frac = s / state.substeps
        roots = root_start + (root_targets - root_start) * frac
        x[:, 0, :] = roots

        lam_e = np.zeros_like(state.edge_rest)
        lam_b = [np.zeros((S, len(idx))) for idx in bend_chains]
        a_e = state.edge_compliance / (h * h)
        a_b = [state.bend_compliance[:, idx] / (h * h) for idx in bend_chains]
        b_rest = [state.bend_rest[:, idx] for idx in bend_chains]
        for _ in range(state.iterations):
            _solve_chain(x, state.inv_mass, edge_a, edge_a + 1, state.edge_rest, lam_e, a_e)
            for ci, idx in enumerate(bend_chains):
                _solve_chain(x, state.inv_mass, idx, idx + 2, b_rest[ci], lam_b[ci], a_b[ci])

        if body_state is not None:
            _push_out_of_body(x, state.pinned, body_state, state.collision_offset, state.collision_passes)
            x[:, 0, :] = roots

        v = (x - prev) / h * (1.0 - state.damping)

    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(x).all(axis=-1))[0]
        raise NumericError(f"simulation diverged: non-finite position at strand {bad[0]} vertex {bad[1]}")
    return replace(state, positions=x, prev_positions=prev, velocities=v)


def max_edge_violation(state: SimState) -> float:
    """Largest relative edge-length error across all strands."""
    e = np.linalg.norm(state.positions[:, 1:] - state.positions[:, :-1], axis=-1)
    return float(np.max(np.abs(e - state.edge_rest) / state.edge_rest))


@dataclass
class SimResult:
    positions: np.ndarray  # (F, S, V, 3)
    frame_ms: np.ndarray  # (F,)


def _root_targets(rest: energy.GroomRest, head: RigidTransform) -> np.ndarray:
    delta = head.compose(rest.head_rest.inverse())
    return delta.apply(rest.root_rest_world)


def simulate_clip(
    groom: Groom,
    clip: ReducedMotion,
    cfg: XpbdConfig | None = None,
    energy_cfg: energy.EnergyConfig | None = None,
    body_model: BodyModel | None = None,
    beta: np.ndarray | None = None,
) -> SimResult:
    """Run the whole clip; roots track the head, body is re-posed per frame.

    The first frame's root placement is treated as the starting state, so
    output frame f holds the positions after stepping to clip frame f.
    """
    cfg = cfg or XpbdConfig()
    energy_cfg = energy_cfg or energy.EnergyConfig()
    cfg.validate()
    energy_cfg.validate()
    rest = energy.build_rest(groom, energy_cfg)
    state = make_sim_state(rest, cfg)
    rot, pos = head_transforms(clip)
    heads = [RigidTransform(rot[t], pos[t]) for t in range(clip.frames)]
    if beta is None:
        beta = np.zeros(SHAPE_DIM_DEFAULT)

    out = np.empty((clip.frames,) + state.positions.shape)
    frame_ms = np.empty(clip.frames)
    for t in range(clip.frames):
        t0 = time.perf_counter()
        body_state = pose_body(body_model, clip.pose_at(t), beta) if body_model is not None else None
        targets = _root_targets(rest, heads[t])
        state = step(state, clip.frame_time, body_state=body_state, root_targets=targets)
        frame_ms[t] = (time.perf_counter() - t0) * 1e3
        out[t] = state.positions
    return SimResult(out, frame_ms)


def settle(
    rest: energy.GroomRest,
    cfg: XpbdConfig,
    dt: float = 1.0 / 30.0,
    frames: int = 300,
    body_state: BodyState | None = None,
    tol: float = 1e-3,
) -> tuple[SimState, int]:
    """Step with a static boundary until the frame displacement drops
    below tol (or the frame budget runs out); returns (state, frames run)."""
    state = make_sim_state(rest, cfg)
    for f in range(frames):
        before = state.positions.copy()
        state = step(state, dt, body_state=body_state)
        if np.max(np.abs(state.positions - before)) < tol:
            return state, f + 1
    return state, frames
