"""Differentiable strand physics losses.

Elastic terms (stretch, bend-twist) are evaluated in the head-local
canonical frame, so a strand moving rigidly with the head costs nothing;
world-frame terms (gravity, collisions, adhesion, inertia) receive world
positions rebuilt from the canonical ones through the same tape ops used
for plain evaluation, which keeps rest-state losses exactly zero bit for
bit. Per-vertex sums run over free vertices only; vertex 0 is a boundary
condition pinned to the scalp.

Bend-twist measures Darboux-vector deviations between consecutive edge
orientations obtained by parallel transport. The edge list is prefixed
with a constant anchor edge (the rest root tangent carried by the head),
so rotating the whole strand away from its rooted rest direction is
penalized like any other bend.

Nearest-body correspondences and style weights are recomputed from
current positions on every forward pass and held constant within it;
self-collision neighbor pairs likewise. Adhesion pairs are fixed at rest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import grad
from .body import BodyState, query_surface
from .errors import ConfigError, NumericError
from .groom import Groom, to_canonical
from .motion import rest_head_transform
from .rotation import RigidTransform

_STIFFNESS_FIELDS = {
    "k_stretch",
    "k_bend_twist",
    "k_body_collision",
    "k_self_collision",
    "k_hair_style",
    "k_adhesion",
}


@dataclass(frozen=True)
class EnergyConfig:
    """Loss weights and physical constants (cm, grams, seconds)."""

    k_stretch: float = 1.0e3
    k_bend_twist: float = 5.0e-2
    k_body_collision: float = 1.0e4
    k_self_collision: float = 1.0e2
    k_hair_style: float = 1.0e2
    k_adhesion: float = 1.0e1
    mass: float = 0.01  # grams per vertex
    gravity: tuple[float, float, float] = (0.0, -981.0, 0.0)
    collision_offset: float = 0.4  # minimum body clearance D
    sph_radius: float = 1.0  # self-collision kernel support h
    s_max: float = 6.0  # style influence falloff distance
    r_neighbor: float = 0.25  # adhesion rest-pair search radius
    adhesion_max_neighbors: int = 5
    rho_rest_percentile: float = 100.0
    pt_mode: str = "fast"  # parallel transport: "fast" or "full"

    def validate(self) -> None:
        for name in _STIFFNESS_FIELDS:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.mass <= 0:
            raise ConfigError("mass must be positive")
        if self.collision_offset < 0:
            raise ConfigError("collision_offset must be non-negative")
        if self.sph_radius <= 0:
            raise ConfigError("sph_radius must be positive")
        if self.k_hair_style > 0 and self.s_max <= 0:
            raise ConfigError("s_max must be positive when k_hair_style > 0")
        if self.pt_mode not in ("fast", "full"):
            raise ConfigError(f"pt_mode must be 'fast' or 'full', got {self.pt_mode!r}")

    def with_overrides(self, overrides: dict) -> "EnergyConfig":
        unknown = set(overrides) - _STIFFNESS_FIELDS - {"s_max", "mass", "pt_mode"}
        if unknown:
            raise ConfigError(f"unknown stiffness overrides: {sorted(unknown)}")
        out = replace(self, **overrides)
        out.validate()
        return out


# ------------------------------------------------------- parallel transport


def _perpendicular(a: np.ndarray) -> np.ndarray:
    """Deterministic unit vector orthogonal to each row of a."""
    k = np.argmin(np.abs(a), axis=-1)
    basis = np.eye(3)[k]
    p = np.cross(a, basis)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def _pt_wv(a, b):
    """Minimal rotation taking unit a to unit b, as separate scalar and
    vector quaternion parts (tape-aware, contiguous layouts).

    Antiparallel inputs fall back to a 180-degree turn about a
    deterministic perpendicular of a; that branch is constant.
    """
    w = grad.dot(a, b) + 1.0
    v = grad.cross(a, b)
    mask = grad.value_of(w) < 1e-8
    if mask.any():
        av = np.broadcast_to(grad.value_of(a), grad.value_of(v).shape)
        w = grad.where(mask, np.zeros(mask.shape), w)
        v = grad.where(mask[..., None], _perpendicular(av), v)
    n = grad.sqrt(w * w + grad.dot(v, v))
    nv = grad.reshape(n, grad.value_of(n).shape + (1,))
    return w / n, v / nv


def _qmul_wv(wa, va, wb, vb):
    """Hamilton product on split quaternions: (wa, va) * (wb, vb)."""
    w = wa * wb - grad.dot(va, vb)
    wae = grad.reshape(wa, grad.value_of(wa).shape + (1,))
    wbe = grad.reshape(wb, grad.value_of(wb).shape + (1,))
    v = wae * vb + wbe * va + grad.cross(va, vb)
    return w, v


def _join_wv(w, v):
    return grad.concat([grad.reshape(w, grad.value_of(w).shape + (1,)), v], axis=-1)


def parallel_transport(a, b):
    """Public entry: validates near-unit inputs, then transports a to b."""
    for x in (a, b):
        n = np.linalg.norm(grad.value_of(x), axis=-1)
        if np.any(n < grad.NORM_EPS):
            raise NumericError("parallel_transport: zero-length input")
        if np.any(np.abs(n - 1.0) > 1e-6):
            raise ConfigError("parallel_transport expects unit vectors")
    return _join_wv(*_pt_wv(a, b))


def _orient_wv(unit_edges, mode: str):
    ev = grad.value_of(unit_edges)
    S, E = ev.shape[0], ev.shape[1]
    if mode == "fast":
        return _pt_wv(unit_edges[:, 0:1, :], unit_edges)
    if mode != "full":
        raise ConfigError(f"unknown parallel transport mode {mode!r}")
    ws = [None] * E
    vs = [None] * E
    ws[0], vs[0] = np.ones((S, 1)), np.zeros((S, 1, 3))
    pw, pv = ws[0], vs[0]
    for i in range(1, E):
        tw, tv = _pt_wv(unit_edges[:, i - 1 : i, :], unit_edges[:, i : i + 1, :])
        pw, pv = _qmul_wv(tw, tv, pw, pv)
        ws[i], vs[i] = pw, pv
    return grad.concat(ws, axis=1), grad.concat(vs, axis=1)


def edge_orientations(unit_edges, mode: str, root_frame: np.ndarray | None = None):
    """Per-edge orientation quaternions for unit edge vectors (S, E, 3).

    fast: q_i = PT(e_0 -> e_i) composed with the root frame, one batched
    transport. full: q_i = PT(e_{i-1} -> e_i) composed onto q_{i-1},
    accumulating twist-free transport along the strand. Twist components
    differ between the modes for non-planar strands.
    """
    q = _join_wv(*_orient_wv(unit_edges, mode))
    if root_frame is not None:
        q = grad.quat_mul(q, root_frame)
    return q


# ------------------------------------------------------------ rest geometry


@dataclass
class GroomRest:
    """Per-groom constants shared by every loss evaluation."""

    canonical: np.ndarray  # (S, V, 3) rest canonical positions, root at 0
    rest_lengths: np.ndarray  # (S, V-1) from canonical rest edges
    rest_rel_imag: np.ndarray  # (S, V-1, 3) per cfg.pt_mode, anchor pair first
    pair_rest_lengths: np.ndarray  # (S, V-1) anchor pair uses edge 0's length
    anchor: np.ndarray  # (S, 1, 3) unit rest root tangents
    root_rest_world: np.ndarray  # (S, 3)
    head_rest: RigidTransform
    rest_world: np.ndarray  # (S, V, 3) reconstructed through tape ops
    adhesion_pairs: np.ndarray  # (A, 2) flat vertex indices
    rho_rest: float
    cfg: EnergyConfig


def _relative_imag(unit_edges_with_anchor, mode: str):
    """Im(conj(q_i) * q_{i+1}) for consecutive edge orientations.

    The fast mode works on unnormalized transport quaternions and divides
    each consecutive-pair strain once by the product of their norms, which
    is algebraically the strain of the normalized pair.
    """
    if mode == "fast":
        e0 = unit_edges_with_anchor[:, 0:1, :]
        w = grad.dot(e0, unit_edges_with_anchor) + 1.0
        v = grad.cross(e0, unit_edges_with_anchor)
        mask = grad.value_of(w) < 1e-8
        if mask.any():
            av = np.broadcast_to(grad.value_of(e0), grad.value_of(v).shape)
            w = grad.where(mask, np.zeros(mask.shape), w)
            v = grad.where(mask[..., None], _perpendicular(av), v)
        n = grad.sqrt(w * w + grad.dot(v, v))
        raw = grad.transport_strain(w, v)
        nv = grad.value_of(n)
        denom = grad.reshape(n[:, :-1] * n[:, 1:], (nv.shape[0], nv.shape[1] - 1, 1))
        return raw / denom
    w, v = _orient_wv(unit_edges_with_anchor, mode)
    return grad.transport_strain(w, v)


def build_rest(g: Groom, cfg: EnergyConfig, head_rest: RigidTransform | None = None) -> GroomRest:
    cfg.validate()
    if head_rest is None:
        head_rest = rest_head_transform()
    canonical = to_canonical(g.vertices, head_rest)
    edges = grad.edge_diff(canonical)
    rest_lengths = grad.value_of(grad.norm(edges))
    unit = grad.value_of(grad.normalize(edges))
    anchor = unit[:, 0:1].copy()
    withanchor = np.concatenate([anchor, unit], axis=1)
    rest_rel_imag = grad.value_of(_relative_imag(withanchor, cfg.pt_mode))
    pair = np.empty_like(rest_lengths)
    pair[:, 0] = rest_lengths[:, 0]
    pair[:, 1:] = 0.5 * (rest_lengths[:, :-1] + rest_lengths[:, 1:])

    root_rest_world = g.vertices[:, 0].copy()
    rest_world = grad.value_of(grad.rotate_vec(head_rest.q, canonical)) + root_rest_world[:, None, :]
    pairs = build_adhesion_pairs(rest_world, cfg.r_neighbor, cfg.adhesion_max_neighbors)
    rho = sph_density_at(rest_world, cfg)
    rho_rest = float(np.percentile(rho, cfg.rho_rest_percentile)) if rho.size else 0.0
    return GroomRest(
        canonical,
        rest_lengths,
        rest_rel_imag,
        pair,
        anchor,
        root_rest_world,
        head_rest,
        rest_world,
        pairs,
        rho_rest,
        cfg,
    )


@dataclass
class StrandState:
    """Current strand configuration for loss evaluation.

    canonical/positions may be tape Values (training) or plain arrays
    (evaluation); both are (S, V, 3) with vertex 0 the pinned root.
    """

    canonical: object
    positions: object
    rest: GroomRest
    head: RigidTransform


def make_state(rest: GroomRest, canonical_free, head: RigidTransform | None = None) -> StrandState:
    """Assemble a state from free canonical vertices (S, V-1, 3).

    Roots ride rigidly with the head: their world positions come from the
    head transform relative to rest, which reduces to an exact identity
    when head equals the rest transform.
    """
    if head is None:
        head = rest.head_rest
    S = rest.canonical.shape[0]
    roots = np.zeros((S, 1, 3))
    canonical = grad.concat([roots, canonical_free], axis=1)
    delta = head.compose(rest.head_rest.inverse())
    root_world = delta.apply(rest.root_rest_world)
    positions = grad.rotate_vec(head.q, canonical) + root_world[:, None, :]
    return StrandState(canonical, positions, rest, head)


def state_from_world(rest: GroomRest, world: np.ndarray, head: RigidTransform) -> StrandState:
    """Plain-array state from world positions (reference trajectories)."""
    return StrandState(to_canonical(world, head), np.asarray(world, dtype=np.float64), rest, head)


# ------------------------------------------------------------- loss terms


def stretch_loss(state: StrandState, cfg: EnergyConfig):
    edges = grad.edge_diff(state.canonical)
    diff = grad.norm(edges) - state.rest.rest_lengths
    return 0.5 * cfg.k_stretch * grad.vsum(diff * diff)


def bend_twist_loss(state: StrandState, cfg: EnergyConfig):
    """Darboux deviation (k/2) sum of lbar * |(2/lbar)(Im - Im_rest)|^2,
    folded into a single weighted square sum with weights 4/lbar."""
    edges = grad.edge_diff(state.canonical)
    unit = grad.normalize(edges)
    withanchor = grad.concat([state.rest.anchor, unit], axis=1)
    im = _relative_imag(withanchor, cfg.pt_mode)
    strain = im - state.rest.rest_rel_imag
    weights = 4.0 / state.rest.pair_rest_lengths
    return 0.5 * cfg.k_bend_twist * grad.weighted_sqsum(strain, weights)


def gravity_loss(state: StrandState, cfg: EnergyConfig):
    x = state.positions[:, 1:, :]
    g = np.asarray(cfg.gravity, dtype=np.float64)
    return -cfg.mass * grad.vsum(grad.dot(x, g))


def body_correspondence(body_state: BodyState, x_flat: np.ndarray, cfg: EnergyConfig):
    """Active-set nearest-surface data for body collision, frozen per pass."""
    q = query_surface(body_state, x_flat, max_dist=16.0)
    near = np.isfinite(q.d) & (q.d < cfg.collision_offset + 0.5)
    idx = np.nonzero(near)[0]
    return idx, q.closest[near], q.normal[near]


def body_collision_loss(state: StrandState, cfg: EnergyConfig, correspondence):
    idx, closest, normal = correspondence
    if len(idx) == 0:
        return 0.0
    S, V = state.rest.canonical.shape[:2]
    flat = grad.reshape(state.positions[:, 1:, :], (S * (V - 1), 3))
    x = grad.gather(flat, idx)
    d = grad.dot(x - closest, normal)
    pen = grad.maximum(cfg.collision_offset - d, 0.0)
    return cfg.k_body_collision * grad.vsum(grad.pow3(pen))


_CELL_OFFSET = 1 << 20


def _cell_keys(coords: np.ndarray) -> np.ndarray:
    """Pack integer 3D cell coordinates into collision-free int64 keys."""
    if np.any(np.abs(coords) >= _CELL_OFFSET):
        raise NumericError("positions too large for the spatial grid")
    c = coords + _CELL_OFFSET
    return (c[:, 0] << 42) | (c[:, 1] << 21) | c[:, 2]


def find_density_pairs(points: np.ndarray, strand_ids: np.ndarray, vertex_ids: np.ndarray, h: float) -> np.ndarray:
    """(i, j) pairs with |x_i - x_j| < h, grid accelerated.

    Excludes j == i and the two strand-adjacent vertices. Pairs are
    sorted by (i, j), the same order the brute-force scan produces, so
    downstream sums are bit-identical between the two.
    """
    if len(points) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    coords = np.floor(points / h).astype(np.int64)
    keys = _cell_keys(coords)
    uniq, inverse = np.unique(keys, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    counts_per_cell = np.bincount(inverse, minlength=len(uniq))
    starts = np.concatenate([[0], np.cumsum(counts_per_cell)])
    pairs_i, pairs_j = [], []
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            for oz in (-1, 0, 1):
                nk = _cell_keys(coords + np.array([ox, oy, oz]))
                pos = np.searchsorted(uniq, nk)
                pos = np.minimum(pos, len(uniq) - 1)
                has = uniq[pos] == nk
                if not has.any():
                    continue
                src = np.nonzero(has)[0]
                cid = pos[src]
                counts = counts_per_cell[cid]
                total = int(counts.sum())
                if total == 0:
                    continue
                firsts = starts[cid]
                idx = np.repeat(firsts + counts - np.cumsum(counts), counts) + np.arange(total)
                i = np.repeat(src, counts)
                j = order[idx]
                keep = _pair_filter(points, strand_ids, vertex_ids, i, j, h)
                pairs_i.append(i[keep])
                pairs_j.append(j[keep])
    if not pairs_i:
        return np.zeros((0, 2), dtype=np.int64)
    i = np.concatenate(pairs_i)
    j = np.concatenate(pairs_j)
    order2 = np.lexsort((j, i))
    return np.stack([i[order2], j[order2]], axis=1)


def _pair_filter(points, strand_ids, vertex_ids, i, j, h):
    d = points[i] - points[j]
    r2 = np.einsum("ij,ij->i", d, d)
    keep = (r2 < h * h) & (i != j)
    same = strand_ids[i] == strand_ids[j]
    adjacent = np.abs(vertex_ids[i] - vertex_ids[j]) <= 1
    return keep & ~(same & adjacent)


def find_density_pairs_brute(points: np.ndarray, strand_ids: np.ndarray, vertex_ids: np.ndarray, h: float) -> np.ndarray:
    n = len(points)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.reshape(-1), j.reshape(-1)
    keep = _pair_filter(points, strand_ids, vertex_ids, i, j, h)
    return np.stack([i[keep], j[keep]], axis=1)


def _vertex_ids(S: int, V: int):
    strand = np.repeat(np.arange(S), V)
    vert = np.tile(np.arange(V), S)
    return strand, vert


def sph_density(x_flat, pairs: np.ndarray, cfg: EnergyConfig, n: int):
    """Per-vertex kernel density (tape-aware) for a fixed pair list."""
    if len(pairs) == 0:
        return np.zeros(n)
    xi = grad.gather(x_flat, pairs[:, 0])
    xj = grad.gather(x_flat, pairs[:, 1])
    d = xi - xj
    r2 = grad.dot(d, d)
    w = grad.pow3(grad.maximum(1.0 - r2 / (cfg.sph_radius**2), 0.0))
    return cfg.mass * grad.scatter_add(w, pairs[:, 0], n)


def sph_density_at(world: np.ndarray, cfg: EnergyConfig) -> np.ndarray:
    """Plain-array density of every vertex of a (S, V, 3) configuration."""
    S, V = world.shape[:2]
    flat = world.reshape(S * V, 3)
    strand, vert = _vertex_ids(S, V)
    pairs = find_density_pairs(flat, strand, vert, cfg.sph_radius)
    return grad.value_of(sph_density(flat, pairs, cfg, S * V))


def self_collision_loss(state: StrandState, cfg: EnergyConfig):
    S, V = state.rest.canonical.shape[:2]
    flat = grad.reshape(state.positions, (S * V, 3))
    plain = grad.value_of(flat)
    strand, vert = _vertex_ids(S, V)
    pairs = find_density_pairs(plain, strand, vert, cfg.sph_radius)
    if len(pairs) == 0:
        return 0.0
    rho = sph_density(flat, pairs, cfg, S * V)
    excess = grad.maximum(rho - state.rest.rho_rest, 0.0)
    return cfg.k_self_collision * grad.vsum(grad.pow3(excess))


def style_weights(body_state: BodyState, x_flat: np.ndarray, cfg: EnergyConfig) -> np.ndarray:
    q = query_surface(body_state, x_flat, max_dist=max(16.0, cfg.s_max + 1.0))
    s = np.where(np.isfinite(q.s), q.s, np.inf)
    return np.clip(1.0 - s / cfg.s_max, 0.0, 1.0)


def style_loss(state: StrandState, cfg: EnergyConfig, weights: np.ndarray):
    """Pulls vertices near the body toward the rigidly posed rest strand.

    weights come from style_weights on current positions and are held
    constant within the pass. Deviation is measured in the canonical
    frame, where the posed rest strand is the rest strand itself.
    """
    if not np.any(weights > 0.0):
        return 0.0
    S, V = state.rest.canonical.shape[:2]
    diff = state.canonical[:, 1:, :] - state.rest.canonical[:, 1:, :]
    w = weights.reshape(S, V - 1)
    return cfg.k_hair_style * grad.vsum(w * grad.dot(diff, diff))


def build_adhesion_pairs(rest_world: np.ndarray, r_neighbor: float, max_neighbors: int) -> np.ndarray:
    """Rest-pose clump pairs: up to max_neighbors closest other-strand
    vertices within r_neighbor of each vertex, ties to the lower index."""
    S, V = rest_world.shape[:2]
    flat = rest_world.reshape(S * V, 3)
    strand, vert = _vertex_ids(S, V)
    cand = find_density_pairs(flat, strand, vert, r_neighbor)
    if len(cand) == 0:
        return cand
    other = strand[cand[:, 0]] != strand[cand[:, 1]]
    cand = cand[other]
    if len(cand) == 0:
        return cand
    d = flat[cand[:, 0]] - flat[cand[:, 1]]
    r2 = np.einsum("ij,ij->i", d, d)
    order = np.lexsort((cand[:, 1], r2, cand[:, 0]))
    cand = cand[order]
    rank = np.arange(len(cand)) - np.searchsorted(cand[:, 0], cand[:, 0], side="left")
    keep = rank < max_neighbors
    kept = cand[keep]
    final = np.lexsort((kept[:, 1], kept[:, 0]))
    return kept[final]


def adhesion_loss(state: StrandState, cfg: EnergyConfig):
    pairs = state.rest.adhesion_pairs
    if len(pairs) == 0:
        return 0.0
    S, V = state.rest.canonical.shape[:2]
    flat = grad.reshape(state.positions, (S * V, 3))
    d = grad.gather(flat, pairs[:, 0]) - grad.gather(flat, pairs[:, 1])
    return cfg.k_adhesion * grad.vsum(grad.dot(d, d))


def inertia_loss(state: StrandState, cfg: EnergyConfig, prev: np.ndarray, prev2: np.ndarray, dt: float):
    """Implicit-Euler inertia against the ballistic continuation of two
    previous world-frame states; history must be detached arrays."""
    if isinstance(prev, grad.Value) or isinstance(prev2, grad.Value):
        raise ConfigError("inertia history must be detached arrays, not tape Values")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    xhat = 2.0 * prev - prev2
    diff = state.positions[:, 1:, :] - xhat[:, 1:, :]
    return (cfg.mass / (2.0 * dt * dt)) * grad.vsum(grad.dot(diff, diff))


def total_loss(
    state: StrandState,
    cfg: EnergyConfig,
    body_state: BodyState | None = None,
    prev: np.ndarray | None = None,
    prev2: np.ndarray | None = None,
    dt: float | None = None,
    quasi_static: bool = True,
):
    """Sum of the physics terms; returns (total, per-term float dict).

    quasi_static drops the inertia term; body-dependent terms drop out
    when body_state is None. Term order is fixed for determinism.
    """
    terms: dict[str, object] = {}
    terms["gravity"] = gravity_loss(state, cfg)
    terms["stretch"] = stretch_loss(state, cfg) if cfg.k_stretch > 0 else 0.0
    terms["bend_twist"] = bend_twist_loss(state, cfg) if cfg.k_bend_twist > 0 else 0.0
    if body_state is not None and cfg.k_body_collision > 0:
        S, V = state.rest.canonical.shape[:2]
        x_plain = grad.value_of(state.positions)[:, 1:, :].reshape(S * (V - 1), 3)
        corr = body_correspondence(body_state, x_plain, cfg)
        terms["body_collision"] = body_collision_loss(state, cfg, corr)
    else:
        terms["body_collision"] = 0.0
    terms["self_collision"] = self_collision_loss(state, cfg) if cfg.k_self_collision > 0 else 0.0
    if body_state is not None and cfg.k_hair_style > 0:
        S, V = state.rest.canonical.shape[:2]
        x_plain = grad.value_of(state.positions)[:, 1:, :].reshape(S * (V - 1), 3)
        w = style_weights(body_state, x_plain, cfg)
        terms["hair_style"] = style_loss(state, cfg, w)
    else:
        terms["hair_style"] = 0.0
    terms["adhesion"] = adhesion_loss(state, cfg) if cfg.k_adhesion > 0 else 0.0
    if quasi_static:
        terms["inertia"] = 0.0
    else:
        if prev is None or prev2 is None or dt is None:
            raise ConfigError("dynamic loss needs prev, prev2 and dt")
        terms["inertia"] = inertia_loss(state, cfg, prev, prev2, dt)

    total = 0.0
    for name in TERM_ORDER:
        total = terms[name] + total
    scalars = {name: float(grad.value_of(terms[name])) for name in TERM_ORDER}
    return total, scalars


TERM_ORDER = [
    "inertia",
    "gravity",
    "stretch",
    "bend_twist",
    "body_collision",
    "self_collision",
    "hair_style",
    "adhesion",
]
