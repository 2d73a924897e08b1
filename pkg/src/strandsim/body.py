"""Procedural skinned body proxy and exact closest-surface queries.

The body is a union of capsules (torso, chest, neck, head, two shoulder
stubs) triangulated once and deformed by linear blend skinning from the
six-joint skeleton, after applying a four-field linear shape basis
(height, girth, neck length, head scale). Signed distance to a point is
measured along the nearest triangle's face normal, so it is negative
inside the shell.

Closest-triangle queries run on a uniform grid with expanding-shell
search; a shell search that has scanned rings 0..r may stop once the best
squared distance is strictly below (r*cell)^2, which makes the result
exactly the global nearest triangle (ties broken by lowest index). The
shape basis displaces the template surface only; joint positions are a
function of pose alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .motion import PoseFrame, Skeleton, fk, humanoid_skeleton
from .rotation import IDENTITY, RigidTransform, qrot

HEAD_CENTER = np.array([0.0, 155.0, 0.0])
HEAD_RADIUS = 9.0

# capsule primitives: (bone, p0, p1, radius); p0 == p1 makes a sphere
_PRIMITIVES = [
    ("pelvis", (0.0, 88.0, 0.0), (0.0, 115.0, 0.0), 13.0),
    ("spine", (0.0, 115.0, 0.0), (0.0, 133.0, 0.0), 12.5),
    ("neck", (0.0, 133.0, 0.0), (0.0, 146.0, 0.0), 5.5),
    ("head", tuple(HEAD_CENTER), tuple(HEAD_CENTER), HEAD_RADIUS),
    ("l_shoulder", (7.0, 131.5, 0.0), (20.0, 130.0, 0.0), 5.0),
    ("r_shoulder", (-7.0, 131.5, 0.0), (-20.0, 130.0, 0.0), 5.0),
]

_BONES = ["pelvis", "spine", "neck", "head", "l_shoulder", "r_shoulder"]


def _capsule_mesh(p0, p1, radius, n_seg=14, n_cap=5):
    """Triangulated capsule with outward orientation."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    a = axis / length if length > 1e-9 else np.array([0.0, 1.0, 0.0])
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(a, ref)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)

    phis = np.linspace(0.0, 2.0 * np.pi, n_seg, endpoint=False)
    circle = np.cos(phis)[:, None] * u + np.sin(phis)[:, None] * v

    # rows of (center, lat) from bottom hemisphere through top hemisphere
    rows = []
    lats = -0.5 * np.pi + (np.arange(1, n_cap + 1)) * (0.5 * np.pi / n_cap)
    for lat in lats:  # bottom cap, ends at the p0 equator
        rows.append((p0, lat))
    top_lats = (np.arange(0, n_cap)) * (0.5 * np.pi / n_cap)
    if length <= 1e-9:
        top_lats = top_lats[1:]  # sphere: skip duplicate equator
    for lat in top_lats:
        rows.append((p1, lat))

    verts = [p0 - radius * a]  # bottom pole
    for center, lat in rows:
        ring = center + radius * (np.cos(lat) * circle + np.sin(lat) * a)
        verts.extend(ring)
    verts.append(p1 + radius * a)  # top pole
    verts = np.asarray(verts)

    tris = []
    bottom_pole = 0
    top_pole = len(verts) - 1
    nrows = len(rows)

    def ring_start(r):
        return 1 + r * n_seg

    for i in range(n_seg):
        j = (i + 1) % n_seg
        tris.append((bottom_pole, ring_start(0) + j, ring_start(0) + i))
    for r in range(nrows - 1):
        r0, r1 = ring_start(r), ring_start(r + 1)
        for i in range(n_seg):
            j = (i + 1) % n_seg
            tris.append((r0 + i, r0 + j, r1 + j))
            tris.append((r0 + i, r1 + j, r1 + i))
    last = ring_start(nrows - 1)
    for i in range(n_seg):
        j = (i + 1) % n_seg
        tris.append((last + i, last + j, top_pole))
    return verts, np.asarray(tris, dtype=np.int64)


@dataclass
class BodyModel:
    """Template mesh, skinning weights and shape basis on the built-in skeleton."""

    skeleton: Skeleton
    template: np.ndarray  # (Nv, 3)
    triangles: np.ndarray  # (Nt, 3)
    weights: np.ndarray  # (Nv, 6) rows sum to 1
    shape_basis: np.ndarray  # (4, Nv, 3)
    rest_joint_pos: np.ndarray  # (6, 3)

    @property
    def shape_dim(self) -> int:
        return self.shape_basis.shape[0]


def _shape_basis(template: np.ndarray) -> np.ndarray:
    y = template[:, 1]
    basis = np.zeros((4, len(template), 3))
    # height: stretch everything above the torso base upward
    basis[0, :, 1] = 0.12 * np.maximum(y - 75.0, 0.0)
    # girth: radial in XZ, fading out above the shoulders
    fade = np.clip((147.0 - y) / 14.0, 0.0, 1.0)
    basis[1, :, 0] = 0.15 * template[:, 0] * fade
    basis[1, :, 2] = 0.15 * template[:, 2] * fade
    # neck length: lift everything above the neck base
    basis[2, :, 1] = 4.0 * np.clip((y - 133.0) / 13.0, 0.0, 1.0)
    # head scale: radial about the head center for head-sphere vertices
    r = np.linalg.norm(template - HEAD_CENTER, axis=1)
    head_mask = (r < HEAD_RADIUS + 1.5) & (y > 144.0)
    basis[3, head_mask] = 0.12 * (template[head_mask] - HEAD_CENTER)
    return basis


def default_body() -> BodyModel:
    skel = humanoid_skeleton()
    verts_all, tris_all, bone_all = [], [], []
    at = 0
    for bone, p0, p1, r in _PRIMITIVES:
        v, t = _capsule_mesh(p0, p1, r)
        verts_all.append(v)
        tris_all.append(t + at)
        bone_all.append(np.full(len(v), _BONES.index(bone)))
        at += len(v)
    template = np.concatenate(verts_all)
    triangles = np.concatenate(tris_all)
    bone = np.concatenate(bone_all)

    weights = np.zeros((len(template), 6))
    weights[np.arange(len(template)), bone] = 1.0
    # blend the chest into the pelvis bone near their seam so the torso
    # bends smoothly; two influences max
    y = template[:, 1]
    chest = bone == 1
    ramp = np.clip((y[chest] - 110.0) / 10.0, 0.0, 1.0)
    weights[chest, 1] = ramp
    weights[chest, 0] = 1.0 - ramp
    neck = bone == 2
    ramp = np.clip((y[neck] - 130.0) / 6.0, 0.0, 1.0)
    weights[neck, 2] = ramp
    weights[neck, 1] = 1.0 - ramp

    pose = PoseFrame(np.zeros(3), np.broadcast_to(IDENTITY, (len(skel.joints), 4)).copy())
    jpos, _ = fk(skel, pose)
    rest = np.stack([jpos[skel.index(b)] for b in _BONES])
    return BodyModel(skel, template, triangles, weights, _shape_basis(template), rest)


# -------------------------------------------------------------- posed state


class _TriGrid:
    """Uniform grid over triangle AABBs, cell lists sorted by triangle index."""

    def __init__(self, verts: np.ndarray, tris: np.ndarray, cell: float):
        self.cell = cell
        corners = verts[tris]  # (T, 3, 3)
        lo = corners.min(axis=1)
        hi = corners.max(axis=1)
        self.origin = verts.min(axis=0) - 0.5 * cell
        top = verts.max(axis=0) + 0.5 * cell
        self.dims = np.maximum(np.ceil((top - self.origin) / cell).astype(np.int64), 1)
        ilo = np.floor((lo - self.origin) / cell).astype(np.int64)
        ihi = np.floor((hi - self.origin) / cell).astype(np.int64)
        ilo = np.clip(ilo, 0, self.dims - 1)
        ihi = np.clip(ihi, 0, self.dims - 1)

        span = ihi - ilo
        pairs_cell, pairs_tri = [], []
        max_span = span.max(axis=0)
        for ox in range(int(max_span[0]) + 1):
            for oy in range(int(max_span[1]) + 1):
                for oz in range(int(max_span[2]) + 1):
                    m = (span[:, 0] >= ox) & (span[:, 1] >= oy) & (span[:, 2] >= oz)
                    if not m.any():
                        continue
                    cc = ilo[m] + np.array([ox, oy, oz])
                    pairs_cell.append(self._flat(cc))
                    pairs_tri.append(np.nonzero(m)[0])
        cells = np.concatenate(pairs_cell)
        ids = np.concatenate(pairs_tri)
        order = np.lexsort((ids, cells))
        cells, ids = cells[order], ids[order]
        ncells = int(self.dims.prod())
        self.starts = np.zeros(ncells + 1, dtype=np.int64)
        np.add.at(self.starts, cells + 1, 1)
        self.starts = np.cumsum(self.starts)
        self.tri_ids = ids

    def _flat(self, cc: np.ndarray) -> np.ndarray:
        return (cc[..., 0] * self.dims[1] + cc[..., 1]) * self.dims[2] + cc[..., 2]

    def point_cells(self, p: np.ndarray) -> np.ndarray:
        return np.floor((p - self.origin) / self.cell).astype(np.int64)


@dataclass
class BodyState:
    """One posed body: world mesh, per-face normals, query grid, head frame."""

    vertices: np.ndarray
    triangles: np.ndarray
    tri_normals: np.ndarray
    head: RigidTransform
    grid: _TriGrid

    @property
    def mean_edge(self) -> float:
        return self.grid.cell / 2.0


def _face_normals(verts, tris):
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def state_from_mesh(vertices: np.ndarray, triangles: np.ndarray, head: RigidTransform | None = None) -> BodyState:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    edges = np.concatenate(
        [
            vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
            vertices[triangles[:, 2]] - vertices[triangles[:, 1]],
            vertices[triangles[:, 0]] - vertices[triangles[:, 2]],
        ]
    )
    cell = 2.0 * float(np.linalg.norm(edges, axis=1).mean())
    return BodyState(
        vertices,
        triangles,
        _face_normals(vertices, triangles),
        head if head is not None else RigidTransform.identity(),
        _TriGrid(vertices, triangles, cell),
    )


def pose_body(model: BodyModel, pose: PoseFrame, beta: np.ndarray) -> BodyState:
    """Shape, then skin, the template; returns the posed query state."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.shape_dim,):
        raise ConfigError(f"beta must have shape ({model.shape_dim},), got {beta.shape}")
    shaped = model.template + np.einsum("k,kij->ij", beta, model.shape_basis)

    jpos, jrot = fk(model.skeleton, pose)
    out = np.zeros_like(shaped)
    for k, bone in enumerate(_BONES):
        w = model.weights[:, k]
        nz = w > 0.0
        if not nz.any():
            continue
        ji = model.skeleton.index(bone)
        local = shaped[nz] - model.rest_joint_pos[k]
        out[nz] += w[nz, None] * (qrot(jrot[ji], local) + jpos[ji])

    hi = model.skeleton.index("head")
    head = RigidTransform(jrot[hi] / np.linalg.norm(jrot[hi]), jpos[hi])
    return state_from_mesh(out, model.triangles, head)


def rest_state(model: BodyModel, beta: np.ndarray | None = None) -> BodyState:
    pose = PoseFrame(np.zeros(3), np.broadcast_to(IDENTITY, (len(model.skeleton.joints), 4)).copy())
    return pose_body(model, pose, beta if beta is not None else np.zeros(model.shape_dim))


# ----------------------------------------------------------------- queries


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a,b,c) to points p, all (N,3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe_div(num, den):
        return num / np.where(np.abs(den) > 1e-30, den, 1.0)

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        nonlocal done
        m = mask & ~done
        out[m] = value[m]
        done = done | m

    take((d1 <= 0) & (d2 <= 0), a)
    take((d3 >= 0) & (d4 <= d3), b)
    take((d6 >= 0) & (d5 <= d6), c)
    take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + safe_div(d1, d1 - d3)[:, None] * ab)
    take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + safe_div(d2, d2 - d6)[:, None] * ac)
    take(
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
        b + safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[:, None] * (c - b),
    )
    denom = va + vb + vc
    v = safe_div(vb, denom)
    w = safe_div(vc, denom)
    take(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


@dataclass
class SurfaceQuery:
    """Per-point nearest-surface data; far points (beyond max_dist) carry
    s = d = +inf and tri = -1."""

    s: np.ndarray  # unsigned distance
    d: np.ndarray  # signed distance along the nearest face normal
    normal: np.ndarray  # (P, 3) nearest face normal
    closest: np.ndarray  # (P, 3)
    tri: np.ndarray  # (P,) triangle index, -1 when far

_shell_cache: dict[int, np.ndarray] = {}


def _shell_offsets(r: int) -> np.ndarray:
    if r not in _shell_cache:
        rng = np.arange(-r, r + 1)
        g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        g = g[np.abs(g).max(axis=1) == r]
        _shell_cache[r] = g
    return _shell_cache[r]


def query_surface(state: BodyState, points: np.ndarray, max_dist: float | None = None) -> SurfaceQuery:
    """Exact nearest triangle per point (ties to lowest index).

    With max_dist set, the shell search stops early and points farther
    than max_dist from the surface are reported as far.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    P = len(points)
    grid = state.grid
    tris = state.triangles
    verts = state.vertices

    best_d2 = np.full(P, np.inf)
    best_tri = np.full(P, -1, dtype=np.int64)
    best_pt = np.zeros((P, 3))
    home = grid.point_cells(points)

    # no shell beyond this can hold the mesh, whatever the start cell
    far_corner = np.maximum(np.abs(points - grid.origin), np.abs(points - (grid.origin + grid.dims * grid.cell)))
    r_hard = int(np.ceil(np.linalg.norm(far_corner, axis=1).max() / grid.cell)) + 2

    active = np.arange(P)
    r = 0
    while active.size and r <= r_hard:
        cells = home[active][:, None, :] + _shell_offsets(r)[None, :, :]
        ok = ((cells >= 0) & (cells < grid.dims)).all(axis=2)
        pt_rep = np.broadcast_to(active[:, None], ok.shape)[ok]
        flat = grid._flat(cells[ok])
        counts = grid.starts[flat + 1] - grid.starts[flat]
        has = counts > 0
        if has.any():
            flat, pt_rep, counts = flat[has], pt_rep[has], counts[has]
            # expand CSR ranges into (point, triangle) pairs
            total = int(counts.sum())
            firsts = grid.starts[flat]
            idx = np.repeat(firsts + counts - counts.cumsum(), counts) + np.arange(total)
            pair_tri = grid.tri_ids[idx]
            pair_pt = np.repeat(pt_rep, counts)

            pa = points[pair_pt]
            cp = _closest_on_triangles(pa, verts[tris[pair_tri, 0]], verts[tris[pair_tri, 1]], verts[tris[pair_tri, 2]])
            diff = pa - cp
            d2 = np.einsum("ij,ij->i", diff, diff)

            order = np.lexsort((pair_tri, d2, pair_pt))
            pp, first = np.unique(pair_pt[order], return_index=True)
            cand_d2 = d2[order][first]
            cand_tri = pair_tri[order][first]
            cand_cp = cp[order][first]
            better = (cand_d2 < best_d2[pp]) | ((cand_d2 == best_d2[pp]) & (cand_tri < best_tri[pp]))
            upd = pp[better]
            best_d2[upd] = cand_d2[better]
            best_tri[upd] = cand_tri[better]
            best_pt[upd] = cand_cp[better]

        # certified once nothing unscanned can beat the current best
        bound = r * grid.cell
        certified = best_d2[active] < bound * bound
        if max_dist is not None:
            certified |= bound >= max_dist
        active = active[~certified]
        r += 1

    s = np.sqrt(best_d2)
    far = best_tri < 0
    if max_dist is not None:
        far |= s > max_dist
    normal = np.zeros((P, 3))
    d = np.full(P, np.inf)
    near = ~far
    normal[near] = state.tri_normals[best_tri[near]]
    d[near] = np.einsum("ij,ij->i", points[near] - best_pt[near], normal[near])
    s[far] = np.inf
    best_tri[far] = -1
    return SurfaceQuery(s, d, normal, best_pt, best_tri)


def query_surface_brute(state: BodyState, points: np.ndarray) -> SurfaceQuery:
    """Reference implementation: scan every triangle for every point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tris = state.triangles
    verts = state.vertices
    P, T = len(points), len(tris)
    pa = np.repeat(points, T, axis=0)
    tr = np.tile(np.arange(T), P)
    cp = _closest_on_triangles(pa, verts[tris[tr, 0]], verts[tris[tr, 1]], verts[tris[tr, 2]])
    diff = pa - cp
    d2 = np.einsum("ij,ij->i", diff, diff).reshape(P, T)
    best_tri = np.argmin(d2, axis=1)  # first min = lowest triangle index
    best_d2 = d2[np.arange(P), best_tri]
    best_pt = cp.reshape(P, T, 3)[np.arange(P), best_tri]
    normal = state.tri_normals[best_tri]
    d = np.einsum("ij,ij->i", points - best_pt, normal)
    return SurfaceQuery(np.sqrt(best_d2), d, normal, best_pt, best_tri.astype(np.int64))


def mesh_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    """Signed volume; positive for outward-oriented closed meshes."""
    a, b, c = vertices[triangles[:, 0]], vertices[triangles[:, 1]], vertices[triangles[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)
