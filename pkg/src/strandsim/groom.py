"""Grooms: strand geometry, lock clustering, procedural styles, file I/O.

A groom is a set of strands with a shared per-strand vertex count V,
rooted on the scalp cap of the body's head sphere. Strands carry a root
UV on the cap and a lock id from k-means clustering of root UVs. Rest
lengths are always recomputed from vertices, never stored.

Groom files are little-endian binary: magic "NLGR", version byte, strand
count u32, V u32, then per strand root UV (2 f32), vertices (V*3 f32) and
lock id (u32), then a u32-length-prefixed UTF-8 JSON blob of style
parameters. Vertex data is f32 on disk, f64 in memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .body import HEAD_CENTER, HEAD_RADIUS
from .errors import ConfigError, GroomFormatError
from .rotation import RigidTransform

SCALP_MAX_POLAR = np.radians(70.0)  # cap half-angle from the +Y pole
_GRAVITY_BLEND = 0.45  # scalp normal vs straight-down mix for strand direction

MAGIC = b"NLGR"
VERSION = 1


@dataclass
class Strand:
    vertices: np.ndarray  # (V, 3)
    root_uv: np.ndarray  # (2,)
    lock_id: int

    @property
    def rest_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)


@dataclass
class Groom:
    """Stacked strand arrays plus style parameters."""

    vertices: np.ndarray  # (S, V, 3) rest positions, world frame
    root_uv: np.ndarray  # (S, 2)
    lock_ids: np.ndarray  # (S,)
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 3 or self.vertices.shape[2] != 3 or self.vertices.shape[1] < 2:
            raise ConfigError(f"groom vertices must be (S, V>=2, 3), got {self.vertices.shape}")
        if np.any(np.linalg.norm(np.diff(self.vertices, axis=1), axis=2) <= 0.0):
            raise ConfigError("groom has a zero-length strand edge")

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[1]

    @property
    def rest_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=1), axis=2)

    def strand(self, i: int) -> Strand:
        return Strand(self.vertices[i], self.root_uv[i], int(self.lock_ids[i]))

    def subset(self, idx: np.ndarray) -> "Groom":
        return Groom(self.vertices[idx].copy(), self.root_uv[idx].copy(), self.lock_ids[idx].copy(), dict(self.style))


# ----------------------------------------------------------------- geometry


def resample_strand(vertices: np.ndarray, n_out: int) -> np.ndarray:
    """Resample a polyline to n_out vertices with uniform edge lengths.

    Points are first placed at uniform arc length along the input, then
    edge vectors are scaled about the root so the output polyline's total
    length equals the input's exactly. Already-uniform inputs with the
    same vertex count come back unchanged (within float round-off).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) < 2:
        raise ConfigError(f"resample wants (V>=2, 3) vertices, got {vertices.shape}")
    if n_out < 2:
        raise ConfigError("resample needs at least 2 output vertices")
    seg = np.diff(vertices, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    total = float(seglen.sum())
    if total <= 0.0:
        raise ConfigError("degenerate strand: zero total length")
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    targets = np.arange(n_out) * (total / (n_out - 1))
    targets[-1] = cum[-1]
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    denom = np.where(seglen[idx] > 0.0, seglen[idx], 1.0)
    t = (targets - cum[idx]) / denom
    pts = vertices[idx] + t[:, None] * seg[idx]

    edges = np.diff(pts, axis=0)
    new_total = float(np.linalg.norm(edges, axis=1).sum())
    scale = total / new_total
    out = np.empty_like(pts)
    out[0] = pts[0]
    out[1:] = pts[0] + np.cumsum(edges * scale, axis=0)
    return out


def to_canonical(vertices: np.ndarray, head: RigidTransform) -> np.ndarray:
    """World strand positions -> head-local offsets with the root at origin."""
    vertices = np.asarray(vertices, dtype=np.float64)
    inv = head.inverse()
    rel = vertices - vertices[..., :1, :]
    return inv.rotate(rel)


def from_canonical(canonical: np.ndarray, head: RigidTransform, root_world: np.ndarray) -> np.ndarray:
    """Inverse of to_canonical given the world root position."""
    canonical = np.asarray(canonical, dtype=np.float64)
    root_world = np.asarray(root_world, dtype=np.float64)
    return head.rotate(canonical) + root_world[..., None, :]


def root_world_at(root_rest: np.ndarray, head_rest: RigidTransform, head_now: RigidTransform) -> np.ndarray:
    """Rest root positions carried rigidly by the head to the current pose."""
    return head_now.apply(head_rest.inverse().apply(root_rest))


# --------------------------------------------------------------- clustering


def kmeans_objective(points: np.ndarray, labels: np.ndarray, k: int) -> float:
    obj = 0.0
    for c in range(k):
        m = labels == c
        if m.any():
            mu = points[m].mean(axis=0)
            obj += float(((points[m] - mu) ** 2).sum())
    return obj


def cluster_locks(root_uv: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Lloyd k-means on root UVs; deterministic for a given seed.

    Ties assign to the lowest centroid index; empty clusters are reseeded
    at the point currently farthest from its centroid.
    """
    points = np.asarray(root_uv, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(n, size=k, replace=False)].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        d2 = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)  # first minimum = lowest index
        for c in range(k):
            m = new_labels == c
            if m.any():
                centroids[c] = points[m].mean(axis=0)
            else:
                worst = int(np.argmax(d2[np.arange(n), new_labels]))
                centroids[c] = points[worst]
                new_labels[worst] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def lock_count(n_strands: int, cluster_size: int = 50) -> int:
    if cluster_size < 1:
        raise ConfigError("cluster_size must be >= 1")
    return int(np.ceil(n_strands / cluster_size))


# --------------------------------------------------------------- generation


def _scalp_frame(u: np.ndarray, v: np.ndarray):
    """Root position, outward normal, and azimuthal tangent for cap UVs."""
    phi = 2.0 * np.pi * u
    theta = SCALP_MAX_POLAR * np.sqrt(v)  # area-uniform in v
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    normal = np.stack([sin_t * np.cos(phi), cos_t, sin_t * np.sin(phi)], axis=-1)
    root = HEAD_CENTER + HEAD_RADIUS * normal
    azim = np.stack([-np.sin(phi), np.zeros_like(phi), np.cos(phi)], axis=-1)
    return root, normal, azim


def _blend_direction(normal: np.ndarray) -> np.ndarray:
    down = np.array([0.0, -1.0, 0.0])
    d = (1.0 - _GRAVITY_BLEND) * normal + _GRAVITY_BLEND * down
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _jitter(rng: np.random.Generator, d: np.ndarray, max_angle: float = 0.03) -> np.ndarray:
    axis = rng.normal(size=d.shape)
    axis -= d * (axis * d).sum(axis=-1, keepdims=True)
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    ang = rng.uniform(0.0, max_angle, size=d.shape[:-1] + (1,))
    out = np.cos(ang) * d + np.sin(ang) * axis
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _fine_arc(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def generate_groom(
    style: str,
    n_strands: int,
    n_vertices: int = 25,
    length: float = 24.0,
    seed: int = 0,
    cluster_size: int = 50,
) -> Groom:
    """Procedural groom on the scalp cap; bit-identical for a given seed.

    Styles: straight (scalp normal blended toward gravity), wavy
    (sideways sinusoid), curly (helix; arc length follows the closed
    form), ponytail (strands gathered behind the head, then hanging).
    """
    if n_strands < 1:
        raise ConfigError("n_strands must be >= 1")
    if n_vertices < 2:
        raise ConfigError("n_vertices must be >= 2")
    if length <= 0:
        raise ConfigError("length must be positive")
    known = {"straight", "wavy", "curly", "ponytail"}
    if style not in known:
        raise ConfigError(f"unknown style {style!r} (want one of {sorted(known)})")

    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, n_strands)
    v = rng.uniform(0.0, 1.0, n_strands)
    roots, normals, azim = _scalp_frame(u, v)
    d = _jitter(rng, _blend_direction(normals))

    verts = np.empty((n_strands, n_vertices, 3))
    style_params: dict = {"style": style, "s_max": 6.0}

    if style == "straight":
        steps = np.arange(n_vertices) * (length / (n_vertices - 1))
        verts = roots[:, None, :] + steps[None, :, None] * d[:, None, :]
    elif style == "wavy":
        amp, wavelen = 1.3, 8.0
        fine = 40 * n_vertices
        t = np.linspace(0.0, 1.0, fine)
        for i in range(n_strands):
            b = np.cross(d[i], normals[i])
            bn = np.linalg.norm(b)
            b = b / bn if bn > 1e-6 else azim[i]
            # one correction pass so the arc length lands near the target
            extent = length
            for _ in range(2):
                curve = roots[i] + np.outer(t * extent, d[i]) + np.outer(amp * t * np.sin(2 * np.pi * t * extent / wavelen), b)
                extent *= length / _fine_arc(curve)
            verts[i] = resample_strand(curve, n_vertices)
    elif style == "curly":
        radius, pitch = 1.2, 4.0
        c = pitch / (2.0 * np.pi)
        rate = np.sqrt(radius * radius + c * c)  # arc length per radian of helix phase
        u_max = length / rate
        fine = 100 * n_vertices
        uu = np.linspace(0.0, u_max, fine)
        for i in range(n_strands):
            b1 = np.cross(d[i], normals[i])
            bn = np.linalg.norm(b1)
            b1 = b1 / bn if bn > 1e-6 else azim[i]
            b2 = np.cross(d[i], b1)
            curve = (
                roots[i]
                + np.outer(c * uu, d[i])
                + np.outer(radius * (np.cos(uu) - 1.0), b1)
                + np.outer(radius * np.sin(uu), b2)
            )
            verts[i] = resample_strand(curve, n_vertices)
        style_params["helix_radius"] = radius
        style_params["helix_pitch"] = pitch
    elif style == "ponytail":
        gather = np.array([0.0, 150.0, -13.0])
        t = np.linspace(0.0, 1.0, 30 * n_vertices)
        for i in range(n_strands):
            ctrl = roots[i] + 4.0 * normals[i]
            bez = (
                np.outer((1 - t) ** 2, roots[i])
                + np.outer(2 * (1 - t) * t, ctrl)
                + np.outer(t * t, gather)
            )
            tail_len = max(length - _fine_arc(bez), 6.0)
            tail = gather + np.outer(t[1:] * tail_len, np.array([0.0, -1.0, 0.0]))
            verts[i] = resample_strand(np.concatenate([bez, tail]), n_vertices)
        style_params["gather"] = [float(x) for x in gather]
        style_params["s_max"] = 8.0

    uv = np.stack([u, v], axis=-1)
    k = lock_count(n_strands, cluster_size)
    labels = cluster_locks(uv, k, seed=seed)
    return Groom(verts, uv, labels, style_params)


# --------------------------------------------------------------------- I/O


def write_groom(groom: Groom) -> bytes:
    S, V = len(groom), groom.n_vertices
    rec = np.dtype([("uv", "<f4", (2,)), ("verts", "<f4", (V, 3)), ("lock", "<u4")])
    arr = np.empty(S, dtype=rec)
    arr["uv"] = groom.root_uv.astype(np.float32)
    arr["verts"] = groom.vertices.astype(np.float32)
    arr["lock"] = groom.lock_ids.astype(np.uint32)
    blob = json.dumps(groom.style, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<BII", VERSION, S, V) + arr.tobytes() + struct.pack("<I", len(blob)) + blob


def read_groom(data: bytes) -> Groom:
    if len(data) < 13:
        raise GroomFormatError(f"file too short to be a groom ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise GroomFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, S, V = struct.unpack_from("<BII", data, 4)
    if version != VERSION:
        raise GroomFormatError(f"unsupported groom version {version} (reader supports {VERSION})")
    if V < 2:
        raise GroomFormatError(f"strand vertex count {V} is below the minimum of 2")
    rec = np.dtype([("uv", "<f4", (2,)), ("verts", "<f4", (V, 3)), ("lock", "<u4")])
    need = 13 + S * rec.itemsize
    if len(data) < need + 4:
        raise GroomFormatError(f"truncated groom: {len(data)} bytes, need at least {need + 4} for {S} strands of {V} vertices")
    arr = np.frombuffer(data, dtype=rec, count=S, offset=13)
    (blob_len,) = struct.unpack_from("<I", data, need)
    if len(data) < need + 4 + blob_len:
        raise GroomFormatError("truncated groom: style JSON shorter than its declared length")
    try:
        style = json.loads(data[need + 4 : need + 4 + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise GroomFormatError(f"bad style JSON: {e}") from None
    try:
        return Groom(
            arr["verts"].astype(np.float64),
            arr["uv"].astype(np.float64),
            arr["lock"].astype(np.int64),
            style,
        )
    except ConfigError as e:
        raise GroomFormatError(str(e)) from None


def save_groom(path, groom: Groom) -> None:
    with open(path, "wb") as f:
        f.write(write_groom(groom))


def load_groom(path) -> Groom:
    with open(path, "rb") as f:
        return read_groom(f.read())


# OBJ polyline frames: one file per frame, strands as `l` elements.


def write_obj_frame(positions: np.ndarray) -> str:
    positions = np.asarray(positions, dtype=np.float32)
    S, V, _ = positions.shape
    lines = []
    for p in positions.reshape(-1, 3):
        lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    for s in range(S):
        base = s * V + 1
        lines.append("l " + " ".join(str(base + i) for i in range(V)))
    return "\n".join(lines) + "\n"


def read_obj_frame(text: str) -> np.ndarray:
    verts, polys = [], []
    for ln, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0] == "#":
            continue
        if parts[0] == "v":
            if len(parts) != 4:
                raise ConfigError(f"bad vertex line {ln}: {line!r}")
            verts.append([float(x) for x in parts[1:]])
        elif parts[0] == "l":
            polys.append([int(x) for x in parts[1:]])
    if not polys:
        raise ConfigError("OBJ frame has no polylines")
    V = len(polys[0])
    if any(len(p) != V for p in polys):
        raise ConfigError("OBJ polylines have inconsistent vertex counts")
    varr = np.asarray(verts, dtype=np.float32)
    idx = np.asarray(polys, dtype=np.int64) - 1
    if idx.min() < 0 or idx.max() >= len(varr):
        raise ConfigError("OBJ polyline references a missing vertex")
    return varr[idx].astype(np.float64)
