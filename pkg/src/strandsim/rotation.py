"""Plain-numpy quaternion and rigid-transform helpers.

Quaternions are scalar-first (w, x, y, z), unit length, Hamilton product,
and act as active rotations: rotate(q, v) rotates v by q. All functions
broadcast over leading axes; the quaternion lives in the last axis.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def qmul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product p*q, broadcasting over leading axes."""
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def qconj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def qnormalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def qrot(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by quaternions q (active)."""
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis: np.ndarray, angle: float | np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)
    return np.concatenate(
        [np.cos(half)[..., None], s[..., None] * axis], axis=-1
    )


_AXIS_OF = {"X": np.array([1.0, 0, 0]), "Y": np.array([0, 1.0, 0]), "Z": np.array([0, 0, 1.0])}


def quat_from_euler(channels: list[str], values: np.ndarray) -> np.ndarray:
    """Compose rotation channels in listed order (BVH semantics).

    channels are names like "Zrotation"; values are degrees, shape
    (..., len(channels)). Returns (..., 4).
    """
    values = np.asarray(values, dtype=float)
    q = np.broadcast_to(IDENTITY, values.shape[:-1] + (4,)).copy()
    for i, ch in enumerate(channels):
        axis = _AXIS_OF[ch[0].upper()]
        q = qmul(q, quat_from_axis_angle(axis, np.radians(values[..., i])))
    return q


def qlog(q: np.ndarray) -> np.ndarray:
    """Rotation-vector log map of unit quaternions, shortest arc.

    Returns axis*angle with angle in [0, pi]. Sign-canonicalizes w >= 0
    first so q and -q map to the same vector.
    """
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    vn = np.linalg.norm(q[..., 1:], axis=-1)
    angle = 2.0 * np.arctan2(vn, q[..., 0])
    scale = np.where(vn > 1e-12, angle / np.where(vn > 1e-12, vn, 1.0), 2.0)
    return scale[..., None] * q[..., 1:]


def qcanon(q: np.ndarray) -> np.ndarray:
    """Deterministic sign choice: first nonzero of (w,x,y,z) made positive."""
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., :1] != 0.0, np.sign(q[..., :1]), 0.0)
    for i in (1, 2, 3):
        sign = np.where(sign == 0.0, np.where(q[..., i : i + 1] != 0.0, np.sign(q[..., i : i + 1]), 0.0), sign)
    sign = np.where(sign == 0.0, 1.0, sign)
    return q * sign


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row = lambda *c: np.stack(c, axis=-1)
    return np.stack(
        [
            row(1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
            row(2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
            row(2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
        ],
        axis=-2,
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w >= 0), Shepperd's method."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        r = np.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array([0.5 * r, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    if q[0] < 0:
        q = -q
    return q


class RigidTransform:
    """Rotation (unit quaternion) plus translation, acting as x -> R x + t."""

    __slots__ = ("q", "t")

    def __init__(self, q: np.ndarray, t: np.ndarray):
        q = np.asarray(q, dtype=float)
        t = np.asarray(t, dtype=float)
        if q.shape != (4,) or t.shape != (3,):
            raise ConfigError(f"rigid transform wants q (4,) and t (3,), got {q.shape} and {t.shape}")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise ConfigError(f"rotation quaternion is not unit length (|q| = {n:.9f})")
        self.q = q
        self.t = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(IDENTITY.copy(), np.zeros(3))

    @classmethod
    def from_matrix(cls, rot: np.ndarray, t: np.ndarray) -> "RigidTransform":
        rot = np.asarray(rot, dtype=float)
        if rot.shape != (3, 3) or np.abs(rot @ rot.T - np.eye(3)).max() > 1e-9 or np.linalg.det(rot) < 0:
            raise ConfigError("rotation part is not a proper orthonormal 3x3 matrix")
        return cls(matrix_to_quat(rot), t)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return qrot(self.q, x) + self.t

    def rotate(self, v: np.ndarray) -> np.ndarray:
        return qrot(self.q, v)

    def inverse(self) -> "RigidTransform":
        qi = qconj(self.q)
        return RigidTransform(qi, -qrot(qi, self.t))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self*other)(x) = self(other(x))."""
        return RigidTransform(qnormalize(qmul(self.q, other.q)), self.apply(other.t))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m
