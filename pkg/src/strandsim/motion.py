"""Skeletal motion: BVH ingestion, synthetic clips, boundary-condition history.

The simulator conditions on a reduced six-joint upper-body skeleton
(pelvis, spine, neck, head, l_shoulder, r_shoulder). Arbitrary BVH clips
are retargeted onto it by joint-name matching; synthetic clips are
generated on it directly. Angles are stored in degrees in BVH channels
and converted to unit quaternions internally. Units are centimeters and
seconds, Y up.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import BvhParseError, ConfigError
from .rotation import IDENTITY, RigidTransform, qcanon, qlog, qmul, qrot, quat_from_euler

REDUCED_JOINTS = ["pelvis", "spine", "neck", "head", "l_shoulder", "r_shoulder"]

_POSITION_CHANNELS = {"Xposition", "Yposition", "Zposition"}
_ROTATION_CHANNELS = {"Xrotation", "Yrotation", "Zrotation"}

# Retarget aliases, in priority order per reduced joint. Matching is done on
# lowercased names with separators stripped.
_ALIASES = {
    "pelvis": ["pelvis", "hips", "hip", "root"],
    "spine": ["spine", "chest", "spine1", "spine2", "torso"],
    "neck": ["neck", "neck1"],
    "head": ["head"],
    "l_shoulder": ["lshoulder", "leftshoulder", "lcollar", "leftcollar"],
    "r_shoulder": ["rshoulder", "rightshoulder", "rcollar", "rightcollar"],
}


@dataclass
class Joint:
    name: str
    parent: int  # -1 for the root
    offset: np.ndarray  # (3,) rest offset from parent
    channels: list[str] = field(default_factory=list)  # empty for end sites


@dataclass
class Skeleton:
    joints: list[Joint]

    def index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise ConfigError(f"skeleton has no joint named {name!r}")


@dataclass
class PoseFrame:
    """One frame: root translation plus per-joint local rotations."""

    root_translation: np.ndarray  # (3,)
    rotations: np.ndarray  # (J, 4) unit quats, identity for channel-less joints


@dataclass
class MotionClip:
    skeleton: Skeleton
    frame_time: float
    channels: np.ndarray  # (F, C) raw channel values in file order

    def __post_init__(self):
        slices = []
        at = 0
        for j in self.skeleton.joints:
            slices.append(slice(at, at + len(j.channels)))
            at += len(j.channels)
        self._joint_slices = slices
        if self.channels.ndim != 2 or self.channels.shape[1] != at:
            raise ConfigError(
                f"clip has {self.channels.shape[1] if self.channels.ndim == 2 else '?'} channels per frame, skeleton wants {at}"
            )

    @property
    def frames(self) -> int:
        return self.channels.shape[0]

    @property
    def duration(self) -> float:
        return self.frames * self.frame_time

    def pose_at(self, t: int) -> PoseFrame:
        if not 0 <= t < self.frames:
            raise ConfigError(f"frame {t} out of range [0, {self.frames})")
        row = self.channels[t]
        joints = self.skeleton.joints
        rots = np.broadcast_to(IDENTITY, (len(joints), 4)).copy()
        trans = np.zeros(3)
        for ji, j in enumerate(joints):
            vals = row[self._joint_slices[ji]]
            rot_ch = [c for c in j.channels if c in _ROTATION_CHANNELS]
            rot_vals = [vals[k] for k, c in enumerate(j.channels) if c in _ROTATION_CHANNELS]
            if rot_ch:
                rots[ji] = quat_from_euler(rot_ch, np.asarray(rot_vals))
            if j.parent == -1:
                for k, c in enumerate(j.channels):
                    if c in _POSITION_CHANNELS:
                        trans["XYZ".index(c[0])] = vals[k]
        return PoseFrame(trans, rots)


def fk(skeleton: Skeleton, pose: PoseFrame) -> tuple[np.ndarray, np.ndarray]:
    """World joint positions (J,3) and rotations (J,4) for one pose."""
    joints = skeleton.joints
    pos = np.zeros((len(joints), 3))
    rot = np.zeros((len(joints), 4))
    for i, j in enumerate(joints):
        if j.parent == -1:
            pos[i] = j.offset + pose.root_translation
            rot[i] = pose.rotations[i]
        else:
            rot[i] = qmul(rot[j.parent], pose.rotations[i])
            pos[i] = pos[j.parent] + qrot(rot[j.parent], j.offset)
    return pos, rot


# ------------------------------------------------------------------ BVH text


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, ln))
        self.at = 0

    def peek(self) -> tuple[str, int] | None:
        return self.items[self.at] if self.at < len(self.items) else None

    def next(self, expect: str | None = None) -> tuple[str, int]:
        if self.at >= len(self.items):
            raise BvhParseError("unexpected end of file")
        tok, ln = self.items[self.at]
        self.at += 1
        if expect is not None and tok != expect:
            raise BvhParseError(f"expected {expect!r} but found {tok!r} (line {ln})")
        return tok, ln

    def number(self, what: str) -> float:
        tok, ln = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BvhParseError(f"non-numeric {what} {tok!r} (line {ln})") from None


def _parse_joint(tk: _Tokens, name: str, parent: int, joints: list[Joint]) -> None:
    me = len(joints)
    joints.append(Joint(name, parent, np.zeros(3), []))
    tk.next("{")
    tok, ln = tk.next("OFFSET")
    joints[me].offset = np.array([tk.number("OFFSET value") for _ in range(3)])
    while True:
        tok, ln = tk.next()
        if tok == "}":
            return
        if tok == "CHANNELS":
            n = int(tk.number("channel count"))
            chans = []
            for _ in range(n):
                ch, cln = tk.next()
                if ch not in _POSITION_CHANNELS | _ROTATION_CHANNELS:
                    raise BvhParseError(f"unknown channel name {ch!r} (line {cln})")
                chans.append(ch)
            joints[me].channels = chans
        elif tok == "JOINT":
            child, _ = tk.next()
            _parse_joint(tk, child, me, joints)
        elif tok == "End":
            tk.next("Site")
            tk.next("{")
            tk.next("OFFSET")
            off = np.array([tk.number("OFFSET value") for _ in range(3)])
            joints.append(Joint(name + "_end", me, off, []))
            tk.next("}")
        else:
            raise BvhParseError(f"unexpected token {tok!r} inside joint {name!r} (line {ln})")


def parse_bvh(text: str) -> MotionClip:
    """Parse BVH text into a MotionClip; raises BvhParseError with line info."""
    tk = _Tokens(text)
    tk.next("HIERARCHY")
    tk.next("ROOT")
    root_name, _ = tk.next()
    joints: list[Joint] = []
    _parse_joint(tk, root_name, -1, joints)
    skeleton = Skeleton(joints)

    nxt = tk.peek()
    if nxt is None or nxt[0] != "MOTION":
        where = f"(line {nxt[1]})" if nxt else "(end of file)"
        raise BvhParseError(f"missing MOTION section {where}")
    tk.next("MOTION")
    tok, ln = tk.next()
    if tok != "Frames:":
        raise BvhParseError(f"expected 'Frames:' but found {tok!r} (line {ln})")
    nframes = int(tk.number("frame count"))
    tok, ln = tk.next()
    if tok == "Frame" and tk.peek() and tk.peek()[0] == "Time:":
        tk.next()
    else:
        raise BvhParseError(f"expected 'Frame Time:' but found {tok!r} (line {ln})")
    frame_time = tk.number("frame time")
    if frame_time <= 0:
        raise BvhParseError("frame time must be positive")

    width = sum(len(j.channels) for j in joints)
    rows = np.zeros((nframes, width))
    for f in range(nframes):
        start = tk.peek()
        if start is None:
            raise BvhParseError(f"frame {f} is missing ({nframes} frames declared, file ends early)")
        row_line = start[1]
        for c in range(width):
            nxt = tk.peek()
            if nxt is None or (c > 0 and nxt[1] != row_line):
                raise BvhParseError(f"frame {f} has {c} values, expected {width} (line {row_line})")
            rows[f, c] = tk.number(f"frame {f} value")
        nxt = tk.peek()
        if nxt is not None and nxt[1] == row_line:
            extra = sum(1 for t, l in tk.items[tk.at :] if l == row_line)
            raise BvhParseError(f"frame {f} has {width + extra} values, expected {width} (line {row_line})")
    if tk.peek() is not None:
        tok, ln = tk.peek()
        raise BvhParseError(f"trailing data after motion frames (line {ln})")
    return MotionClip(skeleton, frame_time, rows)


def write_bvh(clip: MotionClip) -> str:
    """Serialize a clip back to BVH text; floats keep full precision."""
    joints = clip.skeleton.joints
    children: list[list[int]] = [[] for _ in joints]
    for i, j in enumerate(joints):
        if j.parent >= 0:
            children[j.parent].append(i)

    out = io.StringIO()
    out.write("HIERARCHY\n")

    def fmt(x: float) -> str:
        return f"{x:.17g}"

    def emit(i: int, depth: int) -> None:
        j = joints[i]
        pad = "  " * depth
        if not j.channels and j.parent >= 0 and not children[i]:
            out.write(f"{pad}End Site\n{pad}{{\n")
            out.write(f"{pad}  OFFSET {fmt(j.offset[0])} {fmt(j.offset[1])} {fmt(j.offset[2])}\n")
            out.write(f"{pad}}}\n")
            return
        kind = "ROOT" if j.parent == -1 else "JOINT"
        out.write(f"{pad}{kind} {j.name}\n{pad}{{\n")
        out.write(f"{pad}  OFFSET {fmt(j.offset[0])} {fmt(j.offset[1])} {fmt(j.offset[2])}\n")
        out.write(f"{pad}  CHANNELS {len(j.channels)} {' '.join(j.channels)}\n")
        for c in children[i]:
            emit(c, depth + 1)
        out.write(f"{pad}}}\n")

    emit(0, 0)
    out.write("MOTION\n")
    out.write(f"Frames: {clip.frames}\n")
    out.write(f"Frame Time: {fmt(clip.frame_time)}\n")
    for f in range(clip.frames):
        out.write(" ".join(fmt(v) for v in clip.channels[f]) + "\n")
    return out.getvalue()


# ------------------------------------------------------- reduced upper body


def humanoid_skeleton() -> Skeleton:
    """Built-in six-joint upper body used by the network and synth clips."""
    j = [
        Joint("pelvis", -1, np.array([0.0, 95.0, 0.0]),
              ["Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation"]),
        Joint("spine", 0, np.array([0.0, 20.0, 0.0]), ["Zrotation", "Xrotation", "Yrotation"]),
        Joint("neck", 1, np.array([0.0, 22.0, 0.0]), ["Zrotation", "Xrotation", "Yrotation"]),
        Joint("head", 2, np.array([0.0, 10.0, 0.0]), ["Zrotation", "Xrotation", "Yrotation"]),
        Joint("l_shoulder", 1, np.array([14.0, 18.0, 0.0]), ["Zrotation", "Xrotation", "Yrotation"]),
        Joint("r_shoulder", 1, np.array([-14.0, 18.0, 0.0]), ["Zrotation", "Xrotation", "Yrotation"]),
    ]
    j.append(Joint("head_end", 3, np.array([0.0, 16.0, 0.0]), []))
    j.append(Joint("l_shoulder_end", 4, np.array([8.0, -3.0, 0.0]), []))
    j.append(Joint("r_shoulder_end", 5, np.array([-8.0, -3.0, 0.0]), []))
    return Skeleton(j)


_REDUCED_PARENT = {"pelvis": -1, "spine": 0, "neck": 1, "head": 2, "l_shoulder": 1, "r_shoulder": 1}

_FULL_JOINT_COUNT = len(humanoid_skeleton().joints)


@dataclass
class ReducedMotion:
    """Retargeted clip on the six-joint skeleton, quaternions precomputed."""

    frame_time: float
    root_translation: np.ndarray  # (F, 3)
    quats: np.ndarray  # (F, 6, 4) local rotations, sign-canonicalized

    @property
    def frames(self) -> int:
        return self.quats.shape[0]

    def pose_at(self, t: int) -> PoseFrame:
        """Pose on the full built-in skeleton; end sites get identity."""
        if not 0 <= t < self.frames:
            raise ConfigError(f"frame {t} out of range [0, {self.frames})")
        rots = np.broadcast_to(IDENTITY, (_FULL_JOINT_COUNT, 4)).copy()
        rots[: len(REDUCED_JOINTS)] = self.quats[t]
        return PoseFrame(self.root_translation[t], rots)


def _squash(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def reduce_clip(clip: MotionClip) -> ReducedMotion:
    """Map a clip onto the reduced skeleton by joint-name aliases.

    Unmatched reduced joints stay at identity; extra source joints are
    ignored. Root translation comes from the source root's position
    channels.
    """
    squashed = [_squash(j.name) for j in clip.skeleton.joints]
    picks: dict[str, int | None] = {}
    for target, aliases in _ALIASES.items():
        picks[target] = None
        for alias in aliases:
            if alias in squashed:
                picks[target] = squashed.index(alias)
                break

    F = clip.frames
    quats = np.broadcast_to(IDENTITY, (F, 6, 4)).copy()
    root_t = np.zeros((F, 3))
    for f in range(F):
        pose = clip.pose_at(f)
        root_t[f] = pose.root_translation
        for k, target in enumerate(REDUCED_JOINTS):
            src = picks[target]
            if src is not None:
                quats[f, k] = pose.rotations[src]
    return ReducedMotion(clip.frame_time, root_t, qcanon(quats))


def head_transforms(rm: ReducedMotion) -> tuple[np.ndarray, np.ndarray]:
    """World head-joint rotations (F,4) and positions (F,3) via FK."""
    skel = humanoid_skeleton()
    chain = [skel.index(n) for n in ["pelvis", "spine", "neck", "head"]]
    offs = np.stack([skel.joints[i].offset for i in chain])
    F = rm.frames
    rot = np.broadcast_to(IDENTITY, (F, 4)).copy()
    pos = np.zeros((F, 3))
    for step, joint in enumerate(["pelvis", "spine", "neck", "head"]):
        k = REDUCED_JOINTS.index(joint)
        if step == 0:
            pos = offs[0] + rm.root_translation
            rot = rm.quats[:, k]
        else:
            pos = pos + qrot(rot, offs[step])
            rot = qmul(rot, rm.quats[:, k])
    return rot, pos


def rest_head_transform() -> RigidTransform:
    skel = humanoid_skeleton()
    pose = PoseFrame(np.zeros(3), np.broadcast_to(IDENTITY, (len(skel.joints), 4)).copy())
    pos, rot = fk(skel, pose)
    hi = skel.index("head")
    return RigidTransform(rot[hi], pos[hi])


# ----------------------------------------------------------------- history


@dataclass
class HistoryWindow:
    """Network boundary conditions at one frame.

    velocities[i] is the angular velocity (rad/s, rotation-vector form)
    between frames t-i-1 and t-i, most recent first; indices clamp to
    frame 0, so early frames see zero-padded history.
    """

    pose: np.ndarray  # (6, 4) local quats at t
    velocities: np.ndarray  # (N, 6, 3)
    beta: np.ndarray  # (4,) body shape coefficients

    def flat(self) -> np.ndarray:
        return np.concatenate([self.pose.reshape(-1), self.velocities.reshape(-1)])


def joint_velocities(rm: ReducedMotion) -> np.ndarray:
    """Per-frame angular velocities (F,6,3); frame 0 is zero by clamping."""
    if rm.frames == 0:
        raise ConfigError("empty clip")
    prev = rm.quats[:-1]
    cur = rm.quats[1:]
    rel = qmul(prev * np.array([1.0, -1.0, -1.0, -1.0]), cur)
    vel = np.zeros((rm.frames, 6, 3))
    vel[1:] = qlog(rel) / rm.frame_time
    return vel


def history_window(rm: ReducedMotion, t: int, n_history: int, beta: np.ndarray) -> HistoryWindow:
    if not 0 <= t < rm.frames:
        raise ConfigError(f"frame {t} out of range [0, {rm.frames})")
    if n_history < 1:
        raise ConfigError("history length must be >= 1")
    beta = np.asarray(beta, dtype=float)
    vel = joint_velocities(rm)
    idx = np.maximum(t - np.arange(n_history), 0)
    return HistoryWindow(rm.quats[t].copy(), vel[idx], beta)


# ------------------------------------------------------------ synth clips


def synth_motion(kind: str, duration: float, fps: float, amplitude: float, seed: int) -> MotionClip:
    """Deterministic test clips on the built-in skeleton.

    kinds: sway (1 Hz head/spine yaw), head_bob (1.5 Hz nod), jump
    (vertical pelvis hops), walk (seeded composite sinusoids). Rotational
    amplitudes are radians; jump amplitude is centimeters. All channels
    are C1-continuous sinusoids.
    """
    if duration <= 0 or fps <= 0:
        raise ConfigError("duration and fps must be positive")
    skel = humanoid_skeleton()
    frames = int(round(duration * fps))
    width = sum(len(j.channels) for j in skel.joints)
    rows = np.zeros((frames, width))
    t = np.arange(frames) / fps

    # channel column helper: joint name + channel name -> column index
    cols: dict[tuple[str, str], int] = {}
    at = 0
    for j in skel.joints:
        for c in j.channels:
            cols[(j.name, c)] = at
            at += 1

    deg = np.degrees
    if kind == "sway":
        period = 1.0
        yaw = amplitude * np.sin(2.0 * np.pi * t / period)
        rows[:, cols[("head", "Yrotation")]] = deg(yaw)
        rows[:, cols[("spine", "Yrotation")]] = deg(0.4 * yaw)
        rows[:, cols[("spine", "Zrotation")]] = deg(0.25 * amplitude * np.sin(2.0 * np.pi * t / period))
    elif kind == "head_bob":
        f_bob = 1.5
        nod = amplitude * np.sin(2.0 * np.pi * f_bob * t)
        rows[:, cols[("neck", "Xrotation")]] = deg(0.5 * nod)
        rows[:, cols[("head", "Xrotation")]] = deg(nod)
    elif kind == "jump":
        period = 1.2
        rows[:, cols[("pelvis", "Yposition")]] = amplitude * np.sin(np.pi * t / period) ** 2
        rows[:, cols[("spine", "Xrotation")]] = deg(0.05 * np.sin(2.0 * np.pi * t / period))
    elif kind == "walk":
        rng = np.random.default_rng(seed)
        f_step = 1.4
        phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
        rows[:, cols[("pelvis", "Yposition")]] = 1.5 * np.sin(4.0 * np.pi * f_step * t + phases[0]) ** 2
        rows[:, cols[("pelvis", "Zrotation")]] = deg(0.3 * amplitude * np.sin(2.0 * np.pi * f_step * t + phases[1]))
        rows[:, cols[("spine", "Yrotation")]] = deg(0.5 * amplitude * np.sin(2.0 * np.pi * f_step * t + phases[2]))
        rows[:, cols[("head", "Yrotation")]] = deg(amplitude * np.sin(2.0 * np.pi * f_step * t + phases[3]))
        rows[:, cols[("l_shoulder", "Xrotation")]] = deg(amplitude * np.sin(2.0 * np.pi * f_step * t))
        rows[:, cols[("r_shoulder", "Xrotation")]] = deg(-amplitude * np.sin(2.0 * np.pi * f_step * t))
    else:
        raise ConfigError(f"unknown motion kind {kind!r} (want sway, head_bob, jump or walk)")
    return MotionClip(skel, 1.0 / fps, rows)
