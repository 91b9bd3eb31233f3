"""BVH reading/writing, pose <-> feature-row conversion and forward kinematics.

Quaternions are (w, x, y, z). Euler channels are in degrees and compose in
the order they are declared: ``ZYX`` means ``R = Rz @ Ry @ Rx``.

Root placement: when the root carries position channels its global position
is the channel value and its OFFSET is ignored; otherwise the OFFSET is used.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .motion import MotionSequence

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
QUAT_TOL = 1e-6


class BvhError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple
    channels: tuple = ()

    @property
    def rotation_order(self) -> str:
        return "".join(c[0] for c in self.channels if c in ROTATION_CHANNELS)


@dataclass(frozen=True)
class Skeleton:
    joints: tuple
    end_sites: tuple = ()  # (parent index, offset) kept for round-tripping
    root: int = 0

    def __post_init__(self):
        for i, j in enumerate(self.joints):
            if i == self.root:
                if j.parent is not None:
                    raise ValueError("root joint must not have a parent")
            elif j.parent is None or not 0 <= j.parent < i:
                raise ValueError(f"joint {j.name!r} must follow its parent")
            if not np.all(np.isfinite(j.offset)):
                raise ValueError(f"joint {j.name!r} has a non-finite offset")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def parents(self) -> list:
        return [j.parent for j in self.joints]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @property
    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    def offset_table(self) -> list:
        """(column, joint index, channel name) for every feature column."""
        table, col = [], 0
        for ji, j in enumerate(self.joints):
            for ch in j.channels:
                table.append((col, ji, ch))
                col += 1
        return table


# ------------------------------------------------------------------ parsing

_TOKEN = re.compile(r"\S+")


def _tokens(lines):
    for lineno, line in enumerate(lines, 1):
        for tok in _TOKEN.findall(line):
            yield tok, lineno


class _Stream:
    def __init__(self, lines):
        self.items = list(_tokens(lines))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, None)

    def next(self, what="token"):
        if self.pos >= len(self.items):
            last = self.items[-1][1] if self.items else 1
            raise BvhError(f"unexpected end of file, expected {what}", last)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def expect(self, word):
        tok, line = self.next(word)
        if tok != word:
            raise BvhError(f"expected {word!r}, found {tok!r}", line)
        return line

    def number(self, kind=float):
        tok, line = self.next("number")
        try:
            return kind(tok)
        except ValueError:
            raise BvhError(f"expected a number, found {tok!r}", line) from None


def parse_bvh(text) -> tuple[Skeleton, MotionSequence]:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    lines = text.splitlines()
    motion_line = next((i for i, l in enumerate(lines) if l.strip().startswith("MOTION")), None)
    if motion_line is None:
        raise BvhError("missing MOTION block", len(lines))

    s = _Stream(lines[:motion_line])
    s.expect("HIERARCHY")
    joints, end_sites = [], []

    def joint_body(name, parent, line):
        s.expect("{")
        s.expect("OFFSET")
        offset = (s.number(), s.number(), s.number())
        channels = ()
        if s.peek()[0] == "CHANNELS":
            s.next()
            n = s.number(int)
            channels = tuple(s.next("channel name")[0] for _ in range(n))
            for ch in channels:
                if ch not in POSITION_CHANNELS + ROTATION_CHANNELS:
                    raise BvhError(f"unknown channel {ch!r}", line)
        index = len(joints)
        joints.append(Joint(name, parent, offset, channels))
        while True:
            tok, tline = s.next("JOINT, End Site or '}'")
            if tok == "}":
                return
            if tok == "JOINT":
                child, cline = s.next("joint name")
                joint_body(child, index, cline)
            elif tok == "End":
                s.expect("Site")
                s.expect("{")
                s.expect("OFFSET")
                end_sites.append((index, (s.number(), s.number(), s.number())))
                s.expect("}")
            else:
                raise BvhError(f"unexpected token {tok!r}", tline)

    root_line = s.expect("ROOT")
    name, _ = s.next("root name")
    joint_body(name, None, root_line)
    if s.peek()[0] is not None:
        tok, line = s.peek()
        raise BvhError(f"unexpected token {tok!r} after hierarchy", line)

    skeleton = Skeleton(tuple(joints), tuple(end_sites))

    # MOTION header: "Frames: N" then "Frame Time: dt"
    m = _Stream(lines[motion_line:motion_line + 3])
    m.expect("MOTION")
    m.expect("Frames:")
    n_frames = m.number(int)
    m.expect("Frame")
    m.expect("Time:")
    frame_time = m.number()
    if frame_time <= 0:
        raise BvhError("frame time must be positive", motion_line + 3)

    width = skeleton.channel_count
    rows = []
    for lineno in range(motion_line + 3, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != width:
            raise BvhError(f"motion row has {len(parts)} values, hierarchy declares {width} channels",
                           lineno + 1)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise BvhError("non-numeric motion value", lineno + 1) from None
    if len(rows) != n_frames:
        raise BvhError(f"header declares {n_frames} frames, found {len(rows)}", len(lines))
    frames = np.array(rows, dtype=np.float64).reshape(n_frames, width)
    return skeleton, MotionSequence(frames, 1.0 / frame_time, "joints")


def _fmt(x) -> str:
    return repr(float(x))


def serialize_bvh(skeleton: Skeleton, seq: MotionSequence) -> str:
    if seq.dim != skeleton.channel_count:
        raise LayoutError(f"sequence has {seq.dim} columns, skeleton {skeleton.channel_count} channels")
    children = {i: [] for i in range(skeleton.n_joints)}
    for i, j in enumerate(skeleton.joints):
        if j.parent is not None:
            children[j.parent].append(i)
    sites = {}
    for parent, offset in skeleton.end_sites:
        sites.setdefault(parent, []).append(offset)

    out = ["HIERARCHY"]

    def emit(i, depth):
        j = skeleton.joints[i]
        pad = "\t" * depth
        out.append(f"{pad}{'ROOT' if j.parent is None else 'JOINT'} {j.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}\tOFFSET " + " ".join(_fmt(v) for v in j.offset))
        if j.channels:
            out.append(f"{pad}\tCHANNELS {len(j.channels)} " + " ".join(j.channels))
        for c in children[i]:
            emit(c, depth + 1)
        for offset in sites.get(i, []):
            out.append(f"{pad}\tEnd Site")
            out.append(f"{pad}\t{{")
            out.append(f"{pad}\t\tOFFSET " + " ".join(_fmt(v) for v in offset))
            out.append(f"{pad}\t}}")
        out.append(f"{pad}}}")

    emit(skeleton.root, 0)
    out.append("MOTION")
    out.append(f"Frames: {seq.length}")
    out.append(f"Frame Time: {_fmt(1.0 / seq.fps)}")
    for row in seq.frames:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


# ------------------------------------------------------------- quaternions

def qmul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def qrot(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


_AXES = {"X": 0, "Y": 1, "Z": 2}


def euler_to_quat(angles_deg, order: str):
    """Compose per-axis rotations in ``order`` (intrinsic, BVH convention)."""
    angles = np.radians(np.asarray(angles_deg, dtype=np.float64))
    q = np.zeros(angles.shape[:-1] + (4,))
    q[..., 0] = 1.0
    for k, axis in enumerate(order):
        half = angles[..., k] / 2
        e = np.zeros_like(q)
        e[..., 0] = np.cos(half)
        e[..., 1 + _AXES[axis]] = np.sin(half)
        q = qmul(q, e)
    return q


def hemisphere(q):
    """Flip sign so the scalar part is nonnegative."""
    return np.where(q[..., :1] < 0, -q, q)


# ------------------------------------------------------------------- poses

@dataclass
class Pose:
    """Per-frame local pose. ``rotations`` are Euler degrees, one row per joint,
    ordered as each joint declares its rotation channels."""
    root_translation: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray = field(default=None)  # local positions for joints with position channels


def features_to_frame(skeleton: Skeleton, row) -> Pose:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (skeleton.channel_count,):
        raise LayoutError(f"feature row has shape {row.shape}, skeleton needs {skeleton.channel_count}")
    J = skeleton.n_joints
    rot = np.zeros((J, 3))
    trans = skeleton.offsets.copy()
    for col, ji, ch in skeleton.offset_table():
        j = skeleton.joints[ji]
        if ch in ROTATION_CHANNELS:
            rot[ji, j.rotation_order.index(ch[0])] = row[col]
        else:
            trans[ji, POSITION_CHANNELS.index(ch)] = row[col]
    return Pose(trans[skeleton.root].copy(), rot, trans)


def frame_to_features(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    row = np.zeros(skeleton.channel_count)
    trans = pose.translations
    if trans is None:
        trans = skeleton.offsets
        trans[skeleton.root] = pose.root_translation
    for col, ji, ch in skeleton.offset_table():
        j = skeleton.joints[ji]
        if ch in ROTATION_CHANNELS:
            row[col] = pose.rotations[ji, j.rotation_order.index(ch[0])]
        else:
            row[col] = trans[ji, POSITION_CHANNELS.index(ch)]
    return row


def _rows_to_local(skeleton: Skeleton, rows: np.ndarray):
    """Vectorized features -> (local quaternions (T,J,4), local translations (T,J,3))."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != skeleton.channel_count:
        raise LayoutError(f"rows have {rows.shape[1]} columns, skeleton needs {skeleton.channel_count}")
    T, J = rows.shape[0], skeleton.n_joints
    trans = np.broadcast_to(skeleton.offsets, (T, J, 3)).copy()
    quats = np.zeros((T, J, 4))
    quats[..., 0] = 1.0
    col = 0
    for ji, j in enumerate(skeleton.joints):
        angles, order = [], ""
        for ch in j.channels:
            if ch in ROTATION_CHANNELS:
                angles.append(rows[:, col])
                order += ch[0]
            else:
                trans[:, ji, POSITION_CHANNELS.index(ch)] = rows[:, col]
            col += 1
        if order:
            quats[:, ji] = euler_to_quat(np.stack(angles, axis=-1), order)
    return quats, trans


def forward_kinematics(skeleton: Skeleton, rotations, root_translation, translations=None):
    """Global joint positions (..., J, 3) and unit quaternions (..., J, 4).

    ``rotations`` is (..., J, 3) Euler degrees in each joint's declared order
    or (..., J, 4) unit quaternions. ``translations`` optionally overrides the
    local offsets of non-root joints.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    J = skeleton.n_joints
    if rotations.shape[-2] != J:
        raise LayoutError(f"expected rotations for {J} joints, got shape {rotations.shape}")
    if rotations.shape[-1] == 4:
        norms = np.linalg.norm(rotations, axis=-1)
        if np.any(np.abs(norms - 1) > QUAT_TOL):
            raise ValueError("non-unit quaternion in forward kinematics input")
        local_q = rotations / norms[..., None]
    elif rotations.shape[-1] == 3:
        local_q = np.empty(rotations.shape[:-1] + (4,))
        for ji, j in enumerate(skeleton.joints):
            order = j.rotation_order or "ZYX"
            local_q[..., ji, :] = euler_to_quat(rotations[..., ji, :], order)
    else:
        raise LayoutError(f"rotations must end in 3 (Euler) or 4 (quaternion), got {rotations.shape}")
    lead = local_q.shape[:-2]
    if translations is None:
        translations = np.broadcast_to(skeleton.offsets, lead + (J, 3))
    translations = np.asarray(translations, dtype=np.float64)
    root_translation = np.broadcast_to(np.asarray(root_translation, dtype=np.float64), lead + (3,))

    gpos = np.empty(lead + (J, 3))
    gq = np.empty(lead + (J, 4))
    for ji, j in enumerate(skeleton.joints):
        if j.parent is None:
            gpos[..., ji, :] = root_translation
            gq[..., ji, :] = local_q[..., ji, :]
        else:
            pq = gq[..., j.parent, :]
            gpos[..., ji, :] = gpos[..., j.parent, :] + qrot(pq, translations[..., ji, :])
            gq[..., ji, :] = qmul(pq, local_q[..., ji, :])
    gq /= np.linalg.norm(gq, axis=-1, keepdims=True)
    return gpos, hemisphere(gq)


def fk_rows(skeleton: Skeleton, rows):
    """Forward kinematics for feature rows (T, channels) in BVH column layout."""
    quats, trans = _rows_to_local(skeleton, rows)
    root = skeleton.root
    if not any(ch in POSITION_CHANNELS for ch in skeleton.joints[root].channels):
        trans[:, root] = skeleton.offsets[root]
    return forward_kinematics(skeleton, quats, trans[:, root], trans)
