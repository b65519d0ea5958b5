"""BVH (Biovision Hierarchy) reading and writing, plus the core motion containers.

The format is plain text: a HIERARCHY section describing the joint tree and a
MOTION section with one whitespace-separated row of channel values per frame.
Position channels are kept in centimetres and rotation channels in degrees,
exactly as stored in the file.
"""

from __future__ import annotations

import dataclasses
from typing import Iterator, Optional

import numpy as np

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
_VALID_CHANNELS = POSITION_CHANNELS + ROTATION_CHANNELS


class BvhError(ValueError):
    """Malformed BVH input. Carries the 1-based line number of the offence."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclasses.dataclass(frozen=True)
class Joint:
    """One node of the skeleton hierarchy.

    ``offset`` is the translation from the parent joint (cm). ``channels``
    lists the animated degrees of freedom in file order. ``end_site`` is the
    optional terminal offset of a leaf bone.
    """

    name: str
    parent: Optional[int]
    offset: np.ndarray
    channels: tuple[str, ...]
    end_site: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "offset", _frozen_vec3(self.offset))
        if self.end_site is not None:
            object.__setattr__(self, "end_site", _frozen_vec3(self.end_site))
        for ch in self.channels:
            if ch not in _VALID_CHANNELS:
                raise ValueError(f"unknown channel kind {ch!r} on joint {self.name!r}")


def _frozen_vec3(v) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(3)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy in topological order (every parent precedes its children)."""

    joints: tuple[Joint, ...]

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        roots = [i for i, j in enumerate(self.joints) if j.parent is None]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("skeleton must have exactly one root joint at index 0")
        for i, joint in enumerate(self.joints):
            if joint.parent is not None:
                if not 0 <= joint.parent < i:
                    raise ValueError(
                        f"joint {joint.name!r} has parent index {joint.parent}, "
                        "which does not precede it"
                    )
                if any(ch in POSITION_CHANNELS for ch in joint.channels):
                    raise ValueError(
                        f"non-root joint {joint.name!r} has position channels"
                    )
        if self.rotation_channel_count < 3:
            raise ValueError("skeleton has fewer than 3 rotation channels")

    @property
    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    @property
    def rotation_channel_count(self) -> int:
        return sum(
            1 for j in self.joints for ch in j.channels if ch in ROTATION_CHANNELS
        )

    def iter_channels(self) -> Iterator[tuple[int, str]]:
        """Yield (joint index, channel kind) in file/channel order."""
        for i, joint in enumerate(self.joints):
            for ch in joint.channels:
                yield i, ch

    def children(self, index: int) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.parent == index]


@dataclasses.dataclass(frozen=True)
class MotionClip:
    """Frame-rate-stamped matrix of channel values (T frames x C channels).

    Values are cm for position channels and degrees for rotation channels.
    Instances are immutable; derived clips are produced with ``with_frames``.
    """

    frame_time: float
    frames: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, ndmin=2)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a T x C matrix with T >= 1")
        if not np.all(np.isfinite(frames)):
            raise ValueError("motion data contains non-finite values")
        if not self.frame_time > 0:
            raise ValueError("frame_time must be positive")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time

    def with_frames(self, frames: np.ndarray) -> "MotionClip":
        return MotionClip(self.frame_time, frames)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Tokens:
    """Whitespace token stream over the hierarchy section, tracking line numbers."""

    def __init__(self, lines: list[str]):
        self._stream = [
            (tok, ln + 1)
            for ln, text in enumerate(lines)
            for tok in text.split()
        ]
        self._pos = 0
        self.last_line = 1

    def peek(self) -> Optional[str]:
        if self._pos >= len(self._stream):
            return None
        return self._stream[self._pos][0]

    def next(self, expect: Optional[str] = None) -> str:
        if self._pos >= len(self._stream):
            raise BvhError("unexpected end of file", self.last_line)
        tok, line = self._stream[self._pos]
        self._pos += 1
        self.last_line = line
        if expect is not None and tok != expect:
            raise BvhError(f"expected {expect!r}, found {tok!r}", line)
        return tok

    def next_floats(self, n: int) -> list[float]:
        vals = []
        for _ in range(n):
            tok = self.next()
            try:
                vals.append(float(tok))
            except ValueError:
                raise BvhError(f"expected a number, found {tok!r}", self.last_line)
        return vals


def parse_bvh(text: str) -> tuple[Skeleton, MotionClip]:
    """Parse a complete BVH document into a skeleton and its motion.

    Channel layout follows file order, rotation values stay in degrees.
    Raises :class:`BvhError` with a line number for malformed input.
    """
    lines = text.splitlines()
    motion_line = None
    for ln, raw in enumerate(lines):
        if raw.strip() == "MOTION":
            motion_line = ln
            break
    if motion_line is None:
        raise BvhError("missing MOTION header", len(lines) or 1)

    tokens = _Tokens(lines[:motion_line])
    tokens.next(expect="HIERARCHY")
    joints: list[Joint] = []
    _parse_joint(tokens, joints, parent=None, root=True)
    if tokens.peek() is not None:
        raise BvhError(
            f"unexpected token {tokens.peek()!r} after hierarchy", tokens.last_line
        )
    skeleton = Skeleton(tuple(joints))

    frame_time, frames = _parse_motion(lines, motion_line, skeleton.channel_count)
    return skeleton, MotionClip(frame_time, frames)


def _parse_joint(tokens: _Tokens, joints: list[Joint], parent, root: bool) -> None:
    kw = tokens.next()
    expected = "ROOT" if root else "JOINT"
    if kw != expected:
        raise BvhError(f"expected {expected}, found {kw!r}", tokens.last_line)
    name = tokens.next()
    tokens.next(expect="{")
    open_line = tokens.last_line
    tokens.next(expect="OFFSET")
    offset = tokens.next_floats(3)
    tokens.next(expect="CHANNELS")
    count_tok = tokens.next()
    try:
        n_channels = int(count_tok)
    except ValueError:
        raise BvhError(f"invalid channel count {count_tok!r}", tokens.last_line)
    channels = tuple(tokens.next() for _ in range(n_channels))
    for ch in channels:
        if ch not in _VALID_CHANNELS:
            raise BvhError(f"unknown channel kind {ch!r}", tokens.last_line)

    index = len(joints)
    joints.append(Joint(name, parent, np.array(offset), channels))

    end_site = None
    while True:
        tok = tokens.peek()
        if tok is None:
            raise BvhError(f"unbalanced braces: block opened here never closed", open_line)
        if tok == "}":
            tokens.next()
            break
        if tok == "JOINT":
            _parse_joint(tokens, joints, parent=index, root=False)
        elif tok == "End":
            tokens.next()
            tokens.next(expect="Site")
            tokens.next(expect="{")
            tokens.next(expect="OFFSET")
            end_site = tokens.next_floats(3)
            tokens.next(expect="}")
        else:
            raise BvhError(f"unexpected token {tok!r} in joint block", tokens.last_line)

    if end_site is not None:
        joints[index] = dataclasses.replace(
            joints[index], end_site=np.array(end_site)
        )


def _parse_motion(lines, motion_line, channel_count):
    ln = motion_line + 1

    def next_content_line():
        nonlocal ln
        while ln < len(lines):
            stripped = lines[ln].strip()
            ln += 1
            if stripped:
                return stripped, ln
        raise BvhError("unexpected end of MOTION section", len(lines))

    header, at = next_content_line()
    parts = header.split()
    if len(parts) != 2 or parts[0] != "Frames:":
        raise BvhError("expected 'Frames: <count>'", at)
    try:
        n_frames = int(parts[1])
    except ValueError:
        raise BvhError(f"invalid frame count {parts[1]!r}", at)
    if n_frames < 1:
        raise BvhError("frame count must be >= 1", at)

    header, at = next_content_line()
    parts = header.split()
    if len(parts) != 3 or parts[0] != "Frame" or parts[1] != "Time:":
        raise BvhError("expected 'Frame Time: <seconds>'", at)
    try:
        frame_time = float(parts[2])
    except ValueError:
        raise BvhError(f"invalid frame time {parts[2]!r}", at)

    frames = np.empty((n_frames, channel_count), dtype=np.float64)
    for row in range(n_frames):
        content, at = next_content_line()
        values = content.split()
        if len(values) != channel_count:
            raise BvhError(
                f"frame {row} has {len(values)} values, "
                f"skeleton declares {channel_count} channels",
                at,
            )
        try:
            frames[row] = [float(v) for v in values]
        except ValueError:
            bad = next(v for v in values if not _is_number(v))
            raise BvhError(f"non-numeric motion value {bad!r}", at)
    return frame_time, frames


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def write_bvh(skeleton: Skeleton, clip: MotionClip) -> str:
    """Serialize a skeleton and clip back to BVH text.

    Emits tab-indented hierarchy and 6-decimal fixed-point values, so a
    parse/write round trip reproduces the skeleton exactly and motion values
    to well under 1e-4 degrees. The file's channel order is the depth-first
    order of the tree; for skeletons whose joint list is already in that
    order (every parsed file is) the columns are written unchanged, otherwise
    they are permuted to match the emitted hierarchy.
    """
    if clip.n_channels != skeleton.channel_count:
        raise ValueError(
            f"clip has {clip.n_channels} channels, "
            f"skeleton declares {skeleton.channel_count}"
        )
    out: list[str] = ["HIERARCHY"]
    children = [skeleton.children(i) for i in range(len(skeleton.joints))]

    dfs: list[int] = []
    stack = [0]
    while stack:
        index = stack.pop()
        dfs.append(index)
        stack.extend(reversed(children[index]))
    spans = []
    cursor = 0
    for joint in skeleton.joints:
        spans.append(range(cursor, cursor + len(joint.channels)))
        cursor += len(joint.channels)
    column_order = [col for j in dfs for col in spans[j]]
    frames = clip.frames
    if column_order != list(range(clip.n_channels)):
        frames = frames[:, column_order]

    def emit(index: int, depth: int) -> None:
        joint = skeleton.joints[index]
        pad = "\t" * depth
        kw = "ROOT" if joint.parent is None else "JOINT"
        out.append(f"{pad}{kw} {joint.name}")
        out.append(pad + "{")
        inner = "\t" * (depth + 1)
        out.append(inner + "OFFSET " + _fmt_vec(joint.offset))
        out.append(
            inner + f"CHANNELS {len(joint.channels)} " + " ".join(joint.channels)
        )
        for child in children[index]:
            emit(child, depth + 1)
        if joint.end_site is not None:
            out.append(inner + "End Site")
            out.append(inner + "{")
            out.append("\t" * (depth + 2) + "OFFSET " + _fmt_vec(joint.end_site))
            out.append(inner + "}")
        out.append(pad + "}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.n_frames}")
    out.append(f"Frame Time: {clip.frame_time:.6f}")
    for row in frames:
        out.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(out) + "\n"


def _fmt_vec(v: np.ndarray) -> str:
    return " ".join(f"{x:.6f}" for x in v)
