"""Network input representation: joint rotations plus root angular velocity.

The networks consume, per frame, the non-root rotation channels (126 for the
default skeleton) followed by the per-axis angular velocity of the root
rotation channels, in degrees per frame. Velocities replace the absolute root
angles so the representation is invariant to heading.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from mocapclean.bvh import MotionClip, ROTATION_CHANNELS, Skeleton


@dataclasses.dataclass(frozen=True)
class ChannelLayout:
    """Index map from clip columns to the network's feature blocks."""

    rotation: np.ndarray        # non-root rotation channel indices, file order
    root_rotation: np.ndarray   # the root's 3 rotation channel indices
    root_position: np.ndarray   # the root's position channel indices

    def __post_init__(self):
        for field in ("rotation", "root_rotation", "root_position"):
            arr = np.asarray(getattr(self, field), dtype=np.intp)
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        if self.root_rotation.size != 3:
            raise ValueError("root must expose exactly 3 rotation channels")

    @property
    def n_rotations(self) -> int:
        return int(self.rotation.size)

    @property
    def feature_width(self) -> int:
        return self.n_rotations + 3

    @staticmethod
    def from_skeleton(skeleton: Skeleton) -> "ChannelLayout":
        rotation, root_rotation, root_position = [], [], []
        for col, (joint, kind) in enumerate(skeleton.iter_channels()):
            if joint == 0:
                (root_rotation if kind in ROTATION_CHANNELS else root_position).append(col)
            else:
                rotation.append(col)
        return ChannelLayout(
            np.array(rotation), np.array(root_rotation), np.array(root_position)
        )


def wrap_degrees(delta: np.ndarray) -> np.ndarray:
    """Shortest signed angle difference, mapped into (-180, 180]."""
    return 180.0 - np.mod(180.0 - np.asarray(delta, dtype=np.float64), 360.0)


def compute_input_features(clip: MotionClip, layout: ChannelLayout) -> np.ndarray:
    """Per-frame feature rows: [rotations (deg), root angular velocity (deg/frame)].

    Velocity is the wrapped difference of consecutive root rotation angles;
    frame 0 gets exactly zero velocity. Output shape is (T, n_rotations + 3).
    """
    rot = clip.frames[:, layout.rotation]
    root = clip.frames[:, layout.root_rotation]
    velocity = np.zeros_like(root)
    if clip.n_frames > 1:
        velocity[1:] = wrap_degrees(root[1:] - root[:-1])
    features = np.concatenate([rot, velocity], axis=1)
    if not np.all(np.isfinite(features)):
        raise ValueError("input features contain non-finite values")
    return features


def channel_stats(clip: MotionClip) -> np.ndarray:
    """Population standard deviation of every channel over all frames."""
    if clip.n_frames < 2:
        raise ValueError("channel statistics need at least 2 frames")
    return clip.frames.std(axis=0)
