"""Forward kinematics over the BVH joint hierarchy.

Conventions: column vectors, active right-handed rotations, degrees in /
degrees out. Each joint's local transform is its offset translation followed
by its rotation channels composed left-to-right in declared file order, so
``R_local = R(ch1) @ R(ch2) @ R(ch3)``.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from mocapclean.bvh import POSITION_CHANNELS, Skeleton


def rotation_matrix(axis: str, degrees: float) -> np.ndarray:
    """3x3 active rotation about 'X', 'Y' or 'Z' by the given angle in degrees."""
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    if axis == "X":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "Y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "Z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown rotation axis {axis!r}")


def local_rotation(channels: tuple[str, ...], values: np.ndarray) -> np.ndarray:
    """Compose a joint's rotation channels (file order, left-to-right)."""
    rot = np.eye(3)
    for ch, value in zip(channels, values):
        if ch.endswith("rotation"):
            rot = rot @ rotation_matrix(ch[0], value)
    return rot


def world_transforms(
    skeleton: Skeleton, frame: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint world rotations (J,3,3) and positions (J,3) for one frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (skeleton.channel_count,):
        raise ValueError(
            f"frame has width {frame.shape}, expected ({skeleton.channel_count},)"
        )
    n = len(skeleton.joints)
    rotations = np.empty((n, 3, 3))
    positions = np.empty((n, 3))
    cursor = 0
    for i, joint in enumerate(skeleton.joints):
        values = frame[cursor : cursor + len(joint.channels)]
        cursor += len(joint.channels)
        translation = joint.offset.copy()
        for ch, value in zip(joint.channels, values):
            if ch in POSITION_CHANNELS:
                translation["XYZ".index(ch[0])] += value
        local_rot = local_rotation(joint.channels, values)
        if joint.parent is None:
            positions[i] = translation
            rotations[i] = local_rot
        else:
            p = joint.parent
            positions[i] = positions[p] + rotations[p] @ translation
            rotations[i] = rotations[p] @ local_rot
    return rotations, positions


def forward_kinematics(skeleton: Skeleton, frame: np.ndarray) -> np.ndarray:
    """World positions (J,3) in cm of every joint for one channel row."""
    return world_transforms(skeleton, frame)[1]


def rotation_to_euler(rot: np.ndarray, channels: tuple[str, ...]) -> np.ndarray:
    """Euler angles (degrees) for ``rot`` in the joint's declared channel order.

    Inverse of :func:`local_rotation` for the three-distinct-axes orders used
    by BVH files.
    """
    axes = "".join(ch[0] for ch in channels if ch.endswith("rotation"))
    if len(axes) != 3 or len(set(axes)) != 3:
        raise ValueError(f"need three distinct rotation axes, got {axes!r}")
    # Uppercase sequence = intrinsic composition, matching left-to-right
    # channel order under the active column-vector convention.
    return Rotation.from_matrix(rot).as_euler(axes, degrees=True)


def align_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal-angle rotation matrix taking unit-ish vector ``source`` to ``target``."""
    u = source / np.linalg.norm(source)
    v = target / np.linalg.norm(target)
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(u @ v)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # Opposite vectors: rotate 180 degrees about any perpendicular axis.
        helper = np.array([1.0, 0.0, 0.0])
        if abs(u[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        perp = np.cross(u, helper)
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    k = axis / s
    kx = np.array(
        [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]]
    )
    angle = np.arctan2(s, c)
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
