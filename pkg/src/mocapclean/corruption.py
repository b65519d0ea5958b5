"""Synthetic corruption of clean motions: channel noise, spatial noise and gaps.

Every generator takes an explicit seed and is a pure function of its inputs,
so corrupted datasets can be regenerated byte-for-byte. The root translation
and root rotation channels are never touched; noise and gaps apply only to
the non-root rotation channels identified by a :class:`ChannelLayout`.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Optional, Union

import numpy as np

from mocapclean.bvh import MotionClip, Skeleton
from mocapclean.features import ChannelLayout, channel_stats
from mocapclean.kinematics import align_rotation, rotation_to_euler, world_transforms


@dataclasses.dataclass(frozen=True)
class AngularGaussianNoise:
    """Zero-mean Gaussian noise with std = level * per-channel std."""

    level: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


@dataclasses.dataclass(frozen=True)
class UniformNoise:
    """Uniform noise with variance matched to the Gaussian at the same level."""

    level: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


@dataclasses.dataclass(frozen=True)
class ConstantBiasNoise:
    """Gaussian noise plus a fixed per-channel offset (degrees).

    ``offset`` is either a scalar applied to every rotation channel or a
    per-channel array.
    """

    offset: Union[float, np.ndarray] = 2.0
    level: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


@dataclasses.dataclass(frozen=True)
class SineBiasNoise:
    """Gaussian noise plus a sinusoidal bias shared by every rotation channel.

    ``amplitude`` may be a scalar in degrees, or None to default to
    0.25 * channel std per channel.
    """

    amplitude: Optional[float] = None
    period: float = 120.0
    level: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")
        if self.period < 2:
            raise ValueError("sine period must be >= 2 frames")


@dataclasses.dataclass(frozen=True)
class SpatialGaussianNoise:
    """3D Gaussian noise on joint world positions, per-joint sigma in cm."""

    sigma_cm: float = 0.5
    per_joint: tuple[tuple[str, float], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.sigma_cm < 0 or any(s < 0 for _, s in self.per_joint):
            raise ValueError("sigma must be >= 0")

    def sigma_for(self, name: str) -> float:
        for joint_name, sigma in self.per_joint:
            if joint_name == name:
                return sigma
        return self.sigma_cm


ChannelNoise = Union[AngularGaussianNoise, UniformNoise, ConstantBiasNoise, SineBiasNoise]


@dataclasses.dataclass(frozen=True)
class GapSpec:
    """Per-channel gap model: one gap per channel with probability
    ``start_probability``; gap length is min_length + round(Exp(mean_length)),
    clipped to max_length and to the clip end."""

    start_probability: float = 0.1
    mean_length: float = 30.0
    min_length: int = 2
    max_length: int = 600
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.start_probability <= 1.0:
            raise ValueError("start_probability must be in [0, 1]")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("need 1 <= min_length <= max_length")
        if self.mean_length <= 0:
            raise ValueError("mean_length must be > 0")


def wrist_ankle_profile(
    skeleton: Skeleton,
    end_effector_cm: float = 0.5,
    rest_cm: float = 0.1,
    keywords: tuple[str, ...] = ("wrist", "ankle", "hand", "foot"),
) -> SpatialGaussianNoise:
    """Spatial noise profile with elevated sigma at wrist/ankle-like joints."""
    elevated = tuple(
        (j.name, end_effector_cm)
        for j in skeleton.joints
        if any(k in j.name.lower() for k in keywords)
    )
    return SpatialGaussianNoise(sigma_cm=rest_cm, per_joint=elevated)


# ---------------------------------------------------------------------------
# Channel-space noise
# ---------------------------------------------------------------------------


def apply_channel_noise(
    clip: MotionClip, layout: ChannelLayout, spec: ChannelNoise
) -> MotionClip:
    """Add noise to the non-root rotation channels of a clip.

    Noise amplitude is tied to each channel's own standard deviation, so the
    same level produces the same signal-to-noise ratio on every channel.
    """
    if clip.n_frames < 2:
        raise ValueError("need at least 2 frames to define channel stds")
    rng = np.random.default_rng(spec.seed)
    stds = channel_stats(clip)[layout.rotation]
    if spec.level > 0 and np.all(stds == 0):
        warnings.warn("all rotation channels are constant; noise level has no effect")

    t_count = clip.n_frames
    n = layout.n_rotations
    noise = np.zeros((t_count, n))
    if spec.level > 0:
        if isinstance(spec, UniformNoise):
            half_range = np.sqrt(3.0) * spec.level * stds
            noise = rng.uniform(-1.0, 1.0, size=(t_count, n)) * half_range
        else:
            noise = rng.standard_normal((t_count, n)) * (spec.level * stds)
    if isinstance(spec, ConstantBiasNoise):
        noise = noise + np.broadcast_to(np.asarray(spec.offset, dtype=np.float64), (n,))
    elif isinstance(spec, SineBiasNoise):
        amplitude = spec.amplitude if spec.amplitude is not None else 0.25 * stds
        phase = np.sin(2.0 * np.pi * np.arange(t_count) / spec.period)
        noise = noise + phase[:, None] * amplitude

    frames = clip.frames.copy()
    frames[:, layout.rotation] += noise
    return clip.with_frames(frames)


def apply_spatial_noise(
    clip: MotionClip, skeleton: Skeleton, spec: SpatialGaussianNoise
) -> MotionClip:
    """Perturb joint world positions and refit rotations, preserving bone lengths.

    Per frame: joint positions from forward kinematics get i.i.d. 3D Gaussian
    noise (per-joint sigma, root excluded), then rotations are re-fitted
    greedily root-to-leaf. Each joint's rotation is turned by the minimal-angle
    rotation that aligns its first child bone with the perturbed target
    direction, so recovered bone lengths match the skeleton's offsets exactly.
    """
    if clip.n_channels != skeleton.channel_count:
        raise ValueError("clip channel count does not match skeleton")
    rng = np.random.default_rng(spec.seed)
    joints = skeleton.joints
    n_joints = len(joints)
    children = [skeleton.children(i) for i in range(n_joints)]
    sigmas = np.array([spec.sigma_for(j.name) for j in joints])
    sigmas[0] = 0.0  # the root trajectory stays clean

    # Column ranges of each joint's channels.
    spans = []
    cursor = 0
    for joint in joints:
        spans.append((cursor, cursor + len(joint.channels)))
        cursor += len(joint.channels)

    rot_cols_by_joint = []
    rot_order_by_joint = []
    for j, (lo, _) in enumerate(spans):
        cols = [
            lo + k for k, ch in enumerate(joints[j].channels) if ch.endswith("rotation")
        ]
        rot_cols_by_joint.append(cols)
        rot_order_by_joint.append(
            tuple(ch for ch in joints[j].channels if ch.endswith("rotation"))
        )

    out = clip.frames.copy()
    for t in range(clip.n_frames):
        frame = clip.frames[t]
        clean_rot, clean_pos = world_transforms(skeleton, frame)
        targets = clean_pos + rng.standard_normal((n_joints, 3)) * sigmas[:, None]
        rec_rot = np.empty_like(clean_rot)
        rec_pos = np.empty_like(clean_pos)
        locals_out: list[tuple[int, np.ndarray]] = []
        for j in range(n_joints):
            if joints[j].parent is None:
                # Root channels stay clean: position by assumption, rotation
                # because the networks treat root angular velocity as clean.
                rec_pos[j] = clean_pos[j]
                rec_rot[j] = clean_rot[j]
                continue
            p = joints[j].parent
            rec_pos[j] = rec_pos[p] + rec_rot[p] @ joints[j].offset
            parent_rot = rec_rot[p]
            local_clean = clean_rot[p].T @ clean_rot[j]
            world = parent_rot @ local_clean
            fittable = len(rot_cols_by_joint[j]) == 3
            child = next(
                (c for c in children[j] if np.linalg.norm(joints[c].offset) > 1e-9),
                None,
            )
            if child is not None and fittable:
                bone_dir = world @ joints[child].offset
                target_dir = targets[child] - rec_pos[j]
                if np.linalg.norm(target_dir) > 1e-9:
                    world = align_rotation(bone_dir, target_dir) @ world
            rec_rot[j] = world
            if fittable:
                locals_out.append((j, parent_rot.T @ world))
        # Batch the matrix -> Euler conversions per distinct channel order.
        by_order: dict[tuple, list[tuple[int, np.ndarray]]] = {}
        for j, local in locals_out:
            by_order.setdefault(rot_order_by_joint[j], []).append((j, local))
        for order, entries in by_order.items():
            stacked = np.stack([local for _, local in entries])
            angles = rotation_to_euler(stacked, order)
            for (j, _), row in zip(entries, np.atleast_2d(angles)):
                out[t, rot_cols_by_joint[j]] = row
    return clip.with_frames(out)


# ---------------------------------------------------------------------------
# Gaps
# ---------------------------------------------------------------------------


def synth_gaps(n_frames: int, spec: GapSpec, n_channels: int = 126) -> np.ndarray:
    """Boolean (T, n_channels) mask; True marks missing samples.

    Each channel independently receives at most one gap, with probability
    ``spec.start_probability``; the start frame is uniform over the clip.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(spec.seed)
    mask = np.zeros((n_frames, n_channels), dtype=bool)
    for channel in range(n_channels):
        if rng.random() >= spec.start_probability:
            continue
        start = int(rng.integers(0, n_frames))
        length = spec.min_length + int(round(rng.exponential(spec.mean_length)))
        length = min(length, spec.max_length, n_frames - start)
        mask[start : start + length, channel] = True
    return mask


def lerp_fill(clip: MotionClip, mask: np.ndarray, layout: ChannelLayout) -> MotionClip:
    """Replace masked runs with linear interpolation between their endpoints.

    Runs touching the clip boundary are filled by holding the nearest
    unmasked value. Unmasked samples pass through unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (clip.n_frames, layout.n_rotations):
        raise ValueError(
            f"mask shape {mask.shape} does not match "
            f"({clip.n_frames}, {layout.n_rotations})"
        )
    frames = clip.frames.copy()
    t_idx = np.arange(clip.n_frames)
    for k, col in enumerate(layout.rotation):
        channel_mask = mask[:, k]
        if not channel_mask.any():
            continue
        if channel_mask.all():
            raise ValueError(f"rotation channel {k} is masked for the entire clip")
        known = ~channel_mask
        frames[channel_mask, col] = np.interp(
            t_idx[channel_mask], t_idx[known], clip.frames[known, col]
        )
    return clip.with_frames(frames)


def gap_mask_to_rle(mask: np.ndarray) -> str:
    """Serialize a gap mask as `channel start length` rows with a size header."""
    mask = np.asarray(mask, dtype=bool)
    lines = [f"frames {mask.shape[0]} channels {mask.shape[1]}"]
    for channel in range(mask.shape[1]):
        column = mask[:, channel]
        edges = np.flatnonzero(np.diff(np.concatenate([[False], column, [False]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            lines.append(f"{channel} {start} {stop - start}")
    return "\n".join(lines) + "\n"


def gap_mask_from_rle(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty gap mask file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "frames" or header[2] != "channels":
        raise ValueError("gap mask header must be 'frames <T> channels <C>'")
    n_frames, n_channels = int(header[1]), int(header[3])
    mask = np.zeros((n_frames, n_channels), dtype=bool)
    for ln in lines[1:]:
        channel, start, length = (int(v) for v in ln.split())
        mask[start : start + length, channel] = True
    return mask


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


def measure_snr(
    clean: np.ndarray, noisy: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-channel and aggregate SNR in dB between matching (T, C) matrices.

    SNR per channel is 10*log10(Var(clean) / MeanSq(noisy - clean)); channels
    with zero noise power report +inf. The aggregate averages channels with
    nonzero clean variance, so pass only the channels that actually carry
    noise when a finite aggregate is wanted.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ValueError("clean and noisy must have the same shape")
    signal_var = clean.var(axis=0)
    noise_power = np.mean((noisy - clean) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_channel = 10.0 * np.log10(signal_var / noise_power)
    per_channel = np.where(noise_power == 0.0, np.inf, per_channel)
    per_channel = np.where((signal_var == 0.0) & (noise_power > 0.0), -np.inf, per_channel)
    active = signal_var > 0.0
    aggregate = float(np.mean(per_channel[active])) if active.any() else np.inf
    return per_channel, aggregate
