"""Bundled synthetic motion family for desk-scale benchmarks and CI.

A fixed 43-joint skeleton (126 non-root rotation channels, CMU-like channel
ordering) animated by procedural multi-sine trajectories. All 126 channels of
a clip share one global phase, so joints are strongly correlated; channels
differ in speed class (harmonic mix), which is what makes per-channel
adaptive smoothing pay off. Five pseudo-action types vary base frequency,
amplitude and transient events. Every clip is a pure function of
(label, seed), so datasets regenerate deterministically.
"""

from __future__ import annotations

import dataclasses
import zlib

import numpy as np

from mocapclean.bvh import Joint, MotionClip, Skeleton

ACTIONS = ("walk", "jog", "run", "jump", "kick")

# label -> (base frequency Hz, amplitude scale deg, forward speed cm/s,
#           bounce cm, event amplitude deg)
_ACTION_PARAMS = {
    "walk": (1.0, 10.0, 120.0, 1.5, 0.0),
    "jog": (1.8, 13.0, 200.0, 2.5, 0.0),
    "run": (2.6, 16.0, 320.0, 3.5, 0.0),
    "jump": (0.9, 12.0, 60.0, 5.0, 22.0),
    "kick": (0.7, 11.0, 40.0, 1.0, 16.0),
}

_ROOT_CHANNELS = (
    "Xposition",
    "Yposition",
    "Zposition",
    "Zrotation",
    "Xrotation",
    "Yrotation",
)
_JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


def desk_skeleton() -> Skeleton:
    """The bundled 43-joint skeleton: 1 root + 42 rotating joints."""
    joints: list[Joint] = []
    index: dict[str, int] = {}

    def add(name, parent_name, offset, end_site=None):
        parent = index[parent_name] if parent_name is not None else None
        channels = _ROOT_CHANNELS if parent is None else _JOINT_CHANNELS
        index[name] = len(joints)
        joints.append(
            Joint(
                name,
                parent,
                np.asarray(offset, dtype=np.float64),
                channels,
                None if end_site is None else np.asarray(end_site, dtype=np.float64),
            )
        )

    add("Hips", None, (0, 0, 0))
    spine = [
        ("Spine1", (0, 7, 0)),
        ("Spine2", (0, 7, 0)),
        ("Spine3", (0, 7, 0)),
        ("Spine4", (0, 7, 0)),
        ("Chest", (0, 8, 0)),
        ("LowerNeck", (0, 6, 0)),
        ("Neck", (0, 5, 0)),
    ]
    previous = "Hips"
    for name, offset in spine:
        add(name, previous, offset)
        previous = name
    add("Head", "Neck", (0, 6, 0), end_site=(0, 9, 0))

    # Joints are created in depth-first pre-order (each subtree contiguous),
    # matching the channel order of the file the skeleton serializes to.
    for side, sign in (("Left", 1.0), ("Right", -1.0)):
        arm = [
            ("Clavicle", "Chest", (sign * 3, 5, 0)),
            ("Shoulder", f"{side}Clavicle", (sign * 14, 0, 0)),
            ("Elbow", f"{side}Shoulder", (sign * 28, 0, 0)),
            ("Forearm", f"{side}Elbow", (sign * 14, 0, 0)),
            ("Wrist", f"{side}Forearm", (sign * 13, 0, 0)),
            ("Hand", f"{side}Wrist", (sign * 6, 0, 0)),
        ]
        for name, parent, offset in arm:
            add(side + name, parent, offset)
        add(side + "Finger", f"{side}Hand", (sign * 6, 0, 0), end_site=(sign * 3, 0, 0))
        add(side + "Thumb", f"{side}Hand", (sign * 3, 0, 3), end_site=(sign * 2, 0, 2))

    for side, sign in (("Left", 1.0), ("Right", -1.0)):
        leg = [
            ("Hip", "Hips", (sign * 9, -4, 0)),
            ("Knee", f"{side}Hip", (0, -21, 0)),
            ("Shin", f"{side}Knee", (0, -21, 0)),
            ("Ankle", f"{side}Shin", (0, -9, 0)),
            ("Heel", f"{side}Ankle", (0, -4, -4)),
            ("Foot", f"{side}Heel", (0, -2, 7)),
            ("Toe", f"{side}Foot", (0, 0, 6)),
            ("ToeMid", f"{side}Toe", (0, 0, 3)),
        ]
        for name, parent, offset in leg:
            add(side + name, parent, offset)
        add(side + "ToeTip", f"{side}ToeMid", (0, 0, 2), end_site=(0, 0, 2))

    skeleton = Skeleton(tuple(joints))
    assert skeleton.rotation_channel_count - 3 == 126
    return skeleton


@dataclasses.dataclass(frozen=True)
class _ChannelProfile:
    mean: np.ndarray        # (C,)
    harmonics: np.ndarray   # (C, 3) amplitudes
    orders: np.ndarray      # (C, 3) harmonic orders of the base frequency
    phases: np.ndarray      # (C, 3)
    burst_phase: np.ndarray  # (C,) phase offset of the high-frequency bursts
    burst_mix: np.ndarray    # (C,) 0 = always-on harmonics, 1 = fully gated
    event_gain: np.ndarray   # (C,)


def _action_profile(label: str, channels: int = 126) -> _ChannelProfile:
    """Per-channel waveform profile, fixed per action across clips.

    Channels fall into three speed classes with very different optimal
    smoothing: slow near-sinusoids, mid-speed gait harmonics, and fast
    channels whose energy sits at high multiples of the base frequency
    (impact-like content). On top of that, the higher harmonics of mid/fast
    channels are gated by a phase-locked burst envelope, so the local
    smoothness of a channel swings within every cycle; good denoising
    requires per-channel AND per-frame filter adaptation.
    """
    _, amp_scale, _, _, _ = _ACTION_PARAMS[label]
    rng = np.random.default_rng(zlib.crc32(f"profile:{label}".encode()))
    mean = rng.uniform(-35.0, 35.0, channels)
    amplitude = amp_scale * rng.uniform(0.4, 1.3, channels)
    speed_class = rng.choice(3, size=channels, p=(0.40, 0.35, 0.25))
    # Gated harmonics get a ~1.6x amplitude boost so the burst envelope
    # (mean gate ~ 0.4) leaves their average energy comparable to ungated.
    mix = np.array([[1.0, 0.10, 0.0], [0.60, 0.70, 0.25], [0.35, 0.75, 0.50]])
    orders = np.array([[1, 2, 3], [1, 2, 4], [2, 5, 9]], dtype=np.float64)
    harmonics = amplitude[:, None] * mix[speed_class]
    phases = rng.uniform(0.0, 2.0 * np.pi, (channels, 3))
    burst_phase = rng.uniform(0.0, 2.0 * np.pi, channels)
    burst_mix = np.array([0.0, 0.85, 0.95])[speed_class]
    event_gain = rng.uniform(-1.0, 1.0, channels) * (rng.random(channels) < 0.35)
    return _ChannelProfile(
        mean, harmonics, orders[speed_class], phases, burst_phase, burst_mix, event_gain
    )


_PROFILES = {label: _action_profile(label) for label in ACTIONS}


def make_motion(
    label: str,
    seed: int,
    n_frames: int = 240,
    frame_time: float = 1.0 / 120.0,
) -> MotionClip:
    """One synthetic clip of the given action type (132 channels)."""
    if label not in _ACTION_PARAMS:
        raise ValueError(f"unknown action label {label!r}; expected one of {ACTIONS}")
    freq, _, speed, bounce, event_amp = _ACTION_PARAMS[label]
    profile = _PROFILES[label]
    rng = np.random.default_rng(seed)

    t = np.arange(n_frames) * frame_time
    theta0 = rng.uniform(0.0, 2.0 * np.pi)
    freq_clip = freq * rng.uniform(0.90, 1.10)
    amp_clip = rng.uniform(0.85, 1.15) * rng.uniform(0.8, 1.2, 126)
    # Cadence drift: the instantaneous rate wanders +/-25% within the clip,
    # so the same pose sequence appears at many local speeds.
    warp_phase = rng.uniform(0.0, 2.0 * np.pi)
    rate = 1.0 + 0.25 * np.sin(2.0 * np.pi * 0.3 * t + warp_phase)
    warped_t = np.concatenate([[0.0], np.cumsum(rate[:-1]) * frame_time])
    phase = 2.0 * np.pi * freq_clip * warped_t + theta0

    # (T, C, 3) harmonic components: a_ck * sin(k_ck * phase + psi_ck)
    components = profile.harmonics[None] * np.sin(
        profile.orders[None] * phase[:, None, None] + profile.phases[None]
    )
    # Gate the higher harmonics with a phase-locked burst envelope so that
    # each channel alternates between smooth and sharp segments every cycle.
    burst = (0.5 + 0.5 * np.sin(phase[:, None] + profile.burst_phase[None])) ** 2
    gate = 1.0 - profile.burst_mix[None] * (1.0 - burst)
    waves = components[:, :, 0] + gate * (components[:, :, 1] + components[:, :, 2])
    drift_phase = rng.uniform(0.0, 2.0 * np.pi, 126)
    drift = 0.12 * profile.harmonics.sum(axis=1)[None, :] * np.sin(
        2.0 * np.pi * 0.25 * t[:, None] + drift_phase[None, :]
    )
    rotations = profile.mean[None, :] + amp_clip * waves + drift

    if event_amp > 0:
        center = rng.uniform(0.3, 0.7) * t[-1]
        width = 0.06
        envelope = np.exp(-0.5 * ((t - center) / width) ** 2)
        rotations = rotations + event_amp * envelope[:, None] * profile.event_gain[None, :]

    heading = rng.uniform(-180.0, 180.0)
    root_pos = np.stack(
        [
            2.0 * np.sin(phase + rng.uniform(0.0, 2.0 * np.pi)),
            95.0 + bounce * np.sin(2.0 * phase),
            speed * t,
        ],
        axis=1,
    )
    root_rot = np.stack(
        [
            2.0 * np.sin(phase + 1.1),
            3.0 * np.sin(phase + 2.3),
            heading + 10.0 * np.sin(2.0 * np.pi * 0.1 * t + theta0),
        ],
        axis=1,
    )
    frames = np.concatenate([root_pos, root_rot, rotations], axis=1)
    return MotionClip(frame_time, frames)


@dataclasses.dataclass(frozen=True)
class Motion:
    motion_id: str
    label: str
    clip: MotionClip


def make_pool(
    counts: dict[str, int],
    seed: int = 0,
    n_frames: int = 240,
    frame_time: float = 1.0 / 120.0,
) -> list[Motion]:
    """Labeled pool of synthetic motions, deterministic under the seed."""
    pool = []
    for label in ACTIONS:
        n = counts.get(label, 0)
        for i in range(n):
            clip_seed = zlib.crc32(f"{seed}:{label}:{i}".encode())
            pool.append(
                Motion(
                    f"{label}_{i:02d}",
                    label,
                    make_motion(label, clip_seed, n_frames, frame_time),
                )
            )
    return pool
