"""Baselines, error metrics, holdout construction and benchmark orchestration.

The benchmark protocol mirrors the evaluation used for the networks: build
labeled holdouts, train every learned method on the non-holdout motions,
corrupt each held-out motion with several independent seeds, run every method
on the same corrupted input and report per-frame and frame-averaged RMS over
the rotation channels. Methods never see clean data at evaluation time; they
receive only the corrupted clip (and the gap mask when gaps are enabled).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import zlib
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from mocapclean import ebd as ebd_mod
from mocapclean import ebf as ebf_mod
from mocapclean.bvh import MotionClip
from mocapclean.corruption import ChannelNoise, GapSpec, lerp_fill, synth_gaps
from mocapclean.corruption import apply_channel_noise
from mocapclean.features import ChannelLayout
from mocapclean.synthetic import Motion

# A cleaner sees only the corrupted clip (and mask when gaps are present).
Cleaner = Callable[[MotionClip, Optional[np.ndarray]], MotionClip]
# (clean, corrupted, mask) triples for fitting learned methods.
TrainTriple = tuple[MotionClip, MotionClip, Optional[np.ndarray]]
MethodFactory = Callable[[list[TrainTriple], ChannelLayout], Cleaner]


# ---------------------------------------------------------------------------
# Metrics and fixed baselines
# ---------------------------------------------------------------------------


def gaussian_smooth_fixed(
    clip: MotionClip, sigma_ms: float, layout: ChannelLayout
) -> MotionClip:
    """Convolve every rotation channel with one fixed Gaussian kernel.

    The kernel std is given in milliseconds and converted with the clip's
    frame rate; it is truncated at +/-3 sigma and boundary windows are
    renormalized. Root channels pass through untouched.
    """
    if sigma_ms <= 0:
        raise ValueError("sigma_ms must be positive")
    sigma_frames = sigma_ms * clip.fps / 1000.0
    radius = max(1, int(np.floor(3.0 * sigma_frames)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma_frames) ** 2)
    kernel /= kernel.sum()

    rot = clip.frames[:, layout.rotation]
    smoothed = convolve1d(rot, kernel, axis=0, mode="constant")
    correction = convolve1d(np.ones(rot.shape[0]), kernel, mode="constant")
    smoothed /= correction[:, None]
    frames = clip.frames.copy()
    frames[:, layout.rotation] = smoothed
    return clip.with_frames(frames)


def rms_curve(
    clean: MotionClip, test: MotionClip, layout: ChannelLayout
) -> np.ndarray:
    """Per-frame RMS error (degrees) over the rotation channels."""
    if clean.frames.shape != test.frames.shape:
        raise ValueError("clips must have identical shapes")
    diff = clean.frames[:, layout.rotation] - test.frames[:, layout.rotation]
    return np.sqrt(np.mean(diff * diff, axis=1))


def rms_avg(clean: MotionClip, test: MotionClip, layout: ChannelLayout) -> float:
    """Frame-averaged RMS error (degrees) over the rotation channels."""
    return float(rms_curve(clean, test, layout).mean())


def masked_rms(
    clean: MotionClip, test: MotionClip, mask: np.ndarray, layout: ChannelLayout
) -> float:
    """RMS error over masked rotation samples only."""
    mask = np.asarray(mask, dtype=bool)
    diff = clean.frames[:, layout.rotation] - test.frames[:, layout.rotation]
    if not mask.any():
        return 0.0
    return float(np.sqrt(np.mean(diff[mask] ** 2)))


# ---------------------------------------------------------------------------
# Holdouts
# ---------------------------------------------------------------------------

DEFAULT_COMPOSITION = {"walk": 4, "jog": 2, "run": 2, "jump": 1, "kick": 1}


@dataclasses.dataclass(frozen=True)
class HoldoutPlan:
    holdouts: tuple[tuple[str, ...], ...]
    composition: tuple[tuple[str, int], ...]
    scaled: bool
    seed: int


def make_holdouts(
    pool: Sequence[tuple[str, str]],
    composition: dict[str, int] = DEFAULT_COMPOSITION,
    n_holdouts: int = 5,
    seed: int = 0,
) -> HoldoutPlan:
    """Sample labeled holdouts without replacement within each holdout.

    ``pool`` is a sequence of (motion_id, label). If the pool cannot satisfy
    the composition, counts are scaled down proportionally (at least one of
    each requested label that exists) and the plan records the scaling.
    """
    if not pool:
        raise ValueError("motion pool is empty")
    by_label: dict[str, list[str]] = {}
    for motion_id, label in pool:
        by_label.setdefault(label, []).append(motion_id)

    scaled = False
    factor = 1.0
    for label, want in composition.items():
        have = len(by_label.get(label, []))
        if want > 0:
            factor = min(factor, have / want)
    used = {}
    for label, want in composition.items():
        have = len(by_label.get(label, []))
        take = want if factor >= 1.0 else min(have, max(1 if have else 0, int(want * factor)))
        if take != want:
            scaled = True
        used[label] = take

    rng = np.random.default_rng(seed)
    holdouts = []
    for _ in range(n_holdouts):
        members: list[str] = []
        for label, take in used.items():
            candidates = by_label.get(label, [])
            if take > 0:
                picked = rng.choice(len(candidates), size=take, replace=False)
                members.extend(candidates[i] for i in sorted(picked))
        holdouts.append(tuple(members))
    return HoldoutPlan(tuple(holdouts), tuple(sorted(used.items())), scaled, seed)


def leave_one_action_out(pool: Sequence[tuple[str, str]]) -> HoldoutPlan:
    """One holdout per action label, containing every motion of that label."""
    by_label: dict[str, list[str]] = {}
    for motion_id, label in pool:
        by_label.setdefault(label, []).append(motion_id)
    holdouts = tuple(tuple(ids) for _, ids in sorted(by_label.items()))
    return HoldoutPlan(holdouts, tuple((lb, len(ids)) for lb, ids in sorted(by_label.items())), False, 0)


# ---------------------------------------------------------------------------
# Corruption wiring
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Corruption:
    """Noise and/or gaps applied to clean motions during a benchmark."""

    noise: Optional[ChannelNoise] = None
    gaps: Optional[GapSpec] = None


def _derived_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


def corrupt_motion(
    motion: Motion, corruption: Corruption, layout: ChannelLayout, seed: int
) -> tuple[MotionClip, Optional[np.ndarray]]:
    """Apply the corruption spec with a derived seed; returns (clip, mask)."""
    clip = motion.clip
    if corruption.noise is not None:
        spec = dataclasses.replace(corruption.noise, seed=_derived_seed(seed, "noise"))
        clip = apply_channel_noise(clip, layout, spec)
    mask = None
    if corruption.gaps is not None:
        spec = dataclasses.replace(corruption.gaps, seed=_derived_seed(seed, "gaps"))
        mask = synth_gaps(clip.n_frames, spec, layout.n_rotations)
    return clip, mask


# ---------------------------------------------------------------------------
# Method factories
# ---------------------------------------------------------------------------


def identity_method() -> MethodFactory:
    def factory(train, layout):
        return lambda clip, mask=None: clip

    return factory


def fixed_gaussian_method(sigma_ms: float) -> MethodFactory:
    """Untrained baseline: lerp-fill gaps (if any), then one fixed Gaussian."""

    def factory(train, layout):
        def cleaner(clip, mask=None):
            if mask is not None and mask.any():
                clip = lerp_fill(clip, mask, layout)
            return gaussian_smooth_fixed(clip, sigma_ms, layout)

        return cleaner

    return factory


def ebf_method(
    config: ebf_mod.EbfConfig, schedule: ebf_mod.TrainSchedule
) -> MethodFactory:
    """Train the filter-predicting denoiser; gaps are lerp-filled first."""

    def factory(train, layout):
        pairs = []
        for clean, noisy, mask in train:
            if mask is not None and mask.any():
                noisy = lerp_fill(noisy, mask, layout)
            pairs.append((noisy, clean))
        model = ebf_mod.train_ebf(pairs, layout, config, schedule)

        def cleaner(clip, mask=None):
            if mask is not None and mask.any():
                clip = lerp_fill(clip, mask, layout)
            return ebf_mod.denoise(model, clip, layout)

        return cleaner

    return factory


def ebd_denoiser_method(
    config: ebd_mod.EbdConfig, schedule: ebf_mod.TrainSchedule
) -> MethodFactory:
    """Whole-frame regression baseline trained to map noisy context to clean."""

    def factory(train, layout):
        triples = []
        for clean, noisy, mask in train:
            if mask is not None and mask.any():
                noisy = lerp_fill(noisy, mask, layout)
            triples.append((clean, noisy, None))
        model = ebd_mod.train_ebd(triples, layout, config, schedule)

        def cleaner(clip, mask=None):
            if mask is not None and mask.any():
                clip = lerp_fill(clip, mask, layout)
            return ebd_mod.denoise_with_ebd(model, clip, layout)

        return cleaner

    return factory


def ebd_then_ebf_method(
    ebd_config: ebd_mod.EbdConfig,
    ebf_config: ebf_mod.EbfConfig,
    ebd_schedule: ebf_mod.TrainSchedule,
    ebf_schedule: ebf_mod.TrainSchedule,
    resample: Optional[Callable[[int], list[TrainTriple]]] = None,
) -> MethodFactory:
    """The full pipeline: gap filling first, then adaptive-filter denoising."""

    def factory(train, layout):
        gap_model = ebd_mod.train_ebd(train, layout, ebd_config, ebd_schedule, resample=resample)
        pairs = []
        for clean, noisy, mask in train:
            if mask is not None and mask.any():
                noisy = lerp_fill(noisy, mask, layout)
            pairs.append((noisy, clean))
        denoiser = ebf_mod.train_ebf(pairs, layout, ebf_config, ebf_schedule)

        def cleaner(clip, mask=None):
            if mask is not None and mask.any():
                clip = ebd_mod.fill_gaps(gap_model, clip, mask, layout)
            return ebf_mod.denoise(denoiser, clip, layout)

        return cleaner

    return factory


# ---------------------------------------------------------------------------
# Benchmark runner and report
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class BenchCell:
    holdout: int
    motion_id: str
    label: str
    method: str
    repeat: int
    rms_avg: Optional[float]
    masked_rms: Optional[float]
    curve: Optional[np.ndarray]
    error: Optional[str] = None


@dataclasses.dataclass
class BenchReport:
    cells: list[BenchCell]
    metadata: dict

    def grand_average(self, method: str) -> float:
        values = [c.rms_avg for c in self.cells if c.method == method and c.rms_avg is not None]
        if not values:
            raise ValueError(f"no successful cells for method {method!r}")
        return float(np.mean(values))

    def per_motion_average(self, method: str) -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for cell in self.cells:
            if cell.method == method and cell.rms_avg is not None:
                sums.setdefault(cell.motion_id, []).append(cell.rms_avg)
        return {m: float(np.mean(v)) for m, v in sums.items()}

    def masked_average(self, method: str) -> float:
        values = [
            c.masked_rms
            for c in self.cells
            if c.method == method and c.masked_rms is not None
        ]
        if not values:
            raise ValueError(f"no masked results for method {method!r}")
        return float(np.mean(values))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["holdout", "motion", "label", "method", "repeat", "rms_avg", "masked_rms", "error"]
        )
        for c in self.cells:
            writer.writerow(
                [
                    c.holdout,
                    c.motion_id,
                    c.label,
                    c.method,
                    c.repeat,
                    "" if c.rms_avg is None else f"{c.rms_avg:.9f}",
                    "" if c.masked_rms is None else f"{c.masked_rms:.9f}",
                    c.error or "",
                ]
            )
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["holdout", "motion", "method", "repeat", "frame", "rms"])
        for c in self.cells:
            if c.curve is None:
                continue
            for frame, value in enumerate(c.curve):
                writer.writerow(
                    [c.holdout, c.motion_id, c.method, c.repeat, frame, f"{value:.9f}"]
                )
        return buf.getvalue()

    def write(self, outdir) -> None:
        import pathlib

        out = pathlib.Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(self.summary_csv())
        (out / "curves.csv").write_text(self.curves_csv())
        (out / "metadata.json").write_text(
            json.dumps(self.metadata, indent=2, sort_keys=True) + "\n"
        )


def run_benchmark(
    motions: Sequence[Motion],
    layout: ChannelLayout,
    methods: dict[str, MethodFactory],
    corruption: Corruption,
    plan: HoldoutPlan,
    repeats: int = 5,
    seed: int = 0,
    train_draws: int = 1,
    keep_curves: bool = True,
) -> BenchReport:
    """Train-and-evaluate every method over every holdout.

    Each held-out motion is corrupted with ``repeats`` independent seeds; all
    methods see the same corrupted input per repeat. Learned methods are
    re-fitted per holdout on the non-holdout motions (``train_draws``
    corruption draws per training clip). Fully deterministic under ``seed``.
    """
    by_id = {m.motion_id: m for m in motions}
    cells: list[BenchCell] = []
    for h, holdout_ids in enumerate(plan.holdouts):
        held = set(holdout_ids)
        train_motions = [m for m in motions if m.motion_id not in held]
        triples: list[TrainTriple] = []
        for m in train_motions:
            for draw in range(train_draws):
                clip, mask = corrupt_motion(
                    m, corruption, layout, _derived_seed(seed, "train", h, m.motion_id, draw)
                )
                triples.append((m.clip, clip, mask))
        cleaners = {name: factory(triples, layout) for name, factory in methods.items()}

        for motion_id in holdout_ids:
            motion = by_id[motion_id]
            for repeat in range(repeats):
                clip, mask = corrupt_motion(
                    motion, corruption, layout, _derived_seed(seed, "eval", motion_id, repeat)
                )
                for name, cleaner in cleaners.items():
                    try:
                        cleaned = cleaner(clip, mask)
                        curve = rms_curve(motion.clip, cleaned, layout)
                        cells.append(
                            BenchCell(
                                h,
                                motion_id,
                                motion.label,
                                name,
                                repeat,
                                float(curve.mean()),
                                masked_rms(motion.clip, cleaned, mask, layout)
                                if mask is not None
                                else None,
                                curve if keep_curves else None,
                            )
                        )
                    except Exception as exc:  # record and continue
                        cells.append(
                            BenchCell(
                                h, motion_id, motion.label, name, repeat,
                                None, None, None, error=str(exc),
                            )
                        )
    metadata = {
        "seed": seed,
        "repeats": repeats,
        "train_draws": train_draws,
        "methods": sorted(methods),
        "holdouts": [list(hd) for hd in plan.holdouts],
        "composition": dict(plan.composition),
        "composition_scaled": plan.scaled,
        "corruption": {
            "noise": None
            if corruption.noise is None
            else dataclasses.asdict(corruption.noise),
            "gaps": None
            if corruption.gaps is None
            else dataclasses.asdict(corruption.gaps),
        },
    }
    return BenchReport(cells, metadata)
