"""Dataset ingestion and corrupted-dataset generation.

Motions come either from a user-supplied directory of BVH files (with a JSON
manifest mapping file names to action labels) or from the bundled synthetic
family. ``prepare_dataset`` writes, for every motion and configured noise
spec, a corrupted BVH plus an optional gap-mask file and a provenance JSON
that records exactly how to regenerate it.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
import warnings
from typing import Optional

from mocapclean import __version__
from mocapclean.bench import _derived_seed, corrupt_motion, Corruption
from mocapclean.bvh import BvhError, MotionClip, Skeleton, parse_bvh, write_bvh
from mocapclean.config import PipelineConfig, spec_to_jsonable
from mocapclean.corruption import (
    SpatialGaussianNoise,
    apply_spatial_noise,
    gap_mask_to_rle,
    synth_gaps,
)
from mocapclean.features import ChannelLayout
from mocapclean.synthetic import Motion, desk_skeleton, make_pool


@dataclasses.dataclass
class LoadedDataset:
    motions: list[Motion]
    layout: ChannelLayout
    skeletons: dict[str, Skeleton]
    skipped: list[tuple[str, str]]  # (file, reason)


def load_dataset(config: PipelineConfig) -> LoadedDataset:
    """Materialize the configured motion pool (synthetic or BVH directory)."""
    if config.synthetic is not None:
        skeleton = desk_skeleton()
        motions = make_pool(
            config.synthetic.counts_dict(),
            seed=config.synthetic.seed,
            n_frames=config.synthetic.frames,
        )
        layout = ChannelLayout.from_skeleton(skeleton)
        return LoadedDataset(motions, layout, {m.motion_id: skeleton for m in motions}, [])

    directory = pathlib.Path(config.bvh.directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    labels = {}
    if config.bvh.manifest:
        labels = json.loads(pathlib.Path(config.bvh.manifest).read_text())
    motions: list[Motion] = []
    skeletons: dict[str, Skeleton] = {}
    skipped: list[tuple[str, str]] = []
    layout: Optional[ChannelLayout] = None
    for path in sorted(directory.glob("*.bvh")):
        try:
            skeleton, clip = parse_bvh(path.read_text())
        except BvhError as exc:
            skipped.append((path.name, str(exc)))
            warnings.warn(f"skipping unparseable clip {path.name}: {exc}")
            continue
        candidate = ChannelLayout.from_skeleton(skeleton)
        if layout is None:
            layout = candidate
        elif candidate.n_rotations != layout.n_rotations:
            skipped.append((path.name, "rotation channel count differs from pool"))
            warnings.warn(
                f"skipping {path.name}: {candidate.n_rotations} rotation channels, "
                f"pool uses {layout.n_rotations}"
            )
            continue
        motion_id = path.stem
        motions.append(Motion(motion_id, labels.get(path.name, "unlabeled"), clip))
        skeletons[motion_id] = skeleton
    if not motions:
        raise ValueError(f"no parseable BVH files in {directory}")
    return LoadedDataset(motions, layout, skeletons, skipped)


def _spec_tag(index: int, spec) -> str:
    return f"n{index:02d}_{type(spec).__name__}"


def prepare_dataset(config: PipelineConfig) -> list[pathlib.Path]:
    """Write corrupted variants of every motion; returns the written paths.

    Deterministic under the config seed: per-file seeds derive from
    (seed, motion id, spec index), and regenerating with the same config
    produces byte-identical outputs.
    """
    dataset = load_dataset(config)
    outdir = pathlib.Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[pathlib.Path] = []
    if not config.noise:
        warnings.warn("no noise specs configured; nothing to generate")
        return written
    for motion in dataset.motions:
        skeleton = dataset.skeletons[motion.motion_id]
        for index, spec in enumerate(config.noise):
            seed = _derived_seed(config.seed, motion.motion_id, index)
            if isinstance(spec, SpatialGaussianNoise):
                seeded = dataclasses.replace(spec, seed=seed)
                noisy = apply_spatial_noise(motion.clip, skeleton, seeded)
                mask = None
                if config.gaps is not None:
                    gap_spec = dataclasses.replace(
                        config.gaps, seed=_derived_seed(seed, "gaps")
                    )
                    mask = synth_gaps(
                        noisy.n_frames, gap_spec, dataset.layout.n_rotations
                    )
                used_noise = seeded
            else:
                noisy, mask = corrupt_motion(
                    motion, Corruption(spec, config.gaps), dataset.layout, seed
                )
                used_noise = dataclasses.replace(spec, seed=seed)
            stem = f"{motion.motion_id}__{_spec_tag(index, spec)}"
            bvh_path = outdir / f"{stem}.bvh"
            bvh_path.write_text(write_bvh(skeleton, noisy))
            written.append(bvh_path)
            if mask is not None:
                mask_path = outdir / f"{stem}.mask.rle"
                mask_path.write_text(gap_mask_to_rle(mask))
                written.append(mask_path)
            provenance = {
                "source": motion.motion_id,
                "label": motion.label,
                "noise": spec_to_jsonable(used_noise),
                "gaps": spec_to_jsonable(
                    None
                    if config.gaps is None
                    else dataclasses.replace(
                        config.gaps, seed=_derived_seed(seed, "gaps")
                    )
                ),
                "seed": seed,
                "generator": f"mocapclean {__version__}",
            }
            prov_path = outdir / f"{stem}.json"
            prov_path.write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
            written.append(prov_path)
    return written


def training_pairs(
    dataset: LoadedDataset, config: PipelineConfig, noise_index: int = 0
) -> list[tuple[MotionClip, MotionClip, Optional[object]]]:
    """(clean, corrupted, mask) triples for every motion under one noise spec."""
    if not config.noise:
        raise ValueError("config has no noise specs")
    if not 0 <= noise_index < len(config.noise):
        raise ValueError(f"noise_index {noise_index} out of range")
    spec = config.noise[noise_index]
    triples = []
    for draw in range(config.train_draws):
        for motion in dataset.motions:
            seed = _derived_seed(config.seed, "train", motion.motion_id, noise_index, draw)
            if isinstance(spec, SpatialGaussianNoise):
                seeded = dataclasses.replace(spec, seed=seed)
                noisy = apply_spatial_noise(
                    motion.clip, dataset.skeletons[motion.motion_id], seeded
                )
                mask = None
                if config.gaps is not None:
                    gap_spec = dataclasses.replace(
                        config.gaps, seed=_derived_seed(seed, "gaps")
                    )
                    mask = synth_gaps(noisy.n_frames, gap_spec, dataset.layout.n_rotations)
            else:
                noisy, mask = corrupt_motion(
                    motion, Corruption(spec, config.gaps), dataset.layout, seed
                )
            triples.append((motion.clip, noisy, mask))
    return triples
