"""Pipeline configuration: a strict JSON schema with unknown-key rejection.

Every section maps onto the dataclasses of the corresponding module; any key
that is not recognized raises :class:`ConfigError`, so typos in experiment
configs fail fast instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
from typing import Optional

import numpy as np

from mocapclean.bench import DEFAULT_COMPOSITION
from mocapclean.corruption import (
    AngularGaussianNoise,
    ConstantBiasNoise,
    GapSpec,
    SineBiasNoise,
    SpatialGaussianNoise,
    UniformNoise,
)
from mocapclean.ebd import EbdConfig
from mocapclean.ebf import EbfConfig, TrainSchedule


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


def _take(data: dict, allowed: set[str], context: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")


@dataclasses.dataclass(frozen=True)
class SyntheticDataset:
    counts: tuple[tuple[str, int], ...] = (
        ("walk", 8), ("jog", 6), ("run", 6), ("jump", 5), ("kick", 5),
    )
    frames: int = 240
    seed: int = 0

    def counts_dict(self) -> dict[str, int]:
        return dict(self.counts)


@dataclasses.dataclass(frozen=True)
class BvhDataset:
    directory: str
    manifest: Optional[str] = None  # JSON: {filename: action label}


@dataclasses.dataclass(frozen=True)
class HoldoutConfig:
    count: int = 5
    composition: tuple[tuple[str, int], ...] = tuple(sorted(DEFAULT_COMPOSITION.items()))
    seed: int = 0

    def composition_dict(self) -> dict[str, int]:
        return dict(self.composition)


@dataclasses.dataclass(frozen=True)
class BenchConfig:
    methods: tuple[str, ...] = ("ebf", "gauss58", "gauss125", "ebd")
    noise_index: int = 0
    keep_curves: bool = True
    leave_one_action_out: bool = False


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    synthetic: Optional[SyntheticDataset] = SyntheticDataset()
    bvh: Optional[BvhDataset] = None
    noise: tuple = (AngularGaussianNoise(level=0.5),)
    gaps: Optional[GapSpec] = None
    ebf: EbfConfig = EbfConfig()
    ebd: EbdConfig = EbdConfig()
    schedule: TrainSchedule = TrainSchedule()
    holdout: HoldoutConfig = HoldoutConfig()
    bench: BenchConfig = BenchConfig()
    repeats: int = 5
    train_draws: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.repeats < 1 or self.train_draws < 1 or self.workers < 1:
            raise ConfigError("repeats, train_draws and workers must be >= 1")
        if self.synthetic is None and self.bvh is None:
            raise ConfigError("config needs a 'synthetic' or 'bvh' dataset section")


_NOISE_KINDS = {
    "angular": (AngularGaussianNoise, {"level", "seed"}),
    "uniform": (UniformNoise, {"level", "seed"}),
    "constant_bias": (ConstantBiasNoise, {"offset", "level", "seed"}),
    "sine_bias": (SineBiasNoise, {"amplitude", "period", "level", "seed"}),
    "spatial": (SpatialGaussianNoise, {"sigma_cm", "per_joint", "seed"}),
}


def _parse_noise(entry: dict, index: int):
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ConfigError(f"noise[{index}] must be an object with a 'kind'")
    kind = entry["kind"]
    if kind not in _NOISE_KINDS:
        raise ConfigError(
            f"noise[{index}]: unknown kind {kind!r}; expected one of "
            f"{sorted(_NOISE_KINDS)}"
        )
    cls, allowed = _NOISE_KINDS[kind]
    _take(entry, allowed | {"kind"}, f"noise[{index}]")
    kwargs = {k: v for k, v in entry.items() if k != "kind"}
    if kind == "spatial" and "per_joint" in kwargs:
        kwargs["per_joint"] = tuple(sorted(kwargs["per_joint"].items()))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"noise[{index}]: {exc}")


def _parse_section(cls, data: dict, context: str, tuple_fields: set[str] = frozenset()):
    if not isinstance(data, dict):
        raise ConfigError(f"{context} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    _take(data, names, context)
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = tuple(value) if key in tuple_fields and isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}")


def parse_config(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a JSON object")
    allowed = {
        "seed", "output_dir", "dataset", "noise", "gaps", "ebf", "ebd",
        "schedule", "holdout", "bench", "repeats", "train_draws", "workers",
    }
    _take(data, allowed, "config root")

    kwargs: dict = {}
    for key in ("seed", "output_dir", "repeats", "train_draws", "workers"):
        if key in data:
            kwargs[key] = data[key]

    if "dataset" in data:
        section = data["dataset"]
        _take(section, {"synthetic", "dir", "manifest"}, "dataset")
        if "synthetic" in section and "dir" in section:
            raise ConfigError("dataset: choose either 'synthetic' or 'dir'")
        if "synthetic" in section:
            synth = section["synthetic"]
            _take(synth, {"counts", "frames", "seed"}, "dataset.synthetic")
            counts = synth.get("counts")
            kwargs["synthetic"] = SyntheticDataset(
                counts=tuple(sorted(counts.items())) if counts else SyntheticDataset().counts,
                frames=synth.get("frames", 240),
                seed=synth.get("seed", 0),
            )
            kwargs["bvh"] = None
        elif "dir" in section:
            kwargs["bvh"] = BvhDataset(section["dir"], section.get("manifest"))
            kwargs["synthetic"] = None
        else:
            raise ConfigError("dataset: needs 'synthetic' or 'dir'")

    if "noise" in data:
        if not isinstance(data["noise"], list):
            raise ConfigError("'noise' must be a list of noise specs")
        kwargs["noise"] = tuple(
            _parse_noise(entry, i) for i, entry in enumerate(data["noise"])
        )
    if "gaps" in data:
        kwargs["gaps"] = (
            None
            if data["gaps"] is None
            else _parse_section(GapSpec, data["gaps"], "gaps")
        )
    if "ebf" in data:
        kwargs["ebf"] = _parse_section(
            EbfConfig, data["ebf"], "ebf",
            {"encoder_widths", "filter_widths", "nn_widths"},
        )
    if "ebd" in data:
        kwargs["ebd"] = _parse_section(
            EbdConfig, data["ebd"], "ebd", {"encoder_widths", "decoder_widths"}
        )
    if "schedule" in data:
        kwargs["schedule"] = _parse_section(TrainSchedule, data["schedule"], "schedule")
    if "holdout" in data:
        section = data["holdout"]
        _take(section, {"count", "composition", "seed"}, "holdout")
        kwargs["holdout"] = HoldoutConfig(
            count=section.get("count", 5),
            composition=tuple(sorted(section["composition"].items()))
            if "composition" in section
            else HoldoutConfig().composition,
            seed=section.get("seed", 0),
        )
    if "bench" in data:
        kwargs["bench"] = _parse_section(
            BenchConfig, data["bench"], "bench", {"methods"}
        )
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    try:
        text = pathlib.Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    return parse_config(data)


def spec_to_jsonable(spec) -> Optional[dict]:
    """Dataclass spec -> JSON-safe dict (numpy arrays become lists)."""
    if spec is None:
        return None
    out = {"kind": type(spec).__name__}
    for field in dataclasses.fields(spec):
        value = getattr(spec, field.name)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, tuple):
            value = list(value)
        out[field.name] = value
    return out
