"""Model serialization: a JSON header line plus a raw float64 parameter block.

The header is human-inspectable (version, kind, config, metadata, tensor
table, payload checksum); the payload is the concatenation of all parameter
tensors as little-endian float64 in header order, so save/load round trips
are bit-exact. The checksum is verified before any tensor is constructed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import pathlib
from typing import Optional, Union

import numpy as np

from mocapclean import ebd as ebd_mod
from mocapclean import ebf as ebf_mod

FORMAT_NAME = "mocapclean-model"
FORMAT_VERSION = 1

Model = Union[ebf_mod.EbfModel, ebd_mod.EbdModel]


class ArtifactError(ValueError):
    """Unreadable, corrupt or mismatched model artifact."""


def _config_to_dict(config) -> dict:
    out = {}
    for field in dataclasses.fields(config):
        value = getattr(config, field.name)
        out[field.name] = list(value) if isinstance(value, tuple) else value
    return out


def _config_from_dict(cls, data: dict):
    kwargs = {}
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - field_names
    if unknown:
        raise ArtifactError(f"unknown config keys in artifact: {sorted(unknown)}")
    for field in dataclasses.fields(cls):
        if field.name not in data:
            continue
        value = data[field.name]
        kwargs[field.name] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


def model_kind(model: Model) -> str:
    if isinstance(model, ebd_mod.EbdModel):
        return "ebd"
    return model.config.variant.lower()


def save_model(model: Model, path) -> None:
    """Write a model artifact; parameters are preserved bit-exactly."""
    store = model.store
    names = store.names()
    tensors = [{"name": n, "shape": list(store[n].data.shape)} for n in names]
    payload = b"".join(
        np.ascontiguousarray(store[n].data, dtype="<f8").tobytes() for n in names
    )
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model_kind(model),
        "config": _config_to_dict(model.config),
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "metadata": model.metadata,
        "tensors": tensors,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n" + payload
    pathlib.Path(path).write_bytes(blob)


def load_model(path, expect_kind: Optional[str] = None) -> Model:
    """Read a model artifact, verifying version, checksum and tensor shapes.

    ``expect_kind`` restricts the accepted network kind ("ebf", "bf", "nn",
    "ebd", or "ebf-family" for any filter-predicting variant).
    """
    blob = pathlib.Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise ArtifactError("not a model artifact: missing header line")
    try:
        header = json.loads(blob[:newline])
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"unreadable artifact header: {exc}")
    if header.get("format") != FORMAT_NAME:
        raise ArtifactError("not a mocapclean model artifact")
    if header.get("version") != FORMAT_VERSION:
        raise ArtifactError(
            f"unsupported artifact version {header.get('version')!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    kind = header.get("kind")
    if expect_kind is not None:
        family = ("ebf", "bf", "nn") if expect_kind == "ebf-family" else (expect_kind,)
        if kind not in family:
            raise ArtifactError(
                f"artifact holds a {kind!r} model where {expect_kind!r} was expected"
            )

    payload = blob[newline + 1 :]
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ArtifactError("artifact payload failed checksum verification")

    if kind == "ebd":
        config = _config_from_dict(ebd_mod.EbdConfig, header["config"])
        expected = ebd_mod.build_params(config, np.random.default_rng(0))
    else:
        config = _config_from_dict(ebf_mod.EbfConfig, header["config"])
        expected = ebf_mod.build_params(config, np.random.default_rng(0))

    declared = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    expected_shapes = {n: expected[n].data.shape for n in expected.names()}
    if declared != expected_shapes:
        raise ArtifactError("artifact tensor table does not match its config")

    values = np.frombuffer(payload, dtype="<f8")
    total = sum(int(np.prod(s)) for s in declared.values())
    if values.size != total:
        raise ArtifactError(
            f"artifact payload holds {values.size} values, expected {total}"
        )
    cursor = 0
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        size = int(np.prod(shape))
        expected[name].data = values[cursor : cursor + size].reshape(shape).copy()
        cursor += size
    expected.freeze()

    mean = np.asarray(header["feature_mean"], dtype=np.float64)
    std = np.asarray(header["feature_std"], dtype=np.float64)
    metadata = header.get("metadata", {})
    if kind == "ebd":
        return ebd_mod.EbdModel(config, expected, mean, std, metadata)
    return ebf_mod.EbfModel(config, expected, mean, std, metadata)
