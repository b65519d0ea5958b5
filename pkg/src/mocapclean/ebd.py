"""Gap filler: encoder + bidirectional LSTM + decoder over a strided context.

The network looks at 15 context steps either side of the target frame at a
stride of 4 frames (so +/-60 frames of context), encodes each step, runs a
2-layer bidirectional LSTM with a narrow hidden state, and decodes the
center step back to a full rotation vector. Gaps are first filled by linear
interpolation; the network learns to replace those placeholder samples using
inter-joint correlation and temporal coherence. It also doubles as a
whole-frame regression baseline for the denoising benchmark.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from mocapclean import autodiff as ad
from mocapclean.bvh import MotionClip
from mocapclean.corruption import lerp_fill
from mocapclean.ebf import TrainSchedule, _fingerprint
from mocapclean.features import ChannelLayout, compute_input_features


@dataclasses.dataclass(frozen=True)
class EbdConfig:
    rotation_channels: int = 126
    encoder_widths: tuple[int, ...] = (112, 96, 80, 64)
    blstm_hidden: int = 32
    blstm_layers: int = 2
    decoder_widths: tuple[int, ...] = (80, 96, 112, 126)
    context_half_steps: int = 15
    stride: int = 4
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.context_half_steps < 1:
            raise ValueError("context_half_steps must be >= 1")
        if self.decoder_widths[-1] != self.rotation_channels:
            raise ValueError("decoder_widths must end at rotation_channels")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def input_width(self) -> int:
        return self.rotation_channels + 3

    @property
    def context_steps(self) -> int:
        return 2 * self.context_half_steps + 1


@dataclasses.dataclass
class EbdModel:
    config: EbdConfig
    store: ad.ParamStore
    feature_mean: np.ndarray
    feature_std: np.ndarray
    metadata: dict


def build_params(config: EbdConfig, rng: np.random.Generator) -> ad.ParamStore:
    """Encoder/decoder dense weights U(-0.5, 0.5); LSTM weights N(0, 0.1^2)."""
    store = ad.ParamStore()
    width = config.input_width
    for i, out_width in enumerate(config.encoder_widths):
        store.add(f"enc{i}.w", rng.uniform(-0.5, 0.5, (width, out_width)))
        store.add(f"enc{i}.b", np.zeros(out_width))
        width = out_width
    hidden = config.blstm_hidden
    for layer in range(config.blstm_layers):
        for direction in ("fwd", "bwd"):
            store.add(
                f"blstm{layer}.{direction}.wx",
                rng.normal(0.0, 0.1, (width, 4 * hidden)),
            )
            store.add(
                f"blstm{layer}.{direction}.wh",
                rng.normal(0.0, 0.1, (hidden, 4 * hidden)),
            )
            bias = np.zeros(4 * hidden)
            bias[hidden : 2 * hidden] = 1.0
            store.add(f"blstm{layer}.{direction}.b", bias)
        width = 2 * hidden
    for i, out_width in enumerate(config.decoder_widths):
        store.add(f"dec{i}.w", rng.uniform(-0.5, 0.5, (width, out_width)))
        store.add(f"dec{i}.b", np.zeros(out_width))
        width = out_width
    return store


def network_outputs(
    store: ad.ParamStore,
    config: EbdConfig,
    features_std: np.ndarray,
    training: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
) -> ad.Tensor:
    """Tape forward over standardized context features (W, B, F).

    Returns the decoded center-frame rotation vector in standardized units.
    """
    window, batch, feat_width = features_std.shape
    if feat_width != config.input_width:
        raise ValueError(
            f"feature width {feat_width} does not match config input width "
            f"{config.input_width}"
        )
    x = ad.Tensor(features_std.reshape(window * batch, feat_width))
    for i in range(len(config.encoder_widths)):
        x = ad.dense(x, store[f"enc{i}.w"], store[f"enc{i}.b"], "tanh")
    x = ad.input_dropout(x, config.dropout, dropout_rng, training)
    x = ad.reshape(x, (window, batch, x.data.shape[-1]))
    for layer in range(config.blstm_layers):
        x = ad.bidirectional(
            x,
            (
                store[f"blstm{layer}.fwd.wx"],
                store[f"blstm{layer}.fwd.wh"],
                store[f"blstm{layer}.fwd.b"],
            ),
            (
                store[f"blstm{layer}.bwd.wx"],
                store[f"blstm{layer}.bwd.wh"],
                store[f"blstm{layer}.bwd.b"],
            ),
        )
    x = x[config.context_half_steps]
    last = len(config.decoder_widths) - 1
    for i in range(len(config.decoder_widths)):
        act = "identity" if i == last else "tanh"
        x = ad.dense(x, store[f"dec{i}.w"], store[f"dec{i}.b"], act)
    return x


def _context_indices(center: int, n_frames: int, config: EbdConfig) -> np.ndarray:
    half, stride = config.context_half_steps, config.stride
    raw = center + stride * np.arange(-half, half + 1)
    return np.clip(raw, 0, n_frames - 1)


def _gather_context(
    series: list[np.ndarray], clip_ids, centers, config: EbdConfig
) -> np.ndarray:
    window = config.context_steps
    batch = len(clip_ids)
    width = series[0].shape[1]
    out = np.empty((window, batch, width))
    for k, (ci, center) in enumerate(zip(clip_ids, centers)):
        data = series[ci]
        out[:, k, :] = data[_context_indices(int(center), data.shape[0], config)]
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

GapTriple = tuple[MotionClip, MotionClip, Optional[np.ndarray]]


def train_ebd(
    dataset: list[GapTriple],
    layout: ChannelLayout,
    config: EbdConfig = EbdConfig(),
    schedule: TrainSchedule = TrainSchedule(),
    resample: Optional[Callable[[int], list[GapTriple]]] = None,
) -> EbdModel:
    """Train on (clean, corrupted, mask) triples.

    With masks, gaps are lerp-filled before feature extraction, training
    windows are centered on frames containing at least one masked channel and
    the loss covers masked samples only. A triple with ``mask=None`` trains
    whole-frame regression instead (the denoising-baseline mode).

    ``resample``, if given, is called with the epoch number and must return a
    fresh list of triples; this is how each clean clip appears with multiple
    independently drawn corruptions (data augmentation).
    """
    if not dataset and resample is None:
        raise ValueError("dataset is empty")
    if layout.n_rotations != config.rotation_channels:
        raise ValueError(
            f"layout provides {layout.n_rotations} rotation channels, "
            f"config expects {config.rotation_channels}"
        )

    def prepare(triples):
        feats, targets, masks, eligible = [], [], [], []
        for clean, noisy, mask in triples:
            if clean.frames.shape != noisy.frames.shape:
                raise ValueError("paired clips must have identical shapes")
            if mask is not None:
                filled = lerp_fill(noisy, mask, layout)
                frame_eligible = np.flatnonzero(mask.any(axis=1))
            else:
                filled = noisy
                frame_eligible = np.arange(noisy.n_frames)
            feats.append(compute_input_features(filled, layout))
            targets.append(clean.frames[:, layout.rotation])
            masks.append(mask)
            eligible.append(frame_eligible)
        if sum(len(e) for e in eligible) == 0:
            raise ValueError("dataset contains no masked frames")
        return feats, targets, masks, eligible

    first = resample(0) if resample is not None else dataset
    feats, targets, masks, eligible = prepare(first)

    stacked = np.concatenate(feats, axis=0)
    feature_mean = stacked.mean(axis=0)
    feature_std = stacked.std(axis=0)
    inv_std = 1.0 / np.maximum(feature_std, 1e-6)
    rot_mean = feature_mean[: config.rotation_channels]
    rot_std = np.maximum(feature_std[: config.rotation_channels], 1e-6)

    seq = np.random.SeedSequence(config.seed)
    init_rng, batch_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    store = build_params(config, init_rng)
    adam = schedule.adam()

    loss_curve = []
    for epoch in range(schedule.epochs):
        if resample is not None and epoch > 0:
            feats, targets, masks, eligible = prepare(resample(epoch))
        feats_std = [(f - feature_mean) * inv_std for f in feats]
        counts = np.array([len(e) for e in eligible])
        cumulative = np.cumsum(counts)
        total = int(cumulative[-1])
        batches = max(1, int(np.ceil(total / schedule.batch_size)))
        epoch_losses = np.empty(batches)
        for b in range(batches):
            flat = batch_rng.integers(0, total, size=schedule.batch_size)
            clip_ids = np.searchsorted(cumulative, flat, side="right")
            centers = np.array(
                [
                    eligible[ci][f - (cumulative[ci] - counts[ci])]
                    for ci, f in zip(clip_ids, flat)
                ]
            )
            feat_win = _gather_context(feats_std, clip_ids, centers, config)
            target = np.stack([targets[ci][c] for ci, c in zip(clip_ids, centers)])
            pred_std = network_outputs(
                store, config, feat_win, training=True, dropout_rng=dropout_rng
            )
            pred = ad.add(ad.mul(pred_std, ad.Tensor(rot_std)), ad.Tensor(rot_mean))
            if all(m is None for m in masks):
                loss = ad.l2_loss(pred, ad.Tensor(target))
            else:
                sample_mask = np.stack(
                    [
                        masks[ci][c]
                        if masks[ci] is not None
                        else np.ones(config.rotation_channels, dtype=bool)
                        for ci, c in zip(clip_ids, centers)
                    ]
                ).astype(np.float64)
                diff = ad.sub(pred, ad.Tensor(target))
                weighted = ad.mul(ad.mul(diff, diff), ad.Tensor(sample_mask))
                loss = ad.div(
                    ad.tensor_sum(weighted), ad.Tensor(np.float64(sample_mask.sum()))
                )
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            ad.backward(loss)
            ad.adam_step(store, adam)
            epoch_losses[b] = float(loss.data)
        loss_curve.append(float(epoch_losses.mean()))

    store.freeze()
    metadata = {
        "trained": True,
        "epochs": schedule.epochs,
        "final_loss": loss_curve[-1] if loss_curve else None,
        "loss_curve": loss_curve,
        "data_fingerprint": _fingerprint(targets),
        "seed": config.seed,
        "masked_loss": any(m is not None for m in masks),
    }
    return EbdModel(config, store, feature_mean, feature_std, metadata)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


class _Forward:
    """Eval-mode forward pass over one context window at a time."""

    def __init__(self, model: EbdModel):
        cfg = model.config
        store = model.store
        self.config = cfg
        self.mean = model.feature_mean
        self.inv_std = 1.0 / np.maximum(model.feature_std, 1e-6)
        self.rot_mean = self.mean[: cfg.rotation_channels]
        self.rot_std = np.maximum(
            model.feature_std[: cfg.rotation_channels], 1e-6
        )
        self.encoder = [
            (store[f"enc{i}.w"].data, store[f"enc{i}.b"].data)
            for i in range(len(cfg.encoder_widths))
        ]
        self.blstm = []
        for layer in range(cfg.blstm_layers):
            wx = np.hstack(
                [store[f"blstm{layer}.fwd.wx"].data, store[f"blstm{layer}.bwd.wx"].data]
            )
            bias = np.concatenate(
                [store[f"blstm{layer}.fwd.b"].data, store[f"blstm{layer}.bwd.b"].data]
            )
            wh_pair = np.stack(
                [store[f"blstm{layer}.fwd.wh"].data, store[f"blstm{layer}.bwd.wh"].data]
            )
            self.blstm.append((wx, bias, wh_pair))
        self.decoder = [
            (store[f"dec{i}.w"].data, store[f"dec{i}.b"].data)
            for i in range(len(cfg.decoder_widths))
        ]

    def encode(self, feature_row: np.ndarray) -> np.ndarray:
        x = ((feature_row - self.mean) * self.inv_std)[None, :]
        for w, b in self.encoder:
            x = np.tanh(x @ w + b)
        return x[0]

    def decode_window(self, codes: np.ndarray) -> np.ndarray:
        from mocapclean.ebf import _scan_bidirectional

        x = codes
        for wx, bias, wh_pair in self.blstm:
            xp = x @ wx + bias
            gates = wx.shape[1] // 2
            x = _scan_bidirectional(xp[:, :gates], xp[:, gates:], wh_pair)
        x = x[self.config.context_half_steps][None, :]
        last = len(self.decoder) - 1
        for i, (w, b) in enumerate(self.decoder):
            x = x @ w + b
            if i < last:
                x = np.tanh(x)
        return x[0] * self.rot_std + self.rot_mean


def predict_frame(model: EbdModel, features: np.ndarray, t: int) -> np.ndarray:
    """Predicted rotation vector (degrees) for frame t from its strided context."""
    runner = _Forward(model)
    return _predict_frames(runner, np.asarray(features, dtype=np.float64), [t])[0]


def _predict_frames(runner: _Forward, features: np.ndarray, frames) -> np.ndarray:
    cfg = runner.config
    if features.ndim != 2 or features.shape[1] != cfg.input_width:
        raise ValueError(
            f"features must be (T, {cfg.input_width}), got {features.shape}"
        )
    n_frames = features.shape[0]
    code_cache: dict[int, np.ndarray] = {}

    def code(i: int) -> np.ndarray:
        if i not in code_cache:
            code_cache[i] = runner.encode(features[i])
        return code_cache[i]

    out = np.empty((len(frames), cfg.rotation_channels))
    for k, t in enumerate(frames):
        idx = _context_indices(int(t), n_frames, cfg)
        out[k] = runner.decode_window(np.stack([code(i) for i in idx]))
    return out


def fill_gaps(
    model: EbdModel, clip: MotionClip, mask: np.ndarray, layout: ChannelLayout
) -> MotionClip:
    """Replace masked samples with network predictions; unmasked samples are
    returned bit-identical. Features come from the lerp-filled clip, so the
    result does not depend on the original values hidden under the mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (clip.n_frames, layout.n_rotations):
        raise ValueError(
            f"mask shape {mask.shape} does not match "
            f"({clip.n_frames}, {layout.n_rotations})"
        )
    if not mask.any():
        return clip
    filled = lerp_fill(clip, mask, layout)
    features = compute_input_features(filled, layout)
    runner = _Forward(model)
    gap_frames = np.flatnonzero(mask.any(axis=1))
    predictions = _predict_frames(runner, features, gap_frames)
    out = clip.frames.copy()
    for row, t in zip(predictions, gap_frames):
        cols = layout.rotation[mask[t]]
        out[t, cols] = row[mask[t]]
    return clip.with_frames(out)


def denoise_with_ebd(
    model: EbdModel, clip: MotionClip, layout: ChannelLayout
) -> MotionClip:
    """Whole-frame regression baseline: every rotation channel of every frame
    is replaced by the network's prediction."""
    features = compute_input_features(clip, layout)
    runner = _Forward(model)
    predictions = _predict_frames(runner, features, range(clip.n_frames))
    out = clip.frames.copy()
    out[:, layout.rotation] = predictions
    return clip.with_frames(out)
