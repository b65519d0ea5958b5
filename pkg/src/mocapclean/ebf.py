"""Filter-predicting denoiser: encoder + bidirectional LSTM + filter head.

Per output frame the network looks at a window of 15 frames of lookback and
15 of lookahead, encodes each frame to a compact code, runs a 2-layer
bidirectional LSTM over the 31-step window and maps the center step to one
Gaussian smoothing standard deviation per rotation channel (plus, optionally,
a subtractive bias per channel). The denoised sample is the weighted average
of the surrounding noisy samples under those per-channel Gaussian weights.

Two ablation variants share the training and filtering machinery: ``BF``
drops the encoder (raw features feed the LSTM) and ``NN`` is a feedforward
stack over the flattened window.
"""

from __future__ import annotations

import dataclasses
import hashlib
import time
from collections import deque
from typing import Iterable, Iterator, Optional

import numpy as np

from mocapclean import autodiff as ad
from mocapclean.bvh import MotionClip
from mocapclean.features import ChannelLayout, compute_input_features

VARIANTS = ("EBF", "BF", "NN")


@dataclasses.dataclass(frozen=True)
class EbfConfig:
    rotation_channels: int = 126
    encoder_widths: tuple[int, ...] = (112, 96, 80, 64)
    blstm_hidden: int = 126
    blstm_layers: int = 2
    filter_widths: tuple[int, ...] = (224, 176, 150, 126)
    nn_widths: tuple[int, ...] = (1024, 512, 256, 192, 160, 126)
    half_width: int = 15
    debias: bool = False
    variant: str = "EBF"
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.half_width < 1:
            raise ValueError("half_width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.variant == "NN":
            if self.nn_widths[-1] != self.rotation_channels:
                raise ValueError("nn_widths must end at rotation_channels")
            if self.debias:
                raise ValueError("debias is only supported by the EBF/BF variants")
        else:
            if self.filter_widths[-1] != self.rotation_channels:
                raise ValueError("filter_widths must end at rotation_channels")
            if self.variant == "EBF" and not self.encoder_widths:
                raise ValueError("EBF variant needs at least one encoder layer")

    @property
    def input_width(self) -> int:
        return self.rotation_channels + 3

    @property
    def window_length(self) -> int:
        return 2 * self.half_width + 1


@dataclasses.dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def adam(self) -> ad.AdamSettings:
        return ad.AdamSettings(self.learning_rate, self.beta1, self.beta2, self.epsilon)


@dataclasses.dataclass(frozen=True)
class FilterParams:
    """Per-frame filter parameters: sigmas in frames, biases in degrees."""

    sigmas: np.ndarray
    biases: Optional[np.ndarray] = None

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if sigmas.ndim != 2:
            raise ValueError("sigmas must be a (T, C) matrix")
        if not np.all(np.isfinite(sigmas)) or np.any(sigmas <= 0):
            raise ValueError("sigmas must be strictly positive and finite")
        object.__setattr__(self, "sigmas", sigmas)
        if self.biases is not None:
            biases = np.asarray(self.biases, dtype=np.float64)
            if biases.shape != sigmas.shape:
                raise ValueError("biases must match the sigma matrix shape")
            object.__setattr__(self, "biases", biases)


@dataclasses.dataclass
class EbfModel:
    config: EbfConfig
    store: ad.ParamStore
    feature_mean: np.ndarray
    feature_std: np.ndarray
    metadata: dict


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def build_params(config: EbfConfig, rng: np.random.Generator) -> ad.ParamStore:
    """Create the named parameter tensors for one network.

    Dense weights are U(-0.5, 0.5); LSTM weights are N(0, 0.1^2) with a
    forget-gate bias of 1 for gradient flow over the window.
    """
    store = ad.ParamStore()
    channels = config.rotation_channels
    if config.variant == "NN":
        width = config.window_length * config.input_width
        for i, out_width in enumerate(config.nn_widths):
            store.add(f"nn{i}.w", rng.uniform(-0.5, 0.5, (width, out_width)))
            store.add(f"nn{i}.b", np.zeros(out_width))
            width = out_width
        return store

    width = config.input_width
    if config.variant == "EBF":
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
    head_widths = list(config.filter_widths)
    if config.debias:
        head_widths[-1] = 2 * channels
    for i, out_width in enumerate(head_widths):
        store.add(f"filt{i}.w", rng.uniform(-0.5, 0.5, (width, out_width)))
        store.add(f"filt{i}.b", np.zeros(out_width))
        width = out_width
    return store


def build_variant(config: EbfConfig) -> EbfModel:
    """Freshly initialized (untrained) model for the given variant config."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    store = build_params(config, rng)
    mean = np.zeros(config.input_width)
    std = np.ones(config.input_width)
    return EbfModel(config, store, mean, std, {"trained": False})


# ---------------------------------------------------------------------------
# Tape-graph forward (training and gradient checking)
# ---------------------------------------------------------------------------


def network_outputs(
    store: ad.ParamStore,
    config: EbfConfig,
    features_std: np.ndarray,
    training: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
) -> tuple[ad.Tensor, Optional[ad.Tensor]]:
    """Tape forward over standardized window features (W, B, F).

    Returns the per-channel sigma tensor (B, C) and, with debias enabled,
    the per-channel bias tensor.
    """
    window, batch, feat_width = features_std.shape
    if feat_width != config.input_width:
        raise ValueError(
            f"feature width {feat_width} does not match config "
            f"input width {config.input_width}"
        )
    channels = config.rotation_channels

    if config.variant == "NN":
        x = ad.Tensor(
            np.ascontiguousarray(features_std.transpose(1, 0, 2)).reshape(batch, -1)
        )
        last = len(config.nn_widths) - 1
        for i in range(len(config.nn_widths)):
            act = "exp" if i == last else "tanh"
            x = ad.dense(x, store[f"nn{i}.w"], store[f"nn{i}.b"], act)
        return x, None

    x = ad.Tensor(features_std.reshape(window * batch, feat_width))
    if config.variant == "EBF":
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
    x = x[config.half_width]
    n_head = len(config.filter_widths)
    for i in range(n_head - 1):
        x = ad.dense(x, store[f"filt{i}.w"], store[f"filt{i}.b"], "tanh")
    last = n_head - 1
    if config.debias:
        z = ad.dense(x, store[f"filt{last}.w"], store[f"filt{last}.b"], "identity")
        sig = ad.exp(z[:, :channels])
        bias = z[:, channels:]
        return sig, bias
    sig = ad.dense(x, store[f"filt{last}.w"], store[f"filt{last}.b"], "exp")
    return sig, None


def window_loss(
    store: ad.ParamStore,
    config: EbfConfig,
    features_std: np.ndarray,
    rot_window: np.ndarray,
    valid: np.ndarray,
    target: np.ndarray,
    training: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
) -> ad.Tensor:
    """L2 loss between adaptively filtered noisy windows and clean centers.

    ``rot_window`` (W, B, C) holds the noisy rotation samples, ``valid``
    (W, B, 1) zeroes weights for samples beyond the clip boundary, so boundary
    windows are truncated and renormalized exactly like inference.
    """
    sig, bias = network_outputs(store, config, features_std, training, dropout_rng)
    half = config.half_width
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    half_sq = (0.5 * offsets * offsets).reshape(-1, 1, 1)
    sig_sq = ad.reshape(ad.mul(sig, sig), (1,) + sig.data.shape)
    logits = ad.neg(ad.div(ad.Tensor(half_sq), sig_sq))
    unnorm = ad.mul(ad.exp(logits), ad.Tensor(valid))
    total = ad.tensor_sum(unnorm, axis=0, keepdims=True)
    weights = ad.div(unnorm, total)
    filtered = ad.tensor_sum(ad.mul(weights, ad.Tensor(rot_window)), axis=0)
    if bias is not None:
        filtered = ad.sub(filtered, bias)
    return ad.l2_loss(filtered, ad.Tensor(target))


# ---------------------------------------------------------------------------
# Adaptive filter application (shared by batch, stream and tests)
# ---------------------------------------------------------------------------


def filter_window(
    values: np.ndarray, offsets: np.ndarray, sigmas: np.ndarray,
    biases: Optional[np.ndarray],
) -> np.ndarray:
    """Weighted average of one truncated window under per-channel Gaussians.

    ``values`` is (L, C), ``offsets`` the signed frame distances (L,) with 0
    marking the output frame, ``sigmas`` (C,). Weights are normalized over
    the window, so they always form a convex combination.
    """
    logits = (-0.5 * offsets * offsets)[:, None] / (sigmas * sigmas)
    weights = np.exp(logits)
    weights /= weights.sum(axis=0)
    out = (weights * values).sum(axis=0)
    if biases is not None:
        out = out - biases
    return out


def apply_adaptive_filter(
    rotations: np.ndarray, params: FilterParams, half_width: int = 15
) -> np.ndarray:
    """Filter every frame of a (T, C) rotation matrix with its own Gaussians.

    Windows are truncated at the clip boundary and the weights renormalized.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    n_frames, channels = rotations.shape
    if params.sigmas.shape != (n_frames, channels):
        raise ValueError(
            f"filter params shape {params.sigmas.shape} does not match "
            f"rotations {rotations.shape}"
        )
    out = np.empty_like(rotations)
    for t in range(n_frames):
        lo = max(0, t - half_width)
        hi = min(n_frames - 1, t + half_width)
        offsets = np.arange(lo - t, hi - t + 1, dtype=np.float64)
        bias = params.biases[t] if params.biases is not None else None
        out[t] = filter_window(rotations[lo : hi + 1], offsets, params.sigmas[t], bias)
    return out


# ---------------------------------------------------------------------------
# Eval-mode fast path
# ---------------------------------------------------------------------------


class _Forward:
    """Single-window eval forward pass, shared by batch and stream paths.

    Operates on one window at a time with fixed small shapes so that the
    streaming and batch paths execute bit-identical float operations.
    """

    def __init__(self, model: EbfModel):
        self.config = model.config
        cfg = model.config
        store = model.store
        self.mean = model.feature_mean
        self.inv_std = 1.0 / np.maximum(model.feature_std, 1e-6)
        self.channels = cfg.rotation_channels
        var = cfg.variant
        if var == "NN":
            self.nn = [
                (store[f"nn{i}.w"].data, store[f"nn{i}.b"].data)
                for i in range(len(cfg.nn_widths))
            ]
            return
        self.encoder = []
        if var == "EBF":
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
        n_head = len(cfg.filter_widths)
        self.head = [
            (store[f"filt{i}.w"].data, store[f"filt{i}.b"].data) for i in range(n_head)
        ]

    def encode(self, feature_row: np.ndarray) -> np.ndarray:
        """Standardize one feature row and, for EBF, run the encoder."""
        x = ((feature_row - self.mean) * self.inv_std)[None, :]
        if self.config.variant == "EBF":
            for w, b in self.encoder:
                x = np.tanh(x @ w + b)
        return x[0]

    def window_params(
        self, codes: np.ndarray
    ) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Map one window of per-frame codes (W, width) to (sigmas, biases)."""
        cfg = self.config
        if cfg.variant == "NN":
            x = codes.reshape(1, -1)
            last = len(self.nn) - 1
            for i, (w, b) in enumerate(self.nn):
                x = x @ w + b
                x = np.exp(x) if i == last else np.tanh(x)
            return x[0], None
        x = codes
        for wx, bias, wh_pair in self.blstm:
            xp = x @ wx + bias
            gates = wx.shape[1] // 2
            x = _scan_bidirectional(xp[:, :gates], xp[:, gates:], wh_pair)
        x = x[cfg.half_width][None, :]
        last = len(self.head) - 1
        for i, (w, b) in enumerate(self.head):
            x = x @ w + b
            if i < last:
                x = np.tanh(x)
        if cfg.debias:
            return np.exp(x[0, : self.channels]), x[0, self.channels :]
        return np.exp(x[0]), None


def _scan_bidirectional(
    xp_f: np.ndarray, xp_b: np.ndarray, wh_pair: np.ndarray
) -> np.ndarray:
    """Both LSTM directions over one window, stepped in lockstep.

    The forward pass consumes step s while the backward pass consumes step
    W-1-s, so the two independent recurrences batch into one (2, .) update.
    ``xp_f``/``xp_b`` are (W, 4H) input projections with bias pre-folded;
    ``wh_pair`` is (2, H, 4H). Returns the concatenated hidden states (W, 2H).
    """
    steps, gates = xp_f.shape
    hidden = gates // 4
    sig = 3 * hidden
    xp = np.empty((steps, 2, gates))
    xp[:, 0, :] = xp_f
    xp[:, 1, :] = xp_b[::-1]
    h = np.zeros((2, 1, hidden))
    c = np.zeros((2, hidden))
    z = np.empty((2, gates))
    tmp = np.empty((2, hidden))
    out = np.empty((steps, 2, hidden))
    for s in range(steps):
        np.matmul(h, wh_pair, out=z[:, None, :])
        z += xp[s]
        zs = z[:, :sig]
        np.negative(zs, out=zs)
        np.exp(zs, out=zs)
        zs += 1.0
        np.reciprocal(zs, out=zs)
        gg = np.tanh(z[:, sig:])
        np.multiply(zs[:, hidden : 2 * hidden], c, out=c)
        np.multiply(zs[:, :hidden], gg, out=tmp)
        c += tmp
        np.tanh(c, out=tmp)
        np.multiply(zs[:, 2 * hidden : sig], tmp, out=h[:, 0, :])
        out[s] = h[:, 0, :]
    merged = np.empty((steps, 2 * hidden))
    merged[:, :hidden] = out[:, 0, :]
    merged[:, hidden:] = out[::-1, 1, :]
    return merged


def predict_filters(model: EbfModel, features: np.ndarray) -> FilterParams:
    """Per-frame filter parameters for a whole clip's features (T, F)."""
    features = np.asarray(features, dtype=np.float64)
    cfg = model.config
    if features.ndim != 2 or features.shape[1] != cfg.input_width:
        raise ValueError(
            f"features must be (T, {cfg.input_width}), got {features.shape}"
        )
    runner = _Forward(model)
    n_frames = features.shape[0]
    codes = [runner.encode(features[t]) for t in range(n_frames)]
    half = cfg.half_width
    sigmas = np.empty((n_frames, cfg.rotation_channels))
    biases = np.empty((n_frames, cfg.rotation_channels)) if cfg.debias else None
    for t in range(n_frames):
        idx = np.clip(np.arange(t - half, t + half + 1), 0, n_frames - 1)
        window_codes = np.stack([codes[i] for i in idx])
        sig, bias = runner.window_params(window_codes)
        sigmas[t] = sig
        if biases is not None:
            biases[t] = bias
    return FilterParams(sigmas, biases)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _dataset_features(dataset, layout: ChannelLayout):
    noisy_feats, noisy_rot, clean_rot = [], [], []
    for noisy, clean in dataset:
        if noisy.frames.shape != clean.frames.shape:
            raise ValueError("paired clips must have identical shapes")
        noisy_feats.append(compute_input_features(noisy, layout))
        noisy_rot.append(noisy.frames[:, layout.rotation])
        clean_rot.append(clean.frames[:, layout.rotation])
    return noisy_feats, noisy_rot, clean_rot


def _fingerprint(arrays: Iterable[np.ndarray]) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]


def gather_windows(
    series: list[np.ndarray], clip_ids: np.ndarray, centers: np.ndarray, half: int
):
    """Stack edge-replicated windows: returns (W, B, D) plus validity (W, B, 1)."""
    window = 2 * half + 1
    batch = len(clip_ids)
    width = series[0].shape[1]
    out = np.empty((window, batch, width))
    valid = np.empty((window, batch, 1))
    offsets = np.arange(-half, half + 1)
    for k, (ci, center) in enumerate(zip(clip_ids, centers)):
        data = series[ci]
        raw = center + offsets
        idx = np.clip(raw, 0, data.shape[0] - 1)
        out[:, k, :] = data[idx]
        valid[:, k, 0] = (raw >= 0) & (raw < data.shape[0])
    return out, valid


def train_ebf(
    dataset: list[tuple[MotionClip, MotionClip]],
    layout: ChannelLayout,
    config: EbfConfig = EbfConfig(),
    schedule: TrainSchedule = TrainSchedule(),
) -> EbfModel:
    """Train on (noisy, clean) clip pairs by minimizing the filtered-window L2.

    Batches sample 31-frame windows uniformly over all (clip, center frame)
    positions; one epoch is ceil(total frames / batch size) batches. Returns
    the frozen model with its loss curve in ``metadata``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if layout.n_rotations != config.rotation_channels:
        raise ValueError(
            f"layout provides {layout.n_rotations} rotation channels, "
            f"config expects {config.rotation_channels}"
        )
    noisy_feats, noisy_rot, clean_rot = _dataset_features(dataset, layout)

    stacked = np.concatenate(noisy_feats, axis=0)
    feature_mean = stacked.mean(axis=0)
    feature_std = stacked.std(axis=0)
    inv_std = 1.0 / np.maximum(feature_std, 1e-6)
    feats_std = [(f - feature_mean) * inv_std for f in noisy_feats]

    seq = np.random.SeedSequence(config.seed)
    init_rng, batch_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    store = build_params(config, init_rng)

    frame_counts = np.array([f.shape[0] for f in feats_std])
    cumulative = np.cumsum(frame_counts)
    total_frames = int(cumulative[-1])
    batches_per_epoch = max(1, int(np.ceil(total_frames / schedule.batch_size)))
    adam = schedule.adam()

    loss_curve = []
    for epoch in range(schedule.epochs):
        epoch_losses = np.empty(batches_per_epoch)
        for b in range(batches_per_epoch):
            flat = batch_rng.integers(0, total_frames, size=schedule.batch_size)
            clip_ids = np.searchsorted(cumulative, flat, side="right")
            centers = flat - (cumulative[clip_ids] - frame_counts[clip_ids])
            feat_win, valid = gather_windows(feats_std, clip_ids, centers, config.half_width)
            rot_win, _ = gather_windows(noisy_rot, clip_ids, centers, config.half_width)
            target = np.stack([clean_rot[ci][c] for ci, c in zip(clip_ids, centers)])
            loss = window_loss(
                store, config, feat_win, rot_win, valid, target,
                training=True, dropout_rng=dropout_rng,
            )
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {b}; "
                    f"last finite epoch losses: {loss_curve[-3:]}"
                )
            ad.backward(loss)
            ad.adam_step(store, adam)
            epoch_losses[b] = float(loss.data)
        loss_curve.append(float(epoch_losses.mean()))

    store.freeze()
    metadata = {
        "trained": True,
        "variant": config.variant,
        "epochs": schedule.epochs,
        "final_loss": loss_curve[-1] if loss_curve else None,
        "loss_curve": loss_curve,
        "data_fingerprint": _fingerprint(noisy_rot + clean_rot),
        "seed": config.seed,
    }
    return EbfModel(config, store, feature_mean, feature_std, metadata)


# ---------------------------------------------------------------------------
# Batch and streaming denoising
# ---------------------------------------------------------------------------


class StreamDenoiser:
    """Streaming sink: accepts raw channel rows, emits cleaned rows H frames late.

    ``push`` returns the rows that became available (at most one in steady
    state); ``close`` flushes the final lookahead region using edge
    replication, which makes a fully streamed clip bit-identical to
    :func:`denoise` on the same frames.
    """

    def __init__(self, model: EbfModel, layout: ChannelLayout):
        if layout.n_rotations != model.config.rotation_channels:
            raise ValueError("layout does not match the model's channel count")
        self.layout = layout
        self.half = model.config.half_width
        self._runner = _Forward(model)
        window = 2 * self.half + 1
        self._codes: deque[np.ndarray] = deque(maxlen=window)
        self._rot: deque[np.ndarray] = deque(maxlen=window)
        self._raw: deque[np.ndarray] = deque(maxlen=window)
        self._base = 0
        self._width = None
        self._prev_root: Optional[np.ndarray] = None
        self.frames_in = 0
        self.frames_out = 0
        self._closed = False

    def push(self, row: np.ndarray) -> list[np.ndarray]:
        if self._closed:
            raise RuntimeError("stream is closed")
        row = np.asarray(row, dtype=np.float64)
        if self._width is None:
            self._width = row.shape
        elif row.shape != self._width:
            raise ValueError(
                f"channel layout changed mid-stream: row width {row.shape} "
                f"!= {self._width}"
            )
        rot = row[self.layout.rotation]
        root = row[self.layout.root_rotation]
        if self._prev_root is None:
            velocity = np.zeros(3)
        else:
            delta = root - self._prev_root
            velocity = 180.0 - np.mod(180.0 - delta, 360.0)
        self._prev_root = root.copy()
        feature = np.concatenate([rot, velocity])
        if len(self._codes) == self._codes.maxlen:
            self._base += 1
        self._codes.append(self._runner.encode(feature))
        self._rot.append(rot)
        self._raw.append(row.copy())
        self.frames_in += 1

        emitted = []
        while self.frames_out + self.half <= self.frames_in - 1:
            emitted.append(self._emit(self.frames_out))
        return emitted

    def close(self) -> list[np.ndarray]:
        """Flush pending frames; lookahead beyond the last frame is replicated."""
        self._closed = True
        emitted = []
        while self.frames_out < self.frames_in:
            emitted.append(self._emit(self.frames_out))
        return emitted

    def _emit(self, t: int) -> np.ndarray:
        half = self.half
        last = self.frames_in - 1
        idx = np.clip(np.arange(t - half, t + half + 1), 0, last)
        window_codes = np.stack([self._codes[i - self._base] for i in idx])
        sig, bias = self._runner.window_params(window_codes)
        lo = max(0, t - half)
        hi = min(last, t + half)
        offsets = np.arange(lo - t, hi - t + 1, dtype=np.float64)
        values = np.stack([self._rot[i - self._base] for i in range(lo, hi + 1)])
        cleaned = filter_window(values, offsets, sig, bias)
        out = self._raw[t - self._base].copy()
        out[self.layout.rotation] = cleaned
        self.frames_out += 1
        return out


def denoise_stream(
    model: EbfModel, layout: ChannelLayout, frames: Iterable[np.ndarray]
) -> Iterator[np.ndarray]:
    """Generator form of the streaming sink: yields cleaned rows H frames late."""
    stream = StreamDenoiser(model, layout)
    for row in frames:
        yield from stream.push(row)
    yield from stream.close()


def denoise(model: EbfModel, clip: MotionClip, layout: ChannelLayout) -> MotionClip:
    """Batch denoising; routed through the streaming engine so that the two
    paths are bit-identical by construction."""
    rows = list(denoise_stream(model, layout, clip.frames))
    return clip.with_frames(np.stack(rows))


def stream_timing(
    model: EbfModel, layout: ChannelLayout, clip: MotionClip
) -> dict[str, float]:
    """Per-frame wall-clock stats of the streaming path over a clip."""
    stream = StreamDenoiser(model, layout)
    times = []
    for row in clip.frames:
        start = time.perf_counter()
        stream.push(row)
        times.append(time.perf_counter() - start)
    start = time.perf_counter()
    stream.close()
    close_time = time.perf_counter() - start
    # Warmup frames do no window work; steady-state cost is what matters.
    steady = np.array(times[model.config.half_width + 1 :])
    return {
        "frames": float(len(times)),
        "mean_ms": float(steady.mean() * 1e3),
        "median_ms": float(np.median(steady) * 1e3),
        "p95_ms": float(np.percentile(steady, 95) * 1e3),
        "close_ms": float(close_time * 1e3),
    }
