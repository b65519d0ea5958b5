"""Gap filling: context prediction, masked training and the denoise baseline."""

import numpy as np
import pytest

from mocapclean import autodiff as ad
from mocapclean.bvh import MotionClip
from mocapclean.corruption import (
    AngularGaussianNoise,
    GapSpec,
    apply_channel_noise,
    lerp_fill,
    synth_gaps,
)
from mocapclean.ebd import (
    EbdConfig,
    EbdModel,
    build_params,
    denoise_with_ebd,
    fill_gaps,
    predict_frame,
    train_ebd,
)
from mocapclean.ebf import TrainSchedule
from mocapclean.features import ChannelLayout, compute_input_features
from mocapclean.synthetic import desk_skeleton, make_motion

from conftest import GOLDEN

SMALL = EbdConfig(
    rotation_channels=126,
    encoder_widths=(48, 32),
    blstm_hidden=8,
    blstm_layers=2,
    decoder_widths=(40, 126),
    seed=7,
)


def fresh_model(config: EbdConfig = SMALL) -> EbdModel:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    return EbdModel(config, build_params(config, rng), np.zeros(129), np.ones(129), {})


@pytest.fixture(scope="module")
def layout():
    return ChannelLayout.from_skeleton(desk_skeleton())


@pytest.fixture(scope="module")
def gap_trained(layout):
    clips = [make_motion("walk", 60 + i, 300) for i in range(3)]

    def resample(epoch):
        # fresh noise and gap draws each epoch so every channel gets masked
        triples = []
        for i, clip in enumerate(clips):
            seed = 50 + 100 * epoch + i
            noisy = apply_channel_noise(clip, layout, AngularGaussianNoise(0.3, seed=seed))
            mask = synth_gaps(
                300,
                GapSpec(start_probability=0.6, mean_length=25, min_length=5, max_length=80, seed=seed + 1),
                126,
            )
            triples.append((clip, noisy, mask))
        return triples

    model = train_ebd([], layout, SMALL, TrainSchedule(epochs=8, batch_size=32), resample=resample)
    return model, resample(0)


class TestConfig:
    def test_decoder_must_end_at_channels(self):
        with pytest.raises(ValueError, match="rotation_channels"):
            EbdConfig(decoder_widths=(80, 96, 112, 120))

    def test_stride_positive(self):
        with pytest.raises(ValueError, match="stride"):
            EbdConfig(stride=0)

    def test_default_context_covers_sixty_frames(self):
        config = EbdConfig()
        assert config.context_half_steps * config.stride == 60
        assert config.context_steps == 31


class TestPredictFrame:
    def test_output_width_and_determinism(self, rng):
        model = fresh_model()
        features = rng.standard_normal((150, 129))
        a = predict_frame(model, features, 75)
        b = predict_frame(model, features, 75)
        assert a.shape == (126,)
        assert np.array_equal(a, b)

    def test_bounded_receptive_field(self, rng):
        model = fresh_model()
        features = rng.standard_normal((300, 129))
        base = predict_frame(model, features, 150)
        far = features.copy()
        far[150 + 61 :] += 100.0  # beyond the +60-frame context
        far[: 150 - 61] -= 100.0
        assert np.array_equal(predict_frame(model, far, 150), base)
        near = features.copy()
        near[150 + 60] += 1.0  # the outermost context step
        assert not np.array_equal(predict_frame(model, near, 150), base)

    def test_shift_equivariance_stride_aligned(self, rng):
        model = fresh_model()
        features = rng.standard_normal((400, 129))
        shift = model.config.stride
        shifted = np.roll(features, -shift, axis=0)
        a = predict_frame(model, features, 200 + shift)
        b = predict_frame(model, shifted, 200)
        assert np.allclose(a, b, atol=1e-12)

    def test_golden_regression(self):
        model = fresh_model()
        features = np.load(GOLDEN / "ebd_features.npy")
        expected = np.load(GOLDEN / "ebd_pred.npy")
        got = np.stack([predict_frame(model, features, t) for t in (0, 70, 139)])
        assert np.allclose(got, expected, rtol=1e-12, atol=1e-14)


class TestFillGaps:
    def test_empty_mask_is_identity(self, layout):
        model = fresh_model()
        clip = make_motion("walk", 5, 100)
        mask = np.zeros((100, 126), dtype=bool)
        out = fill_gaps(model, clip, mask, layout)
        assert np.array_equal(out.frames, clip.frames)

    def test_unmasked_samples_bit_identical(self, layout, rng):
        model = fresh_model()
        clip = make_motion("jog", 6, 200)
        mask = synth_gaps(200, GapSpec(start_probability=0.3, mean_length=20, seed=3), 126)
        out = fill_gaps(model, clip, mask, layout)
        keep = ~mask
        rot = layout.rotation
        assert np.array_equal(out.frames[:, rot][keep], clip.frames[:, rot][keep])
        assert np.array_equal(out.frames[:, layout.root_rotation], clip.frames[:, layout.root_rotation])

    def test_masked_output_independent_of_hidden_values(self, layout):
        model = fresh_model()
        clip = make_motion("walk", 7, 150)
        mask = synth_gaps(150, GapSpec(start_probability=0.4, mean_length=15, seed=9), 126)
        frames2 = clip.frames.copy()
        rot_cols = layout.rotation
        # scramble the values hidden under the mask
        scrambled = frames2[:, rot_cols]
        scrambled[mask] = 999.0
        frames2[:, rot_cols] = scrambled
        clip2 = MotionClip(clip.frame_time, frames2)
        a = fill_gaps(model, clip, mask, layout)
        b = fill_gaps(model, clip2, mask, layout)
        assert np.array_equal(a.frames[:, rot_cols][mask], b.frames[:, rot_cols][mask])

    def test_mask_shape_validated(self, layout):
        model = fresh_model()
        clip = make_motion("walk", 5, 100)
        with pytest.raises(ValueError, match="mask shape"):
            fill_gaps(model, clip, np.zeros((99, 126), dtype=bool), layout)


class TestTraining:
    def test_no_masked_frames_rejected(self, layout):
        clip = make_motion("walk", 1, 100)
        mask = np.zeros((100, 126), dtype=bool)
        with pytest.raises(ValueError, match="no masked frames"):
            train_ebd([(clip, clip, mask)], layout, SMALL, TrainSchedule(epochs=1))

    def test_loss_decreases_on_toy_dataset(self, gap_trained):
        model, _ = gap_trained
        curve = model.metadata["loss_curve"]
        assert curve[-1] < curve[0] * 0.7

    def test_fill_beats_lerp_on_heldout_gaps(self, gap_trained, layout):
        model, _ = gap_trained
        clip = make_motion("walk", 999, 300)
        noisy = apply_channel_noise(clip, layout, AngularGaussianNoise(0.3, seed=77))
        mask = synth_gaps(
            300, GapSpec(start_probability=0.5, mean_length=30, min_length=10, max_length=80, seed=88), 126
        )
        filled = fill_gaps(model, noisy, mask, layout)
        lerped = lerp_fill(noisy, mask, layout)
        rot = layout.rotation
        rms_net = np.sqrt(np.mean((filled.frames[:, rot][mask] - clip.frames[:, rot][mask]) ** 2))
        rms_lerp = np.sqrt(np.mean((lerped.frames[:, rot][mask] - clip.frames[:, rot][mask]) ** 2))
        assert rms_net < rms_lerp

    def test_resample_callback_used(self, layout):
        calls = []

        def resample(epoch):
            calls.append(epoch)
            clip = make_motion("walk", 40 + epoch, 150)
            mask = synth_gaps(150, GapSpec(start_probability=0.5, mean_length=10, seed=epoch), 126)
            return [(clip, clip, mask)]

        train_ebd([], layout, SMALL, TrainSchedule(epochs=3, batch_size=16), resample=resample)
        assert calls == [0, 1, 2]

    def test_denoiser_mode_trains_without_masks(self, layout):
        clip = make_motion("walk", 2, 150)
        noisy = apply_channel_noise(clip, layout, AngularGaussianNoise(0.5, seed=1))
        model = train_ebd([(clip, noisy, None)], layout, SMALL, TrainSchedule(epochs=2, batch_size=16))
        assert model.metadata["masked_loss"] is False


class TestDenoiseBaseline:
    def test_output_shape_and_determinism(self, layout):
        model = fresh_model()
        clip = make_motion("run", 3, 80)
        a = denoise_with_ebd(model, clip, layout)
        b = denoise_with_ebd(model, clip, layout)
        assert a.frames.shape == clip.frames.shape
        assert np.array_equal(a.frames, b.frames)
        # every rotation channel replaced, root untouched
        assert np.array_equal(a.frames[:, layout.root_position], clip.frames[:, layout.root_position])
        assert not np.array_equal(a.frames[:, layout.rotation], clip.frames[:, layout.rotation])
