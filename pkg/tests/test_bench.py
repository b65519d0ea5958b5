"""Baselines, metrics, holdout plans and the benchmark runner."""

import numpy as np
import pytest

from mocapclean.bench import (
    Corruption,
    corrupt_motion,
    DEFAULT_COMPOSITION,
    fixed_gaussian_method,
    gaussian_smooth_fixed,
    identity_method,
    leave_one_action_out,
    make_holdouts,
    masked_rms,
    rms_avg,
    rms_curve,
    run_benchmark,
)
from mocapclean.bvh import MotionClip
from mocapclean.corruption import AngularGaussianNoise, GapSpec
from mocapclean.features import ChannelLayout
from mocapclean.synthetic import Motion, desk_skeleton, make_motion, make_pool


@pytest.fixture(scope="module")
def layout():
    return ChannelLayout.from_skeleton(desk_skeleton())


@pytest.fixture(scope="module")
def small_pool():
    return make_pool({"walk": 2, "jog": 1, "run": 1, "jump": 1, "kick": 1}, seed=21, n_frames=120)


class TestGaussianSmoothFixed:
    def test_constant_channels_unchanged(self, layout):
        frames = np.tile(np.arange(132.0), (50, 1))
        clip = MotionClip(1 / 120, frames)
        out = gaussian_smooth_fixed(clip, 58, layout)
        assert np.allclose(out.frames, frames, atol=1e-12)

    def test_sigma_frames_conversion(self):
        # 58 ms at 120 fps is 6.96 frames; check through the impulse response
        sigma_frames = 58 * 120 / 1000
        assert sigma_frames == pytest.approx(6.96)

    def test_impulse_response_is_normalized_kernel(self, layout):
        frames = np.zeros((101, 132))
        col = layout.rotation[7]
        frames[50, col] = 1.0
        out = gaussian_smooth_fixed(MotionClip(1 / 120, frames), 58, layout)
        sigma = 6.96
        radius = int(np.floor(3 * sigma))
        offsets = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
        kernel /= kernel.sum()
        assert np.allclose(out.frames[50 - radius : 50 + radius + 1, col], kernel, atol=1e-12)
        assert out.frames[50 - radius - 1, col] == 0.0

    def test_commutes_with_time_reversal_interior(self, layout, rng):
        frames = rng.standard_normal((200, 132)) * 10
        clip = MotionClip(1 / 120, frames)
        fwd = gaussian_smooth_fixed(clip, 58, layout).frames
        rev = gaussian_smooth_fixed(MotionClip(1 / 120, frames[::-1]), 58, layout).frames
        assert np.allclose(fwd[30:-30], rev[::-1][30:-30], atol=1e-10)

    def test_root_untouched(self, layout, walk_clip):
        out = gaussian_smooth_fixed(walk_clip, 125, layout)
        assert np.array_equal(out.frames[:, layout.root_rotation], walk_clip.frames[:, layout.root_rotation])

    def test_nonpositive_sigma_rejected(self, layout, walk_clip):
        with pytest.raises(ValueError, match="positive"):
            gaussian_smooth_fixed(walk_clip, 0.0, layout)


class TestRmsMetrics:
    def test_identical_zero(self, layout, walk_clip):
        curve = rms_curve(walk_clip, walk_clip, layout)
        assert np.array_equal(curve, np.zeros(walk_clip.n_frames))
        assert rms_avg(walk_clip, walk_clip, layout) == 0.0

    def test_uniform_offset(self, layout, walk_clip):
        frames = walk_clip.frames.copy()
        frames[:, layout.rotation] += 2.5
        shifted = MotionClip(walk_clip.frame_time, frames)
        curve = rms_curve(walk_clip, shifted, layout)
        assert np.allclose(curve, 2.5, atol=1e-12)
        assert rms_avg(walk_clip, shifted, layout) == pytest.approx(2.5)

    def test_matches_brute_force(self, layout, rng):
        a = MotionClip(1 / 120, rng.standard_normal((40, 132)))
        b = MotionClip(1 / 120, rng.standard_normal((40, 132)))
        curve = rms_curve(a, b, layout)
        for t in (0, 13, 39):
            total = 0.0
            for col in layout.rotation:
                total += (a.frames[t, col] - b.frames[t, col]) ** 2
            assert curve[t] == pytest.approx(np.sqrt(total / 126), abs=1e-12)

    def test_symmetry(self, layout, rng):
        a = MotionClip(1 / 120, rng.standard_normal((30, 132)))
        b = MotionClip(1 / 120, rng.standard_normal((30, 132)))
        assert rms_avg(a, b, layout) == rms_avg(b, a, layout)

    def test_masked_rms(self, layout):
        a = MotionClip(1 / 120, np.zeros((10, 132)))
        frames = np.zeros((10, 132))
        frames[:, layout.rotation[0]] = 3.0
        b = MotionClip(1 / 120, frames)
        mask = np.zeros((10, 126), dtype=bool)
        mask[:5, 0] = True
        assert masked_rms(a, b, mask, layout) == pytest.approx(3.0)
        assert masked_rms(a, b, np.zeros_like(mask), layout) == 0.0


class TestHoldouts:
    def test_exact_pool_single_holdout(self):
        pool = [(f"m{i}", label) for i, label in enumerate(
            ["walk"] * 4 + ["jog"] * 2 + ["run"] * 2 + ["jump"] + ["kick"]
        )]
        plan = make_holdouts(pool, DEFAULT_COMPOSITION, n_holdouts=1, seed=0)
        assert sorted(plan.holdouts[0]) == sorted(m for m, _ in pool)
        assert not plan.scaled

    def test_seed_determinism(self):
        pool = [(f"m{i}", "walk") for i in range(30)]
        a = make_holdouts(pool, {"walk": 4}, n_holdouts=3, seed=5)
        b = make_holdouts(pool, {"walk": 4}, n_holdouts=3, seed=5)
        assert a == b

    def test_composition_satisfied_large_pool(self):
        pool = []
        for label, count in (("walk", 40), ("jog", 20), ("run", 20), ("jump", 10), ("kick", 10)):
            pool += [(f"{label}{i}", label) for i in range(count)]
        plan = make_holdouts(pool, DEFAULT_COMPOSITION, n_holdouts=5, seed=3)
        for holdout in plan.holdouts:
            labels = [m.rstrip("0123456789") for m in holdout]
            assert len(holdout) == 10
            assert len(set(holdout)) == 10  # no duplicates within a holdout
            for label, want in DEFAULT_COMPOSITION.items():
                assert labels.count(label) == want

    def test_composition_scaled_when_pool_short(self):
        pool = [("w1", "walk"), ("w2", "walk"), ("j1", "jog"), ("r1", "run"),
                ("u1", "jump"), ("k1", "kick")]
        plan = make_holdouts(pool, DEFAULT_COMPOSITION, n_holdouts=2, seed=1)
        assert plan.scaled
        assert all(len(h) >= 5 for h in plan.holdouts)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            make_holdouts([], DEFAULT_COMPOSITION)

    def test_leave_one_action_out(self, small_pool):
        plan = leave_one_action_out([(m.motion_id, m.label) for m in small_pool])
        assert len(plan.holdouts) == 5
        all_ids = sorted(i for h in plan.holdouts for i in h)
        assert all_ids == sorted(m.motion_id for m in small_pool)


class TestRunBenchmark:
    def test_identity_on_clean_is_zero(self, layout, small_pool):
        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1, "jog": 1}, n_holdouts=1, seed=2)
        report = run_benchmark(
            small_pool, layout, {"identity": identity_method()},
            Corruption(None, None), plan, repeats=1, seed=0,
        )
        assert report.grand_average("identity") == 0.0
        for cell in report.cells:
            assert np.array_equal(cell.curve, np.zeros_like(cell.curve))

    def test_reproducible(self, layout, small_pool):
        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1}, n_holdouts=1, seed=2)
        kwargs = dict(
            motions=small_pool, layout=layout,
            methods={"g58": fixed_gaussian_method(58)},
            corruption=Corruption(AngularGaussianNoise(0.5)),
            plan=plan, repeats=2, seed=9,
        )
        a = run_benchmark(**kwargs)
        b = run_benchmark(**kwargs)
        assert a.summary_csv() == b.summary_csv()
        assert a.curves_csv() == b.curves_csv()

    def test_same_corrupted_input_for_all_methods(self, layout, small_pool):
        seen = {}

        def recorder(name):
            def factory(train, layout_):
                def cleaner(clip, mask=None):
                    seen.setdefault(name, []).append(clip.frames.copy())
                    return clip
                return cleaner
            return factory

        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1}, n_holdouts=1, seed=2)
        run_benchmark(
            small_pool, layout, {"a": recorder("a"), "b": recorder("b")},
            Corruption(AngularGaussianNoise(0.5)), plan, repeats=2, seed=1,
        )
        for x, y in zip(seen["a"], seen["b"]):
            assert np.array_equal(x, y)

    def test_gauss58_beats_gauss125_on_half_noise(self, layout):
        pool = make_pool({"walk": 2, "jog": 2, "run": 2}, seed=31, n_frames=200)
        plan = make_holdouts([(m.motion_id, m.label) for m in pool],
                             {"walk": 1, "jog": 1, "run": 1}, n_holdouts=1, seed=4)
        report = run_benchmark(
            pool, layout,
            {"g58": fixed_gaussian_method(58), "g125": fixed_gaussian_method(125)},
            Corruption(AngularGaussianNoise(0.5)), plan, repeats=2, seed=5,
        )
        assert report.grand_average("g58") < report.grand_average("g125")

    def test_method_failure_recorded(self, layout, small_pool):
        def broken(train, layout_):
            def cleaner(clip, mask=None):
                raise RuntimeError("boom")
            return cleaner

        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1}, n_holdouts=1, seed=2)
        report = run_benchmark(
            small_pool, layout, {"broken": lambda tr, lo: broken(tr, lo)},
            Corruption(AngularGaussianNoise(0.5)), plan, repeats=1, seed=1,
        )
        assert all(c.error == "boom" and c.rms_avg is None for c in report.cells)
        with pytest.raises(ValueError, match="no successful"):
            report.grand_average("broken")

    def test_gap_benchmark_records_masked_rms(self, layout, small_pool):
        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1}, n_holdouts=1, seed=2)
        report = run_benchmark(
            small_pool, layout, {"g58": fixed_gaussian_method(58)},
            Corruption(AngularGaussianNoise(0.3), GapSpec(start_probability=0.4, mean_length=10, seed=1)),
            plan, repeats=1, seed=1,
        )
        assert all(c.masked_rms is not None for c in report.cells)
        assert report.masked_average("g58") > 0

    def test_csv_and_write(self, layout, small_pool, tmp_path):
        plan = make_holdouts([(m.motion_id, m.label) for m in small_pool],
                             {"walk": 1}, n_holdouts=1, seed=2)
        report = run_benchmark(
            small_pool, layout, {"g58": fixed_gaussian_method(58)},
            Corruption(AngularGaussianNoise(0.5)), plan, repeats=1, seed=1,
        )
        header = report.summary_csv().splitlines()[0]
        assert header == "holdout,motion,label,method,repeat,rms_avg,masked_rms,error"
        assert report.curves_csv().splitlines()[0] == "holdout,motion,method,repeat,frame,rms"
        report.write(tmp_path / "out")
        for name in ("summary.csv", "curves.csv", "metadata.json"):
            assert (tmp_path / "out" / name).exists()

    def test_corrupt_motion_derives_distinct_seeds(self, layout, small_pool):
        motion = small_pool[0]
        a, _ = corrupt_motion(motion, Corruption(AngularGaussianNoise(0.5)), layout, 1)
        b, _ = corrupt_motion(motion, Corruption(AngularGaussianNoise(0.5)), layout, 2)
        c, _ = corrupt_motion(motion, Corruption(AngularGaussianNoise(0.5)), layout, 1)
        assert not np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.frames, c.frames)
