import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magloc.data import SynthConfig, Trial, synth_generate
from magloc.errors import ContractError, DataError
from magloc.features import (
    ChannelStats,
    WindowSet,
    estimate_gravity,
    invariant_features,
    load_windows,
    make_windows,
    save_windows,
    standardize,
    window_count,
    windows_for,
)
from magloc.geometry import Rotation, quat_from_euler, rotate_vectors, sample_schedule
from magloc.perturb import rotate_trial


@pytest.fixture(scope="module")
def trial():
    return synth_generate(SynthConfig(trial_count=1, waypoint_count=6)).trials[0]


def random_rotations(rng, n):
    return [Rotation.from_quaternion(q) for q in rng.normal(size=(n, 4))]


def angle_between(a, b):
    cos = np.sum(a * b, axis=-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1, 1)))


class TestGravity:
    def test_static_device(self):
        est = estimate_gravity(np.tile([0, 0, -9.81], (50, 1)))
        np.testing.assert_allclose(est.g, np.tile([0, 0, 1.0], (50, 1)), atol=1e-12)

    def test_equivariant_under_fixed_rotation(self):
        rng = np.random.default_rng(0)
        acc = np.array([0, 0, -9.81]) + rng.normal(scale=0.5, size=(300, 3))
        r = Rotation.from_axis_angle([1, 0, 0], 88)
        g = estimate_gravity(acc).g
        g_rot = estimate_gravity(r.apply(acc)).g
        np.testing.assert_allclose(g_rot, r.apply(g), atol=1e-6)

    def test_ema_converges(self):
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            acc = np.array([0, 0, -9.81]) + rng.normal(scale=0.5, size=(200, 3))
            g = estimate_gravity(acc, alpha=0.02).g
            worst = max(worst, angle_between(g[100:], np.array([0, 0, 1.0])).max())
        assert worst < 2.0

    def test_ema_recurrence(self):
        rng = np.random.default_rng(3)
        acc = rng.normal(size=(40, 3)) + [0, 0, -9.81]
        v = acc[0].copy()
        expected = [-v / np.linalg.norm(v)]
        for a in acc[1:]:
            v = 0.1 * a + 0.9 * v
            expected.append(-v / np.linalg.norm(v))
        np.testing.assert_allclose(estimate_gravity(acc, alpha=0.1).g, expected, atol=1e-12)

    def test_free_fall_flagged_and_held(self):
        acc = np.tile([0, 0, -9.81], (10, 1)).astype(float)
        acc[5] = [0.1, 0, 0]
        est = estimate_gravity(acc, alpha=1.0)
        assert list(est.flagged) == [5]
        np.testing.assert_array_equal(est.g[5], est.g[4])

    def test_unit_norm(self, trial):
        g = estimate_gravity(trial.acc, 0.02).g
        np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)

    def test_zero_first_sample_rejected(self):
        with pytest.raises(ContractError):
            estimate_gravity(np.zeros((3, 3)))


class TestInvariantFeatures:
    def test_three_four_five(self):
        assert invariant_features([3, 4, 0], [0, 0, 1])[0] == 5

    def test_aligned(self):
        mn, mg = invariant_features([0, 0, 50], [0, 0, 1])
        assert (mn, mg) == (50, 50)

    def test_random_rotations(self):
        rng = np.random.default_rng(1)
        for r in random_rotations(rng, 1000):
            mag = rng.normal(scale=40, size=3)
            g = rng.normal(size=3)
            g /= np.linalg.norm(g)
            np.testing.assert_allclose(invariant_features(r.apply(mag), r.apply(g)), invariant_features(mag, g), atol=1e-5)


class TestWindows:
    def test_boundary_single_window(self, trial):
        short = Trial("b", "x", trial.t[:200], trial.mag[:200], trial.acc[:200], trial.pos[:200])
        ws = make_windows(short, "raw3d")
        assert len(ws) == 1
        np.testing.assert_array_equal(ws.y[0], short.pos[199, :2])

    @pytest.mark.parametrize("stride,count", [(1, 801), (10, 81)])
    def test_count(self, trial, stride, count):
        t = trial
        n1000 = Trial("b", "x", t.t[:1000], t.mag[:1000], t.acc[:1000], t.pos[:1000])
        assert len(make_windows(n1000, "inv2d", stride=stride)) == count == window_count(1000, 200, stride)

    def test_short_trial_empty(self, trial):
        short = Trial("b", "x", trial.t[:50], trial.mag[:50], trial.acc[:50], trial.pos[:50])
        ws = make_windows(short, "raw3d")
        assert len(ws) == 0 and ws.x.shape == (0, 3, 200)

    def test_target_alignment_exact(self, trial):
        ws = make_windows(trial, "raw3d", stride=7)
        for i in range(len(ws)):
            start = i * 7
            np.testing.assert_array_equal(ws.y[i], trial.pos[start + 199, :2])
            np.testing.assert_array_equal(ws.x[i], trial.mag[start : start + 200].T.astype(np.float32))

    def test_channels(self, trial):
        assert make_windows(trial, "raw3d", stride=50).x.shape[1] == 3
        assert make_windows(trial, "inv2d", stride=50).x.shape[1] == 2

    def test_unknown_mode(self, trial):
        with pytest.raises(ContractError):
            make_windows(trial, "raw6d")

    @pytest.mark.parametrize("sigma", [0.0, 5.0, 20.0, 88.0])
    def test_inv2d_invariant_under_joint_schedule(self, trial, sigma):
        sched = sample_schedule(sigma, 1.0, trial.duration, seed=int(sigma) + 1)
        rotated = rotate_trial(trial, quat_from_euler(sched.angles_at(trial.t - trial.t[0])))
        a = make_windows(trial, "inv2d", stride=5).x
        b = make_windows(rotated, "inv2d", stride=5).x
        assert np.max(np.abs(a - b)) <= 1e-5

    def test_raw3d_equivariant(self, trial):
        sched = sample_schedule(20.0, 1.0, trial.duration, seed=3)
        q = quat_from_euler(sched.angles_at(trial.t - trial.t[0]))
        rotated = make_windows(rotate_trial(trial, q), "raw3d", stride=5)
        base = make_windows(trial, "raw3d", stride=5)
        for i in range(0, len(base), 13):
            idx = np.arange(i * 5, i * 5 + 200)
            expected = rotate_vectors(q[idx], base.x[i].T.astype(np.float64)).T
            assert np.max(np.abs(rotated.x[i] - expected)) <= 1e-5

    def test_mag_only_rotation_breaks_invariance(self, trial):
        sched = sample_schedule(20.0, 1.0, trial.duration, seed=8)
        q = quat_from_euler(sched.angles_at(trial.t - trial.t[0]))
        a = make_windows(trial, "inv2d", stride=5).x
        b = make_windows(rotate_trial(trial, q, streams=("mag",)), "inv2d", stride=5).x
        assert np.max(np.abs(a - b)) > 1e-5


class TestStandardize:
    def test_zero_variance_rejected(self):
        x = np.ones((4, 2, 10), np.float32)
        x[:, 1] = np.arange(10)
        x[0, 1, 0] = 100
        ws = WindowSet("inv2d", x, np.zeros((4, 2)), np.array(["a"] * 4, dtype=object), np.arange(4), "b", 10)
        with pytest.raises(DataError, match="zero variance.*M_n"):
            standardize(ws)

    def test_moments_after_standardizing(self, trial):
        ws, stats = standardize(windows_for([trial], "raw3d", stride=10))
        x = ws.x.astype(np.float64)
        np.testing.assert_allclose(x.mean(axis=(0, 2)), 0.0, atol=1e-5)
        np.testing.assert_allclose(x.std(axis=(0, 2)), 1.0, atol=1e-4)

    def test_train_stats_on_identical_set(self, trial):
        ws = windows_for([trial], "inv2d", stride=10)
        a, stats = standardize(ws)
        b, _ = standardize(ws, stats)
        np.testing.assert_array_equal(a.x, b.x)

    def test_stats_roundtrip(self, trial):
        stats = ChannelStats.fit(windows_for([trial], "inv2d", stride=10))
        assert ChannelStats.from_dict(stats.to_dict()) == stats

    def test_window_file_roundtrip(self, trial, tmp_path):
        ws = windows_for([trial], "inv2d", stride=25)
        stats = ChannelStats.fit(ws)
        save_windows(ws, tmp_path / "w.bin", stats)
        back, st2 = load_windows(tmp_path / "w.bin")
        np.testing.assert_array_equal(back.x, ws.x)
        np.testing.assert_array_equal(back.y, ws.y)
        assert back.digest() == ws.digest() and st2 == stats


class TestInvarianceProperty:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 180), st.floats(-90, 90), st.floats(-180, 180))
    def test_any_fixed_joint_rotation(self, roll, pitch, yaw):
        rng = np.random.default_rng(0)
        n = 260
        t = np.arange(n) / 50.0
        tr = Trial("b", "x", t, rng.normal(scale=30, size=(n, 3)), rng.normal(size=(n, 3)) + [0, 0, -9.81], rng.normal(size=(n, 3)))
        q = quat_from_euler([roll, pitch, yaw])
        a = make_windows(tr, "inv2d", stride=20).x
        b = make_windows(rotate_trial(tr, q), "inv2d", stride=20).x
        assert np.max(np.abs(a - b)) <= 1e-5
