import csv
import math
import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magloc.data import SynthConfig, synth_generate
from magloc.errors import ConfigError, ContractError, DataError
from magloc.evalkit import (
    SweepResult,
    emit_report,
    evaluate,
    find_threshold,
    mae,
    read_sweep_csv,
    sweep,
    sweep_svg,
)
from magloc.features import ChannelStats, windows_for
from magloc.magnet import MagNetConfig, build
from magloc.perturb import Scenario
from magloc.trainer import SplitSpec, split


class TestMae:
    def test_identical(self):
        p = np.random.default_rng(0).normal(size=(10, 2))
        assert mae(p, p) == 0.0

    def test_three_four_five_offset(self):
        t = np.random.default_rng(1).normal(size=(50, 2))
        assert mae(t + [3.0, 4.0], t) == pytest.approx(5.0, abs=1e-12)

    def test_recomputation_oracle(self):
        rng = np.random.default_rng(2)
        p, t = rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))
        expected = sum(math.dist(a, b) for a, b in zip(p, t)) / 1000
        assert mae(p, t) == pytest.approx(expected, abs=1e-9)

    def test_per_coordinate_variant(self):
        assert mae([[3.0, 4.0]], [[0.0, 0.0]], per_coordinate=True) == 3.5

    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_uniform_offset_detected(self, dx, dy):
        t = np.zeros((7, 2))
        assert mae(t + [dx, dy], t) == pytest.approx(math.hypot(dx, dy), rel=1e-12, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ContractError):
            mae(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ContractError):
            mae(np.zeros((0, 2)), np.zeros((0, 2)))


class TestThreshold:
    def test_loomis_case_is_zero(self):
        sig = [float(s) for s in range(21)]
        res = find_threshold(sig, [1.96 + 0.1 * s for s in sig], [1.46] * 21, "Loomis")
        assert res.threshold_deg == 0.0 and res.mae3d == 1.96 and res.mae2d == 1.46

    def test_analytic_crossing(self):
        sig = [float(s) for s in range(9)]
        res = find_threshold(sig, [1.0 + s / 8 for s in sig], [1.61] * 9)
        assert res.threshold_deg == pytest.approx(4.88, abs=0.01)
        assert res.mae3d == pytest.approx(1.61) and res.mae2d == pytest.approx(1.61)

    def test_no_crossing(self):
        res = find_threshold([0, 5, 10], [1, 1.1, 1.2], [2, 2, 2])
        assert res.threshold_deg is None and not res.found

    @given(st.floats(0.1, 5), st.floats(0.05, 2), st.floats(0.1, 19.9))
    def test_piecewise_linear_crossing(self, base, slope, crossing):
        sig = np.arange(21.0)
        three = base + slope * (sig - crossing)
        res = find_threshold(sig, three, np.full(21, base))
        assert res.threshold_deg == pytest.approx(crossing, abs=1e-6)

    def test_bad_grid(self):
        with pytest.raises(ContractError):
            find_threshold([0, 2, 1], [1, 2, 3], [1, 2, 3])


@pytest.fixture(scope="module")
def splits():
    bset = synth_generate(SynthConfig(trial_count=3, waypoint_count=4))
    return split(bset, SplitSpec((0.34, 0.33, 0.33)))


def untrained(mode, variant, train_trials, val_trials):
    """Stand-in for training: fitted stats and target offset, random weights."""
    ws = windows_for(train_trials, mode, stride=50)
    model = build(MagNetConfig.for_mode(mode, variant), seed=0)
    model.mode, model.stats = mode, ChannelStats.fit(ws)
    model.target_offset = tuple(ws.y.mean(axis=0))
    return model


class TestEvaluate:
    def test_inv2d_fixed_probe_unchanged(self, splits):
        tr, va, te = splits
        model = untrained("inv2d", "S", tr, va)
        base = evaluate(model, te, Scenario(), stride=10)
        probe = evaluate(model, te, Scenario("fixed_test", axes=("z",), angle_deg=88.0), stride=10)
        assert abs(probe.mae - base.mae) / base.mae < 0.005

    def test_raw3d_changes_under_probe(self, splits):
        tr, va, te = splits
        model = untrained("raw3d", "S", tr, va)
        base = evaluate(model, te, Scenario(), stride=10)
        probe = evaluate(model, te, Scenario("fixed_test", axes=("x",), angle_deg=88.0), stride=10)
        assert probe.mae != base.mae

    def test_mode_mismatch(self, splits):
        tr, va, te = splits
        with pytest.raises(ConfigError, match="mode mismatch"):
            evaluate(untrained("raw3d", "S", tr, va), te, mode="inv2d")

    def test_no_test_windows(self, splits):
        tr, va, _ = splits
        with pytest.raises(DataError, match="no test windows"):
            evaluate(untrained("raw3d", "S", tr, va), [])


class TestSweep:
    def test_reuse_and_retrain_counts(self, splits):
        tr, va, te = splits
        calls = []

        def fn(*args):
            calls.append(args[:2])
            return untrained(*args)

        sweep(fn, tr, va, te, [0, 10, 20], "random_test", eval_stride=25)
        assert len(calls) == 2
        calls.clear()
        sweep(fn, tr, va, te, [0, 10, 20], "random_both", eval_stride=25)
        assert len(calls) == 6

    def test_inv2d_flat_and_reproducible(self, splits):
        tr, va, te = splits
        a = sweep(untrained, tr, va, te, [0, 5, 10, 20], "random_test", master_seed=3, eval_stride=10)
        b = sweep(untrained, tr, va, te, [0, 5, 10, 20], "random_test", master_seed=3, eval_stride=10)
        assert a.to_dict() == b.to_dict()
        flat = np.array(a.series["2D-S"])
        assert (flat.max() - flat.min()) / flat.min() < 0.005

    def test_replicated_flag(self, splits):
        tr, va, te = splits
        res = sweep(untrained, tr, va, te, [0, 20], "random_test", eval_stride=25, replicate_invariant=True)
        assert res.flags == {"2D-S": ["invariant-replicated"]}
        assert res.series["2D-S"][0] == res.series["2D-S"][1]

    def test_single_zero_point_matches_unperturbed(self, splits):
        tr, va, te = splits
        res = sweep(untrained, tr, va, te, [0.0], "random_both", eval_stride=25)
        for mode, name in (("raw3d", "3D-S"), ("inv2d", "2D-S")):
            assert res.series[name][0] == evaluate(untrained(mode, "S", tr, va), te, stride=25).mae

    def test_failed_point_recorded(self, splits):
        tr, va, te = splits

        def flaky(mode, variant, train_trials, val_trials):
            if mode == "raw3d":
                raise RuntimeError("boom")
            return untrained(mode, variant, train_trials, val_trials)

        res = sweep(flaky, tr, va, te, [0, 5], "random_both", eval_stride=25)
        assert len(res.failed) == 2 and all(math.isnan(v) for v in res.series["3D-S"])
        assert all(math.isfinite(v) for v in res.series["2D-S"])

    def test_jobs_do_not_change_results(self, splits):
        tr, va, te = splits
        a = sweep(untrained, tr, va, te, [0, 20], "random_test", eval_stride=25)
        b = sweep(untrained, tr, va, te, [0, 20], "random_test", eval_stride=25, jobs=2)
        assert a.to_dict() == b.to_dict()

    def test_grid_validation(self, splits):
        tr, va, te = splits
        with pytest.raises(ConfigError):
            sweep(untrained, tr, va, te, [], "random_test")
        with pytest.raises(ConfigError):
            sweep(untrained, tr, va, te, [5, 0], "random_test")


def example_result():
    sig = [0.0, 1.0, 2.0, 3.0]
    return SweepResult("random_test", "synthetic-0", sig, {"3D-S": [1.234567891, 2.5, 3.75, 4.0], "2D-S": [2.0, 2.0, 2.0, 2.0]})


class TestReport:
    def test_csv_roundtrip_six_digits(self, tmp_path):
        res = example_result()
        (csv_path, _, _) = emit_report([res], tmp_path, [res.threshold()])
        sigmas, series = read_sweep_csv(csv_path)
        assert sigmas == res.sigmas
        for name, values in res.series.items():
            assert series[name] == [float(f"{v:.6g}") for v in values]

    def test_svg_structure(self):
        svg = sweep_svg(example_result())
        assert svg.count("<polyline") == 2
        legends = re.findall(r'<text class="legend"[^>]*>([^<]*)</text>', svg)
        assert legends == ["3D-S", "2D-S"]
        assert "sigma (deg)" in svg and "MAE (m)" in svg

    def test_threshold_csv_columns(self, tmp_path):
        res = example_result()
        paths = emit_report([res], tmp_path, [find_threshold([0, 1], [1.96, 2.0], [1.46, 1.46], name) for name in ("CSL", "Talbot", "Loomis")])
        with open(paths[-1], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["building", "threshold_deg", "mae3d_m", "mae2d_m"]
        assert [r[0] for r in rows[1:]] == ["CSL", "Talbot", "Loomis"]
        assert rows[3][1] == "0"

    def test_threshold_from_sweep(self):
        th = example_result().threshold()
        d0, d1 = 1.234567891 - 2.0, 2.5 - 2.0
        assert th.threshold_deg == pytest.approx(-d0 / (d1 - d0), abs=1e-12)

    def test_dict_roundtrip(self):
        res = example_result()
        assert SweepResult.from_dict(res.to_dict()).to_dict() == res.to_dict()

    def test_nothing_to_report(self, tmp_path):
        with pytest.raises(ContractError):
            emit_report([], tmp_path)
