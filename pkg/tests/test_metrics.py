import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereonav.errors import EmptySetError, UndefinedDirectionError, ValidationError
from stereonav.metrics import (
    EvalSample,
    aggregate,
    arrival_accuracy,
    l2_error,
    maoe,
    maoe_from_step_errors,
    step_orientation_errors,
)


# -- independent brute-force oracles, kept free of library helpers -------------


def oracle_step_errors(pred, gt, eps=1e-6):
    out = []
    prev_p, prev_g = (0.0, 0.0), (0.0, 0.0)
    for (px, py), (gx, gy) in zip(pred, gt):
        sp = (px - prev_p[0], py - prev_p[1])
        sg = (gx - prev_g[0], gy - prev_g[1])
        prev_p, prev_g = (px, py), (gx, gy)
        if math.hypot(*sg) < eps:
            continue
        dot = sp[0] * sg[0] + sp[1] * sg[1]
        na, nb = math.hypot(*sp), math.hypot(*sg)
        if na == 0.0:
            out.append(math.degrees(math.acos(0.0)) * 0 + 0.0 if dot >= 0 else 180.0)
            continue
        c = max(-1.0, min(1.0, dot / (na * nb)))
        out.append(math.degrees(math.acos(c)))
    return out


def oracle_maoe(per_sample):
    return sum(max(e) for e in per_sample) / len(per_sample)


def oracle_arrival(samples, r, k):
    hits = 0
    for s in samples:
        best = math.inf
        for p in s.pred_waypoints[: k if k else len(s.pred_waypoints)]:
            best = min(best, math.hypot(p[0] - s.subgoal[0], p[1] - s.subgoal[1]))
        hits += best <= r
    return hits / len(samples)


def oracle_l2(samples):
    total, count = 0.0, 0
    for s in samples:
        acc = 0.0
        for p, g in zip(s.pred_waypoints, s.gt_waypoints):
            acc += math.hypot(p[0] - g[0], p[1] - g[1])
        total += acc / len(s.pred_waypoints)
        count += 1
    return total / count


def random_samples(rng, n, horizon=5):
    out = []
    tags = ["turn", "crossing", "detour", "proximity", "crowd", "other"]
    for i in range(n):
        steps = rng.uniform(-1, 1, size=(horizon, 2)) + np.array([1.0, 0.0])
        gt = np.cumsum(steps, axis=0)
        pred = gt + rng.normal(0, 0.5, size=gt.shape)
        out.append(
            EvalSample(
                pred_waypoints=pred,
                gt_waypoints=gt,
                subgoal=gt[-1] + rng.normal(0, 1.0, 2),
                scenario_tag=tags[i % 6],
            )
        )
    return out


class TestStepOrientationErrors:
    def test_perfect_prediction_zero(self):
        gt = np.array([[1.0, 0.0], [2.0, 0.5], [3.0, 1.5]])
        np.testing.assert_allclose(step_orientation_errors(gt, gt), np.zeros(3), atol=1e-12)

    def test_orthogonal_step_90(self):
        errs = step_orientation_errors(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(errs, [90.0], atol=1e-12)

    def test_wraparound(self):
        # pred at 179 deg, gt at -179 deg: difference is 2 deg
        p = np.array([[math.cos(math.radians(179)), math.sin(math.radians(179))]])
        g = np.array([[math.cos(math.radians(-179)), math.sin(math.radians(-179))]])
        np.testing.assert_allclose(step_orientation_errors(p, g), [2.0], atol=1e-9)

    def test_degenerate_gt_steps_skipped(self):
        pred = np.array([[1.0, 0.0], [2.0, 0.0]])
        gt = np.array([[1.0, 0.0], [1.0, 0.0]])  # second step zero length
        assert len(step_orientation_errors(pred, gt)) == 1

    def test_all_degenerate_raises(self):
        gt = np.zeros((3, 2))
        with pytest.raises(UndefinedDirectionError):
            step_orientation_errors(np.ones((3, 2)), gt)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            gt = np.cumsum(rng.uniform(-1, 1, size=(4, 2)) + [0.5, 0.0], axis=0)
            pred = gt + rng.normal(0, 0.7, size=gt.shape)
            mine = step_orientation_errors(pred, gt)
            ref = oracle_step_errors(pred, gt)
            np.testing.assert_allclose(mine, ref, atol=1e-9)

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            gt = np.cumsum(rng.uniform(-1, 1, size=(3, 2)) + [0.5, 0], axis=0)
            pred = rng.uniform(-2, 2, size=(3, 2))
            errs = step_orientation_errors(pred, gt)
            assert np.all(errs >= 0) and np.all(errs <= 180.0)


class TestMaoe:
    def test_worked_example(self):
        assert maoe_from_step_errors([[10.0, 20.0, 5.0], [0.0, 0.0, 30.0]]) == 25.0

    def test_single_sample_is_own_max(self):
        assert maoe_from_step_errors([[4.0, 9.0, 1.0]]) == 9.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        samples = random_samples(rng, 100)
        per = [step_orientation_errors(s.pred_waypoints, s.gt_waypoints) for s in samples]
        assert maoe(samples) == pytest.approx(oracle_maoe(per), abs=1e-9)

    def test_empty_raises(self):
        with pytest.raises(EmptySetError):
            maoe([])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        samples = random_samples(rng, 12)
        assert maoe(samples) == pytest.approx(maoe(samples[::-1]), abs=1e-12)


class TestArrivalAccuracy:
    def test_first_waypoint_on_subgoal(self):
        s = EvalSample(
            pred_waypoints=np.array([[1.0, 1.0], [9.0, 9.0]]),
            gt_waypoints=np.zeros((2, 2)) + [[1.0, 0.0], [2.0, 0.0]],
            subgoal=np.array([1.0, 1.0]),
        )
        assert arrival_accuracy([s], r=0.01) == 1.0

    def test_half_success(self):
        near = EvalSample(np.array([[0.5, 0.0]]), np.array([[1.0, 0.0]]), np.array([0.0, 0.0]))
        far = EvalSample(np.array([[1.5, 0.0]]), np.array([[1.0, 0.0]]), np.array([0.0, 0.0]))
        assert arrival_accuracy([near, far], r=1.0) == 0.5

    def test_matches_oracle(self):
        rng = np.random.default_rng(4)
        samples = random_samples(rng, 100)
        for r in (0.5, 1.0, 2.0):
            for k in (1, 3, None):
                assert arrival_accuracy(samples, r=r, k=k) == oracle_arrival(samples, r, k)

    def test_monotone_in_radius_and_budget(self):
        rng = np.random.default_rng(5)
        samples = random_samples(rng, 40)
        accs_r = [arrival_accuracy(samples, r=r) for r in (0.25, 0.5, 1.0, 2.0, 4.0)]
        assert accs_r == sorted(accs_r)
        accs_k = [arrival_accuracy(samples, r=1.0, k=k) for k in (1, 2, 3, 4, 5)]
        assert accs_k == sorted(accs_k)

    def test_bad_radius(self):
        with pytest.raises(ValidationError):
            arrival_accuracy(random_samples(np.random.default_rng(6), 2), r=0.0)


class TestL2:
    def test_perfect_zero(self):
        rng = np.random.default_rng(7)
        gt = rng.uniform(-1, 1, size=(5, 2))
        s = EvalSample(gt.copy(), gt, np.zeros(2))
        assert l2_error([s]) == 0.0

    def test_constant_offset_345(self):
        gt = np.array([[1.0, 0.0], [2.0, 0.0]])
        s = EvalSample(gt + [0.3, 0.4], gt, np.zeros(2))
        assert l2_error([s]) == pytest.approx(0.5, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(8)
        samples = random_samples(rng, 100)
        assert l2_error(samples) == pytest.approx(oracle_l2(samples), abs=1e-12)


class TestAggregate:
    def test_weighted_vs_unweighted(self):
        # scenario A: one sample with max step error 10; B: three samples with 30
        def sample_with_error(deg, tag):
            gt = np.array([[1.0, 0.0]])
            ang = math.radians(deg)
            pred = np.array([[math.cos(ang), math.sin(ang)]])
            return EvalSample(pred, gt, gt[-1], scenario_tag=tag)

        samples = [sample_with_error(10, "turn")] + [sample_with_error(30, "crossing")] * 3
        report = aggregate(samples)
        assert report.mean_row["maoe_deg"] == pytest.approx(20.0, abs=1e-9)
        assert report.all_row["maoe_deg"] == pytest.approx(25.0, abs=1e-9)
        assert report.all_row["n"] == 4

    def test_single_scenario_mean_equals_all(self):
        rng = np.random.default_rng(9)
        samples = random_samples(rng, 10)
        for s in samples:
            s.scenario_tag = "crowd"
        report = aggregate(samples)
        assert report.mean_row["maoe_deg"] == pytest.approx(report.all_row["maoe_deg"], abs=1e-12)
        assert report.missing_scenarios == ["turn", "crossing", "detour", "proximity", "other"]

    def test_six_scenario_fixture_matches_hand_table(self):
        # one sample per scenario, heading errors 0,10,...,50 and offsets k*0.1
        samples = []
        expected_maoe = []
        for i, tag in enumerate(["turn", "crossing", "detour", "proximity", "crowd", "other"]):
            ang = math.radians(10.0 * i)
            gt = np.array([[1.0, 0.0]])
            pred = np.array([[math.cos(ang), math.sin(ang)]]) * (1.0 + 0.1 * i)
            samples.append(EvalSample(pred, gt, gt[-1], scenario_tag=tag))
            expected_maoe.append(10.0 * i)
        report = aggregate(samples, r=10.0)
        for tag, exp in zip(["turn", "crossing", "detour", "proximity", "crowd", "other"], expected_maoe):
            assert report.per_scenario[tag]["maoe_deg"] == pytest.approx(exp, abs=1e-9)
        assert report.mean_row["maoe_deg"] == pytest.approx(np.mean(expected_maoe), abs=1e-9)
        # equal scenario sizes: mean equals all
        assert report.mean_row["maoe_deg"] == pytest.approx(report.all_row["maoe_deg"], abs=1e-9)

    def test_unknown_tag_rejected(self):
        s = EvalSample(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), np.zeros(2), scenario_tag="nope")
        with pytest.raises(ValidationError):
            aggregate([s])

    def test_tsv_and_json_round(self, tmp_path):
        rng = np.random.default_rng(10)
        report = aggregate(random_samples(rng, 12))
        from stereonav.metrics import write_report

        write_report(report, tmp_path / "r.tsv", tmp_path / "r.json")
        text = (tmp_path / "r.tsv").read_text()
        assert text.startswith("row\tmaoe_deg\tarrival_pct\tl2_m\tn")
        import json

        loaded = json.loads((tmp_path / "r.json").read_text())
        assert loaded["all_row"]["n"] == 12


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=10 ** 6))
def test_mean_equals_all_with_equal_counts(per_scenario_n, seed):
    rng = np.random.default_rng(seed)
    samples = []
    for tag in ["turn", "crossing", "detour", "proximity", "crowd", "other"]:
        for s in random_samples(rng, per_scenario_n):
            s.scenario_tag = tag
            samples.append(s)
    report = aggregate(samples)
    assert report.mean_row["l2_m"] == pytest.approx(report.all_row["l2_m"], rel=1e-12)
