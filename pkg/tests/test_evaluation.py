import math

import numpy as np
import pytest
from conftest import straight_history
from hypothesis import given, settings
from hypothesis import strategies as st

from cliff_lhmp.evaluation import (
    EvaluationError,
    ade,
    evaluate,
    fde,
    ground_truth_at,
    horizon_grid,
    predict_splits,
    sweep,
    top_k,
)
from cliff_lhmp.ingestion import SplitTrajectory, State, Trajectory, derive_velocities, filter_and_split
from cliff_lhmp.predictor import PredictorConfig
from cliff_lhmp.synthetic import box_keys, map_from_field


def line(n, start=(0.0, 0.0), step=(1.0, 0.0)):
    return np.array([(start[0] + i * step[0], start[1] + i * step[1]) for i in range(1, n + 1)])


def straight_split(x0=0.0, y0=0.0, heading=0.0, speed=1.0, future_s=30.0, dt=1.0, key=(1, 0)):
    hist = straight_history(x0=x0, y0=y0, heading=heading, speed=speed, dt=dt)
    c, s = math.cos(heading), math.sin(heading)
    cur = State(x0, y0, speed, heading, 0.0)
    fut = tuple(State(x0 + speed * m * dt * c, y0 + speed * m * dt * s, speed, heading, m * dt)
                for m in range(1, int(round(future_s / dt)) + 1))
    return SplitTrajectory(f"{key[0]}_{key[1]}", key, tuple(hist), cur, fut)


def polyline_trajectory(points, speed, dt, pid):
    """Constant-speed walk along a polyline, sampled every ``dt``."""
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.r_[0.0, np.cumsum(seg)]
    s = np.arange(0.0, cum[-1], speed * dt)
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    rho, theta = derive_velocities(x, y, dt)
    return Trajectory(pid, np.arange(len(x)) * dt, x, y, rho, theta, dt)


class TestMetrics:
    def test_identical(self):
        p = line(10)
        assert ade(p, p) == 0.0
        assert fde(p, p) == 0.0

    def test_constant_offset(self):
        p = line(10)
        assert ade(p + [3.0, 4.0], p) == pytest.approx(5.0)
        assert fde(p + [3.0, 4.0], p) == pytest.approx(5.0)

    def test_truncated_prediction(self):
        gt = line(10)
        pred = gt[:3] + [[0, 1], [0, 2], [0, 3]]
        assert ade(pred, gt) == pytest.approx(2.0)
        assert fde(pred, gt) == pytest.approx(3.0)

    def test_two_step(self):
        pred = [(0.0, 0.0), (1.0, 1.0)]
        gt = [(0.0, 1.0), (4.0, 5.0)]
        assert ade(pred, gt) == pytest.approx(3.0)
        assert fde(pred, gt) == pytest.approx(5.0)

    def test_horizon_cap(self):
        gt = line(10)
        pred = gt + np.array([[0, 1]] * 5 + [[0, 9]] * 5)
        assert ade(pred, gt, n_steps=5) == pytest.approx(1.0)
        assert fde(pred, gt, n_steps=5) == pytest.approx(1.0)

    def test_no_overlap(self):
        with pytest.raises(EvaluationError):
            ade(np.zeros((0, 2)), line(3))

    def test_top_k(self):
        gt = line(10)
        bad = [gt + [0.0, float(i + 1)] for i in range(19)]
        assert top_k(bad + [gt.copy()], gt) == 0.0
        assert top_k(bad[:1], gt) == ade(bad[0], gt)
        assert top_k(bad, gt, metric=fde) == pytest.approx(1.0)
        with pytest.raises(EvaluationError):
            top_k([], gt)

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.integers(1, 20))
    def test_top_k_monotone_and_below_mean(self, seed, k):
        r = np.random.default_rng(seed)
        gt = np.cumsum(r.normal(size=(12, 2)), axis=0)
        preds = [gt + r.normal(scale=2.0, size=gt.shape) for _ in range(20)]
        values = [top_k(preds[:j], gt) for j in range(1, 21)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert values[k - 1] <= np.mean([ade(p, gt) for p in preds[:k]]) + 1e-12

    @settings(max_examples=50)
    @given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.floats(-100, 100), st.floats(-100, 100))
    def test_rigid_transform_invariance(self, seed, phi, tx, ty):
        r = np.random.default_rng(seed)
        gt = np.cumsum(r.normal(size=(15, 2)), axis=0)
        pred = gt + r.normal(size=gt.shape)
        rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])

        def move(a):
            return a @ rot.T + [tx, ty]

        assert ade(move(pred), move(gt)) == pytest.approx(ade(pred, gt), abs=1e-9)
        assert fde(move(pred), move(gt)) == pytest.approx(fde(pred, gt), abs=1e-9)


class TestGroundTruth:
    def test_interpolation(self):
        split = straight_split(future_s=5.0)
        np.testing.assert_allclose(ground_truth_at(split, np.array([0.5, 2.25])), [[0.5, 0.0], [2.25, 0.0]])

    def test_horizon_grid(self):
        g = horizon_grid(12.0, 0.4)
        assert len(g) == 30 and g[0] == 0.4 and g[-1] == 12.0
        assert horizon_grid(50.0, 1.0) == [float(i) for i in range(1, 51)]


def field_map(theta, half=60.0):
    return map_from_field(1.0, box_keys(-half, -half, half, half, 1.0), lambda x, y: theta)


class TestEvaluate:
    def test_beta_zero_analytic(self):
        # the walker keeps heading east; the map sends the prediction north after the first step
        split = straight_split(future_s=20.0)
        cfg = PredictorConfig.atc(beta=0.0, horizon=20, k=3)
        rows = evaluate([split], field_map(math.pi / 2), cfg, [5.0, 20.0])
        cliff = {r.horizon: r for r in rows if r.method == "cliff-lhmp"}
        for h in (5, 20):
            assert cliff[h].ade_mean == pytest.approx(math.sqrt(2) * (h - 1) / 2, abs=1e-9)
            assert cliff[h].fde_mean == pytest.approx(math.sqrt(2) * (h - 1), abs=1e-9)
            assert cliff[h].completion_ratio == 1.0
        cvm = [r for r in rows if r.method == "cvm"]
        assert all(r.ade_mean == pytest.approx(0.0, abs=1e-9) for r in cvm)

    def test_k1_matches_predict(self):
        split = straight_split(heading=0.4, future_s=15.0, key=(4, 2))
        m = map_from_field(1.0, box_keys(-40, -40, 40, 40, 1.0), lambda x, y: 0.3 + 0.02 * x)
        cfg = PredictorConfig.atc(horizon=15, k=1, seed=5)
        (row,) = [r for r in evaluate([split], m, cfg, [15.0]) if r.method == "cliff-lhmp"]
        (preds,) = [p for _, p in predict_splits([split], m, cfg)]
        gt = ground_truth_at(split, np.arange(1, 16, dtype=float))
        assert row.ade_mean == pytest.approx(ade(preds[0], gt), abs=1e-12)
        assert row.topk_ade_mean == row.ade_mean

    def test_statistics_across_trajectories(self):
        splits = [straight_split(speed=s, key=(i, 0)) for i, s in enumerate((0.5, 1.0, 1.5))]
        rows = evaluate(splits, field_map(math.pi / 2), PredictorConfig.atc(beta=0.0, k=1), [10.0])
        cliff = next(r for r in rows if r.method == "cliff-lhmp")
        per = [math.sqrt(2) * s * 9 / 2 for s in (0.5, 1.0, 1.5)]
        assert cliff.n == 3
        assert cliff.ade_mean == pytest.approx(np.mean(per))
        assert cliff.ade_std == pytest.approx(np.std(per))

    def test_short_ground_truth_contributes_up_to_its_length(self):
        split = straight_split(future_s=4.0)
        rows = evaluate([split], field_map(math.pi / 2), PredictorConfig.atc(beta=0.0, k=1), [2.0, 10.0])
        cliff = {r.horizon: r for r in rows if r.method == "cliff-lhmp"}
        assert cliff[10.0].n == 1
        assert cliff[10.0].ade_mean == pytest.approx(math.sqrt(2) * 3 / 2)
        assert cliff[10.0].completion_ratio == 1.0

    def test_truncated_rollouts_lower_completion(self):
        m = map_from_field(1.0, box_keys(-5, -5, 5, 5, 1.0), lambda x, y: 0.0)
        rows = evaluate([straight_split()], m, PredictorConfig.atc(k=2), [2.0, 20.0])
        cliff = {r.horizon: r for r in rows if r.method == "cliff-lhmp"}
        assert cliff[2.0].completion_ratio == 1.0
        assert cliff[20.0].completion_ratio == 0.0
        assert cliff[20.0].ade_mean == pytest.approx(0.0, abs=1e-9)  # scored over the steps it has

    def test_full_coverage_completes(self):
        splits = [straight_split(heading=h, key=(i, 0)) for i, h in enumerate(np.linspace(0, 6, 5))]
        m = map_from_field(1.0, box_keys(-40, -40, 40, 40, 1.0), lambda x, y: math.atan2(y, x) % (2 * math.pi),
                           var=0.05)
        rows = evaluate(splits, m, PredictorConfig.atc(k=5), [5.0, 30.0])
        assert all(r.completion_ratio == 1.0 for r in rows)

    def test_cvm_only(self):
        rows = evaluate([straight_split()], None, PredictorConfig.atc(), [5.0])
        assert [r.method for r in rows] == ["cvm"]

    def test_errors(self):
        with pytest.raises(EvaluationError, match="empty dataset"):
            evaluate([], None, PredictorConfig.atc(), [5.0])
        with pytest.raises(EvaluationError):
            evaluate([straight_split()], None, PredictorConfig.atc(), [])
        with pytest.raises(EvaluationError):
            evaluate([straight_split()], None, PredictorConfig.atc(), [5.0], include_cvm=False)

    def test_deterministic_across_workers(self):
        splits = [straight_split(heading=h, key=(i, 0)) for i, h in enumerate(np.linspace(0, 6, 6))]
        m = map_from_field(1.0, box_keys(-40, -40, 40, 40, 1.0), lambda x, y: 0.01 * x * y % (2 * math.pi),
                           var=0.1)
        cfg = PredictorConfig.atc(horizon=20, k=4, seed=11)
        assert evaluate(splits, m, cfg, [10.0, 20.0]) == evaluate(splits, m, cfg, [10.0, 20.0], workers=2)


def l_walkers(n=6):
    return [polyline_trajectory([(0.0, lane), (20.0, lane), (20.0, 45.0)], 1.0, 0.4, i + 1)
            for i, lane in enumerate(np.linspace(1.0, 3.0, n))]


def l_corridor_map():
    keys = box_keys(0, 0, 16, 4, 1.0) + box_keys(16, 0, 24, 50, 1.0)
    return map_from_field(1.0, keys, lambda x, y: 0.0 if x < 16 else math.pi / 2)


class TestSweep:
    def test_beta_lowers_completion(self):
        table = sweep("beta", [0.5, 1.0, 10.0], PredictorConfig.atc(k=3), l_walkers(), l_corridor_map(), [25.0],
                      include_cvm=False)
        ratios = [table[b][0].completion_ratio for b in (0.5, 1.0, 10.0)]
        assert ratios[0] >= ratios[1] >= ratios[2]
        assert ratios[2] < ratios[0]

    def test_r_s_stable_on_uniform_map(self):
        walkers = [polyline_trajectory([(0.0, y), (40.0, y)], 1.2, 0.4, i) for i, y in enumerate((0.3, 2.0))]
        table = sweep("r_s", [1.0, 2.0, 3.0], PredictorConfig.atc(k=2), walkers, field_map(0.0), [10.0, 20.0])
        rows = [table[v] for v in (1.0, 2.0, 3.0)]
        for a, b in zip(rows, rows[1:]):
            for ra, rb in zip(a, b):
                assert ra.ade_mean == pytest.approx(rb.ade_mean, abs=1e-9)
                assert ra.completion_ratio == rb.completion_ratio == 1.0

    def test_obs_horizon_invariant_for_constant_walkers(self):
        walkers = [polyline_trajectory([(0.0, y), (60.0, y)], 1.0, 0.4, i) for i, y in enumerate((0.5, 3.5))]
        table = sweep("O_s", [1.2, 2.0, 3.2], PredictorConfig.atc(k=1), walkers, field_map(math.pi / 2),
                      [5.0, 20.0])
        base = table[1.2]
        for v in (2.0, 3.2):
            for ra, rb in zip(base, table[v]):
                assert rb.ade_mean == pytest.approx(ra.ade_mean, abs=1e-9)
                assert rb.fde_mean == pytest.approx(ra.fde_mean, abs=1e-9)

    def test_unknown_param(self):
        with pytest.raises(ValueError, match="unknown sweep parameter"):
            sweep("gamma", [1.0], PredictorConfig.atc(), l_walkers(1), None, [5.0])

    def test_split_follows_obs_horizon(self):
        splits = filter_and_split(l_walkers(1), 2.0, 50.0)
        assert len(splits[0].history) == 5
