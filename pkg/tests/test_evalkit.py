import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from earlybird import evalkit as E
from earlybird.errors import TooFewCommonIds, UnknownId

pose_lists = st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-3, 3)), min_size=3, max_size=15)


def traj(rows):
    return {i: np.array(r, dtype=float) for i, r in enumerate(rows)}


def rigid(t, angle, shift):
    c, s = np.cos(angle), np.sin(angle)
    return {i: np.array([c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1], p[2] + angle])
            for i, p in t.items()}


def test_default_radius_examples(rng):
    assert abs(E.default_radius([(0, 0, 0), (30, 0, 0)]) - 2.0) < 1e-12
    sq = [(0, 0, 0), (10, 0, 0), (10, 10, 0), (0, 10, 0), (0, 0, 0)]
    assert abs(E.default_radius(sq) - 40 / 15) < 1e-12
    pts = rng.uniform(-5, 5, (12, 2))
    seg = sum(np.hypot(*(pts[k + 1] - pts[k])) for k in range(11))
    assert abs(E.default_radius({i: (*p, 0.0) for i, p in enumerate(pts)}) - seg / 15) < 1e-12
    with pytest.raises(ValueError):
        E.default_radius([(0, 0, 0)])


def corridor():
    # forward ids 0..3 along x, reverse ids 4..7 back along x
    fwd = [(float(x), 0.0, 0.0) for x in range(4)]
    rev = [(float(x), 0.0, np.pi) for x in range(3, -1, -1)]
    return traj(fwd + rev)


def test_recall_all_at_counterparts():
    gt = corridor()
    matches = [(q, 7 - q, 0.1) for q in range(4)]
    assert E.recall_at_radius(matches, gt, 0.5) == 1.0
    assert E.counterparts(range(4), range(4, 8), gt) == {0: 7, 1: 6, 2: 5, 3: 4}


def test_recall_two_of_four():
    gt = corridor()
    # query 0 -> x=0 ok, 1 -> x=3 (2 m off), 2 -> x=2 ok, 3 -> x=1 (2 m off)
    matches = [(0, 7, 0.1), (1, 4, 0.1), (2, 5, 0.1), (3, 6, 0.1)]
    assert E.recall_at_radius(matches, gt, 1.5) == 0.5
    assert E.recall_at_radius(matches, gt, 2.0) == 1.0


def test_recall_errors():
    gt = corridor()
    with pytest.raises(ValueError):
        E.recall_at_radius([(0, 7, 0.0)], gt, 0.0)
    with pytest.raises(UnknownId):
        E.recall_at_radius([(0, 99, 0.0)], gt, 1.0)
    assert E.recall_at_radius([], gt, 1.0) == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 5), st.floats(0.01, 5))
def test_recall_monotone_in_radius_and_rigid_invariant(seed, r1, r2):
    rng = np.random.default_rng(seed)
    gt = traj([(*rng.uniform(-5, 5, 2), 0.0) for _ in range(20)])
    matches = [(q, int(rng.integers(10, 20)), 0.0) for q in range(10)]
    lo, hi = sorted((r1, r2))
    assert E.recall_at_radius(matches, gt, lo) <= E.recall_at_radius(matches, gt, hi)
    moved = rigid(gt, rng.uniform(-3, 3), rng.uniform(-9, 9, 2))
    assert E.recall_at_radius(matches, gt, hi) == E.recall_at_radius(matches, moved, hi)


def test_align_identity_and_exact_recovery(rng):
    gt = traj([(*rng.uniform(-5, 5, 2), 0.0) for _ in range(10)])
    t = E.align_se2(gt, gt)
    assert np.allclose(t.rotation, np.eye(2), atol=1e-12) and np.allclose(t.translation, 0, atol=1e-12)
    moved = rigid(gt, 0.7, (3.0, -2.0))
    t = E.align_se2(moved, gt)
    assert abs(t.angle + 0.7) < 1e-12
    assert E.ate_rmse(moved, gt) < 1e-12
    back = t.apply_pose(moved[3])
    assert np.allclose(back[:2], gt[3][:2], atol=1e-12)


def brute_force_alignment(est, gt):
    ids = sorted(gt)
    P = np.array([est[i][:2] for i in ids])
    Q = np.array([gt[i][:2] for i in ids])

    def cost(x):
        c, s = np.cos(x[0]), np.sin(x[0])
        return np.sum((P @ np.array([[c, -s], [s, c]]).T + x[1:] - Q) ** 2)

    grid = np.linspace(-np.pi, np.pi, 721)
    # for a fixed angle the best shift is the centroid difference
    def best_shift(a):
        c, s = np.cos(a), np.sin(a)
        return Q.mean(0) - P.mean(0) @ np.array([[c, -s], [s, c]]).T
    a0 = min(grid, key=lambda a: cost(np.r_[a, best_shift(a)]))
    sol = minimize(cost, np.r_[a0, best_shift(a0)], method="BFGS", options={"gtol": 1e-12})
    return sol.x


@pytest.mark.parametrize("seed", range(5))
def test_align_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gt = traj([(*rng.uniform(-5, 5, 2), 0.0) for _ in range(30)])
    est = rigid(gt, rng.uniform(-3, 3), rng.uniform(-5, 5, 2))
    est = {i: p + np.r_[rng.normal(0, 0.3, 2), 0.0] for i, p in est.items()}
    t = E.align_se2(est, gt)
    x = brute_force_alignment(est, gt)
    assert abs(np.angle(np.exp(1j * (t.angle - x[0])))) < 1e-6
    assert np.max(np.abs(t.translation - x[1:])) < 1e-6


def test_ate_examples(rng):
    gt = traj([(*rng.uniform(-5, 5, 2), 0.0) for _ in range(10)])
    assert E.ate_rmse(gt, gt) == 0.0
    shifted = {i: p + np.array([1.0, -2.0, 0.0]) for i, p in gt.items()}
    assert E.ate_rmse(shifted, gt) < 1e-12
    assert abs(E.ate_rmse(shifted, gt, align=False) - np.sqrt(5.0)) < 1e-12
    # only common ids count
    partial = {i: gt[i] for i in range(4)}
    assert E.ate_rmse(partial, gt) == 0.0
    with pytest.raises(TooFewCommonIds):
        E.ate_rmse({0: gt[0]}, gt)


@given(pose_lists, st.integers(0, 2 ** 32 - 1))
def test_ate_properties(rows, seed):
    rng = np.random.default_rng(seed)
    gt = traj(rows)
    est = {i: p + np.r_[rng.normal(0, 0.5, 2), 0.0] for i, p in gt.items()}
    aligned, raw = E.ate_rmse(est, gt), E.ate_rmse(est, gt, align=False)
    assert aligned <= raw + 1e-9
    a, s = rng.uniform(-3, 3), rng.uniform(-10, 10, 2)
    assert abs(E.ate_rmse(rigid(est, a, s), rigid(gt, a, s)) - aligned) < 1e-7
    assert abs(E.ate_rmse(rigid(est, a, s), rigid(gt, a, s), align=False) - raw) < 1e-7
