import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from softplan.metrics import chamfer, flow_mse, fscore, kendall_tau, miou

from .oracles import chamfer_brute, flow_mse_brute, fscore_brute, kendall_brute


def cube(lo):
    lo = np.asarray(lo, dtype=float)
    return lambda p: np.all((p >= lo) & (p <= lo + 1.0), axis=1)


def rigid(rng):
    return Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(), rng.normal(size=3)


def test_miou_examples():
    lo, hi = [0, 0, 0], [1.5, 1, 1]
    a, b = cube([0, 0, 0]), cube([0.5, 0, 0])
    assert miou(a, a, lo, hi)[0] == 1.0
    assert miou(cube([0, 0, 0]), cube([3, 3, 3]), [0, 0, 0], [4, 4, 4])[0] == 0.0
    est, empty = miou(a, b, lo, hi, rng=np.random.default_rng(0))
    assert not empty and abs(est - 1 / 3) <= 0.01


def test_miou_empty_union_flagged():
    assert miou(cube([5, 5, 5]), cube([5, 5, 5]), [0, 0, 0], [1, 1, 1], 100) == (0.0, True)
    with pytest.raises(ValueError):
        miou(cube([0, 0, 0]), cube([0, 0, 0]), [0, 0, 0], [1, 1, 1], 0)


def test_miou_standard_error_bound():
    a, b = cube([0, 0, 0]), cube([0.5, 0, 0])
    ests = [miou(a, b, [0, 0, 0], [1.5, 1, 1], rng=np.random.default_rng(s))[0] for s in range(20)]
    assert np.std(ests, ddof=1) <= 0.005


def test_flow_mse_examples():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(15, 3))
    assert flow_mse(g, g) == 0.0
    assert flow_mse(g + [1, 0, 0], g) == pytest.approx(1.0, abs=1e-12)
    p = rng.normal(size=(15, 3))
    assert flow_mse(p, g) == flow_mse_brute(p, g)
    sub = [0, 3, 7]
    assert flow_mse(p, g, sub) == flow_mse_brute(p[sub], g[sub])
    with pytest.raises(ValueError):
        flow_mse(p, g[:3])


def test_chamfer_examples():
    d = 0.37
    assert chamfer([[0, 0, 0]], [[d, 0, 0]]) == 2 * d * d
    s = np.random.default_rng(2).normal(size=(9, 3))
    assert chamfer(s, s) == 0.0
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), s)
    assert chamfer(s[:3], s, mean=True) == pytest.approx(chamfer(s[:3], s) / 9)


def test_fscore_examples():
    gt = np.array([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]])
    assert fscore(gt, gt)[0] == 1.0
    assert fscore(gt + 5.0, gt) == (0.0, 0.0, 0.0)
    f, p, r = fscore(gt[:2], gt)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        fscore(gt, gt, tau=0.0)


@pytest.mark.parametrize("seed", range(10))
def test_point_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 21, 2)
    a, b = rng.uniform(0, 0.05, (n, 3)), rng.uniform(0, 0.05, (m, 3))
    assert chamfer(a, b) == chamfer_brute(a, b)
    assert fscore(a, b, 0.01) == fscore_brute(a, b, 0.01)


def test_kendall_examples():
    x = [3, 1, 4, 1.5, 9]
    assert kendall_tau(x, x) == 1.0
    assert kendall_tau(x, [-v for v in x]) == -1.0
    assert math.isnan(kendall_tau([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        kendall_tau([1], [1])


def test_kendall_all_small_permutations():
    for n in range(2, 7):
        base = list(range(n))
        for p in itertools.permutations(base):
            assert kendall_tau(base, p) == kendall_brute(base, p)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=12))
def test_kendall_ties_and_antisymmetry(pairs):
    x, y = [a for a, _ in pairs], [b for _, b in pairs]
    t = kendall_tau(x, y)
    want = kendall_brute(x, y)
    assert (math.isnan(t) and math.isnan(want)) or t == want
    if not math.isnan(t):
        assert kendall_tau(x, [-v for v in y]) == -t


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 0.1, (12, 3)), rng.uniform(0, 0.1, (8, 3))
    R, t = rigid(rng)
    ta, tb = a @ R.T + t, b @ R.T + t
    assert chamfer(ta, tb) == pytest.approx(chamfer(a, b), rel=1e-9)
    assert chamfer(a, b) == chamfer(b, a)
    # thresholds are compared away from the boundary so roundoff cannot flip them
    tau = 0.03
    da = np.linalg.norm(a[:, None] - b[None], axis=2).min(axis=1)
    db = np.linalg.norm(a[:, None] - b[None], axis=2).min(axis=0)
    if np.all(np.abs(np.concatenate([da, db]) - tau) > 1e-9):
        assert fscore(ta, tb, tau) == fscore(a, b, tau)
    assert flow_mse(a @ R.T, a @ R.T + [1, 0, 0] @ R.T) == pytest.approx(1.0, rel=1e-12)
