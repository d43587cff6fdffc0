import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyvoter.dynamics import InitialCondition, run_forward, run_forward_batch
from noisyvoter.lattice import (BOTH, DOT, INFINITE, NE, NW, LatticeWindow, ModelParams,
                                left_arrow, right_arrow)
from noisyvoter.qinf import (derive_w_arrows, g_decay_profile, g_row, in_v_prime,
                             leftmost_v_prime, permutation_invariance_test,
                             qinf_coupling_check, w_row)


def test_v_prime_is_the_right_cone():
    assert in_v_prime(3, 3) and not in_v_prime(2, 3) and in_v_prime(0, 0)
    assert leftmost_v_prime(5) == (5, 5)


def test_constant_run_without_dots_keeps_x_arrows():
    p = ModelParams(0.6, 0.0, 3)
    w = LatticeWindow(32, 12)
    run = run_forward(InitialCondition.constant(1), p, w, seed=1)
    wa = derive_w_arrows(run.arrows.codes, run.values, w)
    assert (wa[0] == DOT).all()
    assert np.array_equal(wa[1:], run.arrows.codes[1:])


def test_disagreeing_both_becomes_dot():
    w = LatticeWindow(8, 2)
    prev = np.array([0, 1, 1, 1])
    codes = np.array([BOTH, BOTH, NW, DOT], dtype=np.uint8)
    # site k of row 1 looks at sites k and k + 1 of row 0
    out = w_row(codes, prev, w, 1)
    assert list(out) == [DOT, BOTH, NW, DOT]


def test_partition_labels_split_at_fresh_branches():
    # q infinite: distinct initial labels always disagree, so every Both of row 1 is cut
    p = ModelParams(0.7, 0.5, INFINITE)
    w = LatticeWindow(32, 6)
    run = run_forward(InitialCondition.iid(), p, w, seed=2)
    wa = derive_w_arrows(run.arrows.codes, run.values, w)
    assert not (wa[1] == BOTH).any()


def test_misaligned_inputs_rejected():
    w = LatticeWindow(8, 3)
    with pytest.raises(ValueError):
        derive_w_arrows(np.zeros((3, 4), np.uint8), np.zeros((2, 4)), w)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3, INFINITE]), st.floats(0, 1), st.floats(0, 1))
def test_w_arrows_are_a_subset_of_x_arrows(seed, q, delta, eps):
    p = ModelParams(delta, eps, q)
    w = LatticeWindow(16, 10, "free")
    values, codes = run_forward_batch(InitialCondition.iid(), p, w, seed, np.arange(3))
    wa = derive_w_arrows(codes, values, w)
    assert not (left_arrow(wa) & ~left_arrow(codes)).any()
    assert not (right_arrow(wa) & ~right_arrow(codes)).any()
    single = (codes == NW) | (codes == NE)
    single[:, 0] = False
    assert np.array_equal(wa[single], codes[single])
    assert (wa[codes == DOT] == DOT).all()


def test_forward_colors_follow_w_arrows():
    # a vertex with a W-arrow copies the color it points to
    p = ModelParams(0.5, 0.5, 3)
    w = LatticeWindow(32, 16)
    run = run_forward(InitialCondition.iid(), p, w, seed=5)
    wa = derive_w_arrows(run.arrows.codes, run.values, w)
    for i in range(1, w.height):
        left, right = w.upper_sites(i)
        lm = left_arrow(wa[i])
        rm = right_arrow(wa[i])
        assert np.array_equal(run.values[i][lm], run.values[i - 1][left][lm])
        assert np.array_equal(run.values[i][rm], run.values[i - 1][right][rm])


def test_g_cluster_of_a_path():
    w = LatticeWindow(8, 3)
    g0 = np.ones(4, dtype=bool)
    g1 = g_row(np.array([DOT, NW, NE, DOT], np.uint8), g0, w, 1)
    assert list(g1) == [False, True, True, False]


def test_no_arrows_means_empty_cluster():
    stats = g_decay_profile(ModelParams(1, 1, 3), 10, 500, seed=0)
    assert stats.sup[0] == 1.0
    assert (stats.sup[1:] == 0).all()
    assert stats.tested_rows() == [1]


@pytest.mark.parametrize("delta,eps", [(0.5, 0.5), (0.75, 0.25)])
def test_decay_ratio_bound(delta, eps):
    stats = g_decay_profile(ModelParams(delta, eps, 3), 30, 20000, seed=3)
    assert stats.decay_violations() == []
    assert len(stats.tested_rows()) >= 10


def test_partial_sums_bounded_by_geometric_series():
    stats = g_decay_profile(ModelParams(0.5, 0.5, 3), 30, 20000, seed=4)
    est, geo = stats.partial_sums()
    slack = 4 * np.sqrt(np.cumsum(stats.p_hat[:, 0] * (1 - stats.p_hat[:, 0])) / stats.replicas)
    assert (est <= geo + slack + 1e-12).all()


def test_permutation_invariance_after_mixing():
    rep = permutation_invariance_test(ModelParams(0.5, 0.5, 3), 32, 300, 1000, seed=1)
    assert rep.passed, rep.p_values


def test_permutation_invariance_fails_at_horizon_zero():
    rep = permutation_invariance_test(ModelParams(0.5, 0.5, 3), 32, 0, 200, seed=1)
    assert not rep.passed


def test_permutation_invariance_q2():
    assert permutation_invariance_test(ModelParams(0.5, 0.5, 2), 32, 300, 1000, seed=2).passed


def test_permutation_test_needs_finite_q():
    with pytest.raises(ValueError):
        permutation_invariance_test(ModelParams(0.5, 0.5, INFINITE), 16, 5, 10, seed=0)


def test_identical_inits_are_identical():
    rep = qinf_coupling_check(ModelParams(0.5, 0.5, INFINITE), 32, 20, 50, seed=0,
                              inits=[InitialCondition.constant(0)])
    assert rep.mismatched_replicas == 0 and rep.w_dot_violations == 0


def test_coupling_across_initial_conditions():
    rep = qinf_coupling_check(ModelParams(0.5, 0.5, INFINITE), 64, 100, 300, seed=1)
    assert rep.passed
    assert rep.w_dot_violations == 0 and rep.mismatched_replicas <= 1
    assert rep.time_shift_mismatches <= 1


def test_short_horizon_mismatches_stay_inside_cluster():
    rep = qinf_coupling_check(ModelParams(0.5, 0.2, INFINITE), 64, 3, 200, seed=2)
    assert rep.mismatched_replicas > 0
    assert rep.mismatch_outside_g == 0 and rep.w_dot_violations == 0


def test_coupling_needs_infinite_q():
    with pytest.raises(ValueError):
        qinf_coupling_check(ModelParams(0.5, 0.5, 3), 16, 5, 10, seed=0)
