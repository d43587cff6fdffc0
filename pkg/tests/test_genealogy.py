import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyvoter.errors import BracketFailure, InfeasibleSize
from noisyvoter.genealogy import (SurvivalEstimate, branching_mean,
                                  cluster_depths, enumerate_theta_n, estimate_epsilon_c,
                                  exact_theta_n, exact_theta_profile, grow_cluster, theta_n_mc)
from noisyvoter.lattice import (BOTH, DOT, ArrowField, LatticeWindow, ModelParams,
                                UniformField, sample_arrow_field)

# brute-force sums over all arrow configurations of the cone, frozen
ENUMERATED = {
    (0.5, 0.5): (0.609375, 0.511962890625, 0.4379281997680664),
    (0.3, 0.7): (0.6390309999999999, 0.5235629061609999, 0.43239235411289184),
    (0.8, 0.2): (0.7916160000000003, 0.7670081986560006, 0.7517568992536963),
}


def cone_window(depth):
    # origin (0, 0) sits in the last row; rows above hold levels 1..depth
    return LatticeWindow(2 * depth + 4, depth + 1, "free", x0=-(depth + 2), t0=-depth)


@pytest.mark.parametrize("key", sorted(ENUMERATED))
def test_exact_matches_frozen_enumeration(key):
    p = ModelParams(*key)
    prof = exact_theta_profile(p, 4)
    np.testing.assert_allclose(prof[2:], ENUMERATED[key], rtol=0, atol=1e-14)


@pytest.mark.parametrize("key", sorted(ENUMERATED))
def test_enumeration_oracle_reproduces(key):
    assert enumerate_theta_n(ModelParams(*key), 2) == pytest.approx(ENUMERATED[key][0], abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_one_step_survival(delta, eps):
    assert exact_theta_n(ModelParams(delta, eps), 1).p_hat == pytest.approx(1 - delta * eps, abs=1e-15)


def test_profile_is_nonincreasing_and_zero_when_all_dot():
    prof = exact_theta_profile(ModelParams(0.7, 0.4), 14)
    assert (np.diff(prof) <= 1e-15).all()
    assert (exact_theta_profile(ModelParams(1, 1), 6)[1:] == 0).all()


def test_exact_size_cap():
    with pytest.raises(InfeasibleSize):
        exact_theta_n(ModelParams(0.5, 0.5), 19)
    with pytest.raises(InfeasibleSize):
        enumerate_theta_n(ModelParams(0.5, 0.5), 5)


def test_survival_estimate_invariants():
    with pytest.raises(ValueError):
        SurvivalEstimate(1, 0.5, 0.0, 10, 0, False)
    with pytest.raises(ValueError):
        SurvivalEstimate(1, 1.5, 0.1, 10, 0, False)


@pytest.mark.parametrize("delta,eps,expected", [(0.3, 0.5, 1.0), (0.5, 0.75, 0.75), (0.0, 0.9, 1.0)])
def test_branching_mean(delta, eps, expected):
    assert branching_mean(ModelParams(delta, eps)) == pytest.approx(expected)


def test_mc_matches_exact_at_depth_10():
    p = ModelParams(0.5, 0.5)
    est = theta_n_mc(p, 10, 100_000, seed=3)
    assert abs(est.p_hat - exact_theta_n(p, 10).p_hat) <= 4 * est.stderr


def test_origin_dot_dies_at_level_one():
    w = cone_window(3)
    codes = np.full((w.height, w.sites), BOTH, dtype=np.uint8)
    codes[-1, w.site_of(0, w.height - 1)] = DOT
    rs = grow_cluster(ArrowField(w, codes), (0, w.height - 1), 3)
    assert rs.reaches(0) and not rs.reaches(1)


def test_all_both_fills_the_cone():
    w = cone_window(5)
    rs = grow_cluster(ArrowField(w, np.full((w.height, w.sites), BOTH, np.uint8)), (0, 5), 5)
    for l, lev in enumerate(rs.levels):
        assert list(lev) == list(range(-l, l + 1, 2))
    assert rs.depth == 5


def test_grow_cluster_requires_free_wide_window():
    f = sample_arrow_field(UniformField(0), ModelParams(0.5, 0.5), LatticeWindow(8, 5))
    with pytest.raises(ValueError):
        grow_cluster(f, (0, 4), 4)


def test_lazy_kernel_agrees_with_explicit_clusters():
    p = ModelParams(0.6, 0.3)
    depth = 12
    w = cone_window(depth)
    lazy = cluster_depths(p, depth, 200, seed=5)
    for r in range(200):
        rs = grow_cluster(sample_arrow_field(UniformField(5, r), p, w), (0, depth), depth)
        assert min(rs.depth, depth) == lazy[r]


def test_reached_sets_are_monotone_in_epsilon():
    depth = 15
    w = cone_window(depth)
    violations = 0
    for r in range(1000):
        f = UniformField(9, r)
        lo = grow_cluster(sample_arrow_field(f, ModelParams(0.7, 0.2), w), (0, depth), depth)
        hi = grow_cluster(sample_arrow_field(f, ModelParams(0.7, 0.45), w), (0, depth), depth)
        violations += sum(not set(b) <= set(a) for a, b in zip(lo.levels, hi.levels))
    assert violations == 0


def test_cone_containment_and_absorbing_death():
    p = ModelParams(0.5, 0.6)
    w = cone_window(10)
    for r in range(50):
        rs = grow_cluster(sample_arrow_field(UniformField(2, r), p, w), (0, 10), 10)
        dead = False
        for l, lev in enumerate(rs.levels):
            assert (np.abs(lev) <= l).all()
            if dead:
                assert len(lev) == 0
            dead = dead or len(lev) == 0


def test_supercritical_frontier_survives():
    depths = cluster_depths(ModelParams(0.5, 0.2), 50, 2000, seed=1)
    assert (depths >= 50).mean() > 0.1


def test_subcritical_ratio_bounded_by_branching_mean():
    p = ModelParams(0.5, 0.75)
    prof = exact_theta_profile(p, 14)
    assert (prof[8:15] / prof[7:14] <= branching_mean(p) + 0.05).all()


def _site_percolation_survival(p_open, depth, replicas, seed):
    """Independent oriented site percolation: open sites keep both arrows."""
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(replicas):
        cur = np.zeros(2 * depth + 3, dtype=bool)
        cur[depth + 1] = True
        for _ in range(depth):
            open_ = cur & (rng.random(cur.shape) < p_open)
            nxt = np.zeros_like(cur)
            nxt[:-1] |= open_[1:]
            nxt[1:] |= open_[:-1]
            cur = nxt
            if not cur.any():
                break
        hits += cur.any()
    return hits / replicas


def test_delta_one_is_oriented_site_percolation():
    depth, reps = 60, 4000
    for eps in (0.2, 0.3, 0.4):
        mc = theta_n_mc(ModelParams(1.0, eps), depth, reps, seed=4)
        ref = _site_percolation_survival(1 - eps, depth, reps, seed=11)
        se = np.hypot(mc.stderr, np.sqrt(max(ref * (1 - ref), 1e-4) / reps))
        assert abs(mc.p_hat - ref) <= 4 * se


@pytest.mark.slow
def test_critical_bracket_at_delta_one_near_site_threshold():
    est = estimate_epsilon_c(1.0, 500, 2000, iterations=8)
    # oriented site percolation: open threshold ~0.7055, finite depth biases upward
    assert 0.29 <= est.eps_lo < est.eps_hi <= 0.34


def test_critical_bracket_consistent_with_branching_bound():
    est = estimate_epsilon_c(0.5, 500, 2000, iterations=8)
    assert est.eps_hi < 0.55
    assert est.ci_lo <= est.eps_lo < est.eps_hi <= est.ci_hi


def test_bracket_failure_without_crossing():
    with pytest.raises(BracketFailure):
        estimate_epsilon_c(0.0001, 50, 500)


def test_survival_decreases_in_epsilon_at_small_delta():
    vals = [(cluster_depths(ModelParams(0.05, e), 40, 2000, 1) >= 40).mean() for e in (0.1, 0.5, 0.9)]
    assert vals[0] >= vals[1] >= vals[2]
