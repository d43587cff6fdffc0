import math

import numpy as np
import pytest
from scipy.stats import norm

from noisyvoter.lattice import ModelParams, UniformField
from noisyvoter.renormalization import (P_C_ORIENTED_SITE_BOUND, BoxSpec, box_event_matrix,
                                        box_event_mc, clt_box_bound, extremal_paths,
                                        positive_epsilon_certificate, renorm_certificate,
                                        walk_event, walk_increments)


def test_box_geometry():
    box = BoxSpec(20, 100)
    assert box.width == 120 and box.half == 60
    assert box.start_offsets()[0] == -40 and box.start_offsets()[-1] == 40
    assert box.target(1) == (-60, -20) and box.target(2) == (20, 60)
    assert box.contains(60, 0) and not box.contains(61, 1) and not box.contains(0, 100)
    with pytest.raises(ValueError):
        BoxSpec(0, 5)


def test_box_events_vanish_without_arrows():
    est = box_event_mc(0, BoxSpec(3, 12), ModelParams(1, 1), 200, seed=0)
    assert est.p_hat == 0


def test_start_outside_interval_rejected():
    with pytest.raises(ValueError):
        box_event_mc(1, BoxSpec(3, 12), ModelParams(0.8, 0), 10, seed=0)
    with pytest.raises(ValueError):
        box_event_mc(8, BoxSpec(3, 12), ModelParams(0.8, 0), 10, seed=0)


def test_all_both_reaches_both_targets():
    # every start reaches the whole light cone, which covers F1 and F2 at n = 3k
    box = BoxSpec(4, 12)
    assert box_event_matrix(box, ModelParams(1, 0), 5, seed=1).all()


def test_box_events_monotone_in_epsilon():
    box = BoxSpec(5, 25)
    lo = box_event_matrix(box, ModelParams(0.8, 0.05), 2000, seed=2)
    hi = box_event_matrix(box, ModelParams(0.8, 0.2), 2000, seed=2)
    assert not (hi & ~lo).any()


def test_sandwich_implication_at_zero_epsilon():
    box = BoxSpec(5, 25)
    A = box_event_matrix(box, ModelParams(0.6, 0.0), 5000, seed=3)
    both_ends = A[:, 0] & A[:, -1]
    assert both_ends.any()
    assert A[both_ends].all()


def test_extremal_walk_events_imply_box_event():
    box = BoxSpec(5, 25)
    p = ModelParams(0.8, 0.0)
    A = box_event_matrix(box, p, 300, seed=4)
    starts = box.start_offsets()
    implied = 0
    for r in range(300):
        f = UniformField(4, r)
        for j in (0, len(starts) // 2, len(starts) - 1):
            paths = extremal_paths(f, p, int(starts[j]), box.n)
            if walk_event(box, paths.leftmost, 1) and walk_event(box, paths.rightmost, 2):
                implied += 1
                assert A[r, j]
    assert implied > 0


def test_rightmost_path_on_all_both_has_slope_one():
    paths = extremal_paths(UniformField(0), ModelParams(1, 0), 0, 10)
    assert list(paths.rightmost) == list(range(11))
    assert list(paths.leftmost) == list(range(0, -11, -1))


@pytest.mark.parametrize("kind,p_up", [("rightmost", 0.9), ("random", 0.5)])
def test_walk_increment_law(kind, p_up):
    inc = walk_increments(ModelParams(0.8, 0.0), 20, 5000, seed=5, kind=kind)
    assert (inc != 0).all()
    freq = (inc == 1).mean()
    se = math.sqrt(p_up * (1 - p_up) / inc.size)
    assert abs(freq - p_up) <= 4 * se


def test_clt_bound_against_normal_cdf():
    b = clt_box_bound(100, 0.8)
    assert b.k == 20 and b.a_symmetric == pytest.approx(2.0)
    assert b.a_drifted == pytest.approx(2 / 0.6)
    a1, a2 = 2.0, 2 / 0.6
    expected = (norm.cdf(a1) - norm.cdf(-a1), 1 - 2 * norm.cdf(-a1),
                norm.cdf(a2) - norm.cdf(-a2), 1 - 2 * norm.cdf(-a2))
    np.testing.assert_allclose(b.probabilities, expected, rtol=1e-12)
    assert b.intersection_bound == pytest.approx(1 - sum(1 - x for x in expected))
    assert b.intersection_bound == pytest.approx(0.9073, abs=1e-3)


def test_clt_bound_limits():
    assert min(clt_box_bound(10**6, 0.8).probabilities) > 1 - 1e-12
    assert clt_box_bound(400, 0.01).intersection_bound < 0
    with pytest.raises(ValueError):
        clt_box_bound(10, 0.1)


def test_certificate_fails_without_arrows():
    cert = renorm_certificate(ModelParams(0.8, 1.0), BoxSpec(3, 15), 100, seed=0)
    assert cert.min_p == 0 and not cert.passed


@pytest.mark.slow
def test_certificate_passes_at_reference_point():
    cert = renorm_certificate(ModelParams(0.8, 0.0), BoxSpec(20, 100), 10_000, seed=0)
    assert cert.passed and cert.min_p >= 0.82
    assert cert.p_all <= cert.p_pair <= cert.min_p
    left = box_event_mc(-40, BoxSpec(20, 100), ModelParams(0.8, 0.0), 10_000, seed=0)
    assert clt_box_bound(100, 0.8).intersection_bound <= left.p_hat + 4 * left.stderr


def test_positive_epsilon_certificate_on_small_box():
    cert = positive_epsilon_certificate(ModelParams(0.9, 0.0), BoxSpec(10, 50), 2000, seed=1)
    assert cert is not None and cert.params.epsilon > 0
    assert cert.min_p > P_C_ORIENTED_SITE_BOUND
    assert set(cert.as_dict()) >= {"min_p", "passed", "threshold"}
