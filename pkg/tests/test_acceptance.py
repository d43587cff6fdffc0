"""Exit criteria.  Each test records a one-line verdict printed in the summary."""

import itertools

import pytest

from noisyvoter.cli import main
from noisyvoter.coupling import extinction_experiment, threshold_ordering, transition_frequencies
from noisyvoter.enhancement import (enhanced_reach_pair, enumerate_enhanced, gamma,
                                    pivotal_counts, pivotal_inequality_check, russo_check)
from noisyvoter.genealogy import (branching_mean, cluster_depths, exact_theta_n,
                                  exact_theta_profile, grow_cluster, survival_profile)
from noisyvoter.lattice import INFINITE, LatticeWindow, ModelParams, UniformField, sample_arrow_field
from noisyvoter.qinf import g_decay_profile, qinf_coupling_check
from noisyvoter.renormalization import (BoxSpec, box_event_mc, clt_box_bound,
                                        positive_epsilon_certificate, renorm_certificate)

GRID = (0.25, 0.5, 0.75)


def detail(record, text):
    record("detail", text)


@pytest.mark.acceptance(1, title="Monte Carlo survival agrees with the exact transfer sweep")
def test_oracle_equivalence(record_property):
    worst = 0.0
    bad = []
    for delta, eps in itertools.product(GRID, GRID):
        p = ModelParams(delta, eps)
        exact = exact_theta_profile(p, 12)
        mc = survival_profile(cluster_depths(p, 12, 100_000, seed=1000), 12)
        assert exact_theta_n(p, 1).p_hat == 1 - delta * eps
        for n in range(1, 13):
            z = abs(mc[n].p_hat - exact[n]) / mc[n].stderr
            worst = max(worst, z)
            if z > 4:
                bad.append((delta, eps, n))
    detail(record_property, f"108 comparisons at 1e5 replicas, worst |z| = {worst:.2f}, "
                            f"out of band {bad}")
    assert not bad


@pytest.mark.acceptance(2, title="finite differences match the pivotal sums")
def test_russo_formulas(record_property):
    points = [(0.5, 0.5, 0.25), (0.5, 0.25, 0.75), (0.75, 0.5, 0.5), (0.5, 0.5, 0.0), (0.5, 0.5, 1.0)]
    worst = 0.0
    failed = []
    for (delta, eps, s), n in itertools.product(points, (1, 2, 3)):
        rep = russo_check(ModelParams(delta, eps), s, n, h=1e-4)
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failed.append((delta, eps, s, n))
    detail(record_property, f"{len(points) * 3} checks, max error {worst:.2e}, second-order "
                            f"failures {failed}")
    assert worst <= 1e-6 and not failed


@pytest.mark.acceptance(3, title="omega-pivotal sum bounded by gamma times lambda-pivotal sum")
def test_pivotal_inequality(record_property):
    assert gamma(0.5, 0.5, 0.5) == pytest.approx(22, abs=1e-12)
    margins = []
    for eps, s, n in itertools.product(GRID, GRID, (1, 2, 3)):
        p = ModelParams(0.5, eps)
        counts = pivotal_counts(p, s, n)
        if n <= 2:
            enum = enumerate_enhanced(p, s, n)
            assert counts.sum_omega == pytest.approx(sum(enum.omega_pivotal.values()), abs=1e-13)
            assert counts.sum_lambda == pytest.approx(sum(enum.lambda_pivotal.values()), abs=1e-13)
        rep = pivotal_inequality_check(p, s, n, counts)
        assert rep.passed, (eps, s, n)
        margins.append(rep.margin)
    # the transfer sweep against the brute-force sum at the deepest level, one grid point
    p = ModelParams(0.5, 0.5)
    enum = enumerate_enhanced(p, 0.5, 3)
    counts = pivotal_counts(p, 0.5, 3)
    for v in enum.omega_pivotal:
        assert counts.omega[v] == pytest.approx(enum.omega_pivotal[v], abs=1e-13)
        assert counts.lam[v] == pytest.approx(enum.lambda_pivotal[v], abs=1e-13)
    detail(record_property, f"27 grid points (9 x n in 1..3) pass, smallest margin "
                            f"{min(margins):.4g}, gamma(1/2,1/2,1/2) = 22")


@pytest.mark.acceptance(4, title="pathwise monotonicity, diminishment and domination")
def test_pathwise_properties(record_property):
    depth = 15
    w = LatticeWindow(2 * depth + 4, depth + 1, "free", x0=-(depth + 2), t0=-depth)
    mono = 0
    for r in range(1000):
        f = UniformField(41, r)
        lo = grow_cluster(sample_arrow_field(f, ModelParams(0.7, 0.2), w), (0, depth), depth)
        hi = grow_cluster(sample_arrow_field(f, ModelParams(0.7, 0.45), w), (0, depth), depth)
        mono += sum(not set(b) <= set(a) for a, b in zip(lo.levels, hi.levels))
    dim = 0
    for r in range(1000):
        plain, enh = enhanced_reach_pair(42, r, ModelParams(0.7, 0.3), 0.5, depth)
        dim += sum(not set(b) <= set(a) for a, b in zip(plain.levels, enh.levels))
    chain = {q: extinction_experiment(ModelParams(0.5, 0.3, q), 64, 64, 1000, seed=43,
                                      stop_early=False).violations for q in (2, 3, 5)}
    detail(record_property, f"1000 fields each: epsilon monotonicity {mono}, diminishment {dim}, "
                            f"C<=C'<=C* violations by q {chain}")
    assert mono == 0 and dim == 0 and not any(chain.values())


@pytest.mark.acceptance(5, title="subcritical branching bound")
def test_branching_bound(record_property):
    p = ModelParams(0.5, 0.75)
    assert branching_mean(p) == pytest.approx(0.75)
    depths = cluster_depths(p, 500, 10_000, seed=5)
    theta500 = float((depths >= 500).mean())
    prof = exact_theta_profile(p, 14)
    ratios = prof[8:15] / prof[7:14]
    detail(record_property, f"theta_500 = {theta500:.4g} at 1e4 replicas, "
                            f"max exact ratio n=8..14 = {ratios.max():.4f}")
    assert theta500 <= 0.01 and (ratios <= 0.80).all()


@pytest.mark.acceptance(6, title="renormalization certificate")
def test_renormalization_certificate(record_property):
    p = ModelParams(0.8, 0.0)
    box = BoxSpec(20, 100)
    cert = renorm_certificate(p, box, 10_000, seed=6)
    clt = clt_box_bound(100, 0.8)
    left = box_event_mc(-40, box, p, 10_000, seed=6)
    pos = positive_epsilon_certificate(p, box, 10_000, seed=6)
    eps = pos.params.epsilon if pos else None
    detail(record_property, f"min P(A_v) = {cert.min_p:.4f} (se {cert.min_stderr:.1e}), "
                            f"normal bound {clt.intersection_bound:.4f}, passes at eps = {eps}")
    assert cert.passed and cert.min_p >= 0.82
    assert clt.intersection_bound == pytest.approx(0.906, abs=0.005)
    assert clt.intersection_bound <= left.p_hat + 4 * left.stderr
    assert pos is not None and eps > 0 and pos.min_p >= 0.82


@pytest.mark.acceptance(7, title="one-step frequencies of the dominating chain")
def test_transition_frequencies(record_property):
    worst = {}
    ok = True
    for q in (2, 3, 5):
        checks = transition_frequencies(ModelParams(0.5, 0.5, q), 64, 60, 500, seed=70 + q)
        zs = [abs(c.frequency - c.expected) / c.stderr for c in checks.values() if c.stderr > 0]
        worst[q] = round(float(max(zs)), 2)
        ok &= all(c.within(4.0) for c in checks.values())
    detail(record_property, f"worst |z| by q {worst}; (0,0) pattern exact zero")
    assert ok


@pytest.mark.acceptance(8, title="row-to-row decay of the W-cluster")
def test_g_decay(record_property):
    violations = {}
    tested = {}
    for delta, eps in itertools.product(GRID, GRID):
        stats = g_decay_profile(ModelParams(delta, eps, 3), 30, 100_000, seed=8)
        violations[(delta, eps)] = stats.decay_violations(4.0)
        tested[(delta, eps)] = len(stats.tested_rows())
    bad = {k: v for k, v in violations.items() if v}
    detail(record_property, f"q=3, 1e5 replicas, rows with data per grid point "
                            f"{sorted(tested.values())}, violations {bad or 'none'}")
    assert not bad


@pytest.mark.acceptance(9, title="coupling across initial conditions at q = infinity")
def test_qinf_coupling(record_property):
    rep = qinf_coupling_check(ModelParams(0.5, 0.5, INFINITE), 64, 200, 1000, seed=9)
    detail(record_property, f"W-Dot violations {rep.w_dot_violations}, mismatched replicas "
                            f"{rep.mismatched_replicas}, time-shift mismatches "
                            f"{rep.time_shift_mismatches}")
    assert rep.w_dot_violations == 0 and rep.mismatched_replicas <= 1
    assert rep.time_shift_mismatches <= 1


@pytest.mark.acceptance(10, title="threshold ordering (reduced-replica run)")
def test_threshold_ordering(record_property):
    rep = threshold_ordering(delta=0.9, q=3, depth=200, survival_replicas=4000, width=128,
                             horizon=400, chain_replicas=1000, seed=10, iterations=8)
    d = rep.as_dict()
    detail(record_property, f"eps_c in {d['eps_c']} (CI {d['eps_c_ci']}), eps_c' in "
                            f"{d['eps_c_prime']} (CI {d['eps_c_prime_ci']}): {rep.verdict()}")
    assert rep.ordered


EXACT_RUNS = [
    ["theta", "--delta", "0.5", "--epsilon", "0.5", "--depth", "10", "--exact"],
    ["theta", "--delta", "0.25", "--epsilon", "0.75", "--depth", "18", "--exact", "--format", "csv"],
    ["enhance", "--test", "theta", "--exact", "--depth", "12", "--s", "0.5"],
    ["enhance", "--test", "russo", "--depth", "3", "--s", "0.25"],
    ["enhance", "--test", "pivotal", "--depth", "4", "--s", "0.5", "--format", "csv"],
    ["enhance", "--test", "inequality", "--depth", "3", "--eps-grid", "0.25,0.5,0.75",
     "--s-grid", "0.25,0.5,0.75"],
    ["enhance", "--test", "gamma", "--s", "0.5"],
    ["couple", "--test", "table", "--q", "5", "--s", "0.2", "--format", "csv"],
]


@pytest.mark.acceptance(11, title="exact subcommands are byte-identical across runs and threads")
def test_determinism(record_property, tmp_path):
    out = str(tmp_path / "out")
    same = 0
    for argv in EXACT_RUNS:
        outputs = []
        for threads in (None, "1", None):
            extra = ["--threads", threads] if threads else []
            assert main(argv + extra + ["--out", out]) == 0
            with open(out, "rb") as fh:
                outputs.append(fh.read())
        same += len(set(outputs)) == 1
    detail(record_property, f"{same}/{len(EXACT_RUNS)} exact commands reproduced byte for byte")
    assert same == len(EXACT_RUNS)
