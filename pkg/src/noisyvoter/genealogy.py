"""Dual arrow percolation: cluster growth, survival and the critical point.

The cluster of the origin lives in the cone above it.  Level ``l`` of the cone
is color-time row ``t = -l``; its vertices sit at ``z = -l, -l + 2, ..., l``.
Monte Carlo estimates evaluate arrows lazily through the uniform field, so
the same ``(seed, replica)`` realizes the same configuration for every
``epsilon`` (the threshold coupling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import BracketFailure, InfeasibleSize
from .lattice import (BOTH, DOT, NE, NW, ArrowField, ModelParams, Stream,
                      arrow_probabilities, replica_keys, uniform_at)

MAX_EXACT_DEPTH = 18
MAX_ENUMERATION_DEPTH = 4


@dataclass(frozen=True)
class ReachedSet:
    """Per-level positions reached from ``origin`` by arrow paths."""

    origin: tuple[int, int]
    levels: tuple = field(repr=False)

    @property
    def depth(self) -> int:
        """Deepest level holding a reached vertex."""
        return max(l for l, lev in enumerate(self.levels) if len(lev))

    def reaches(self, n: int) -> bool:
        return n < len(self.levels) and len(self.levels[n]) > 0


@dataclass(frozen=True)
class SurvivalEstimate:
    n: int
    p_hat: float
    stderr: float
    replicas: int
    seed: int | None
    exact: bool

    def __post_init__(self):
        if not (0.0 <= self.p_hat <= 1.0 + 1e-12):
            raise ValueError(f"probability out of range: {self.p_hat}")
        if self.exact != (self.stderr == 0.0):
            raise ValueError("stderr must vanish exactly for exact estimates")


@dataclass(frozen=True)
class CriticalEstimate:
    """Bracket of the finite-depth threshold crossing in epsilon."""

    delta: float
    depth: int
    eps_lo: float
    eps_hi: float
    ci_lo: float
    ci_hi: float
    threshold: float
    replicas: int
    seed: int
    description: str = ""

    def __post_init__(self):
        if not (0.0 <= self.eps_lo < self.eps_hi <= 1.0):
            raise ValueError("invalid bracket")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.eps_lo + self.eps_hi)


def binomial_stderr(hits: int, trials: int) -> float:
    """Standard error of a Monte Carlo frequency.

    Uses the Laplace-smoothed proportion so that the error never vanishes
    for a stochastic estimate.
    """
    p = (hits + 1.0) / (trials + 2.0)
    return math.sqrt(p * (1.0 - p) / trials)


def branching_mean(params: ModelParams) -> float:
    """Mean number of arrows leaving a vertex."""
    d, e = params.delta, params.epsilon
    return 1.0 * (1.0 - d) + 2.0 * d * (1.0 - e) + 0.0 * d * e


# ---------------------------------------------------------------------------
# explicit fields


def grow_cluster(field: ArrowField, origin: tuple[int, int], max_depth: int) -> ReachedSet:
    """Breadth-first cluster of ``origin = (z, row index)`` on a FREE window."""
    window = field.window
    z0, i0 = origin
    if window.periodic:
        raise ValueError("cluster growth needs a FREE window")
    if window.width <= 2 * max_depth:
        raise ValueError("window must be wider than twice the depth")
    if i0 - max_depth < 0:
        raise ValueError("window does not hold max_depth rows above the origin")
    cur = np.array([window.site_of(z0, i0)])
    levels = [window.positions(i0)[cur]]
    for l in range(max_depth):
        i = i0 - l
        codes = field.codes[i, cur]
        left, right = window.upper_sites(i)
        lt = left[cur][(codes == NW) | (codes == BOTH)]
        rt = right[cur][(codes == NE) | (codes == BOTH)]
        if (lt < 0).any() or (rt < 0).any():
            raise ValueError("cluster touched the window boundary")
        cur = np.union1d(lt, rt)
        levels.append(window.positions(i - 1)[cur])
    return ReachedSet((z0, window.t0 + i0), tuple(levels))


# ---------------------------------------------------------------------------
# lazy Monte Carlo kernel


@njit(cache=True, inline="always")
def _code(u, t1, t2, t3):
    if u < t1:
        return NW
    if u < t2:
        return NE
    if u < t3:
        return BOTH
    return DOT


@njit(cache=True, parallel=True)
def _cluster_depths(akeys, lkeys, n, t1, t2, t3, s):
    """Deepest level reached by the (enhanced, if s > 0) cluster of the origin."""
    R = akeys.shape[0]
    out = np.zeros(R, dtype=np.int64)
    size = 2 * n + 5
    off = n + 2
    for r in prange(R):
        ka = akeys[r]
        kl = lkeys[r]
        cur = np.zeros(size, dtype=np.bool_)
        nxt = np.zeros(size, dtype=np.bool_)
        cur[off] = True
        lo = off
        hi = off
        depth = 0
        for lev in range(n):
            nlo = size
            nhi = -1
            for idx in range(lo, hi + 1, 2):
                if not cur[idx]:
                    continue
                cur[idx] = False
                z = idx - off
                c = _code(uniform_at(ka, -lev, z), t1, t2, t3)
                if c == BOTH and s > 0.0 and uniform_at(kl, -lev, z) < s:
                    if (_code(uniform_at(ka, -lev - 1, z - 1), t1, t2, t3) == DOT
                            or _code(uniform_at(ka, -lev - 1, z + 1), t1, t2, t3) == DOT):
                        c = DOT
                if c == NW or c == BOTH:
                    nxt[idx - 1] = True
                    nlo = min(nlo, idx - 1)
                    nhi = max(nhi, idx - 1)
                if c == NE or c == BOTH:
                    nxt[idx + 1] = True
                    nlo = min(nlo, idx + 1)
                    nhi = max(nhi, idx + 1)
            if nhi < 0:
                break
            depth = lev + 1
            cur, nxt = nxt, cur
            lo = nlo
            hi = nhi
        out[r] = depth
    return out


def cluster_depths(params: ModelParams, n: int, replicas: int, seed: int,
                   s: float = 0.0, first_replica: int = 0) -> np.ndarray:
    """Per-replica deepest level reached (capped at ``n``)."""
    reps = np.arange(first_replica, first_replica + replicas, dtype=np.int64)
    akeys = replica_keys(seed, reps, Stream.ARROW)
    lkeys = replica_keys(seed, reps, Stream.LAMBDA)
    t1, t2, t3 = params.thresholds()
    return _cluster_depths(akeys, lkeys, int(n), t1, t2, t3, float(s))


def survival_profile(depths: np.ndarray, n: int) -> list[SurvivalEstimate]:
    return [estimate_from_hits(int((depths >= l).sum()), len(depths), l, None)
            for l in range(n + 1)]


def estimate_from_hits(hits: int, trials: int, n: int, seed) -> SurvivalEstimate:
    return SurvivalEstimate(n, hits / trials, binomial_stderr(hits, trials), trials, seed, False)


def theta_n_mc(params: ModelParams, n: int, replicas: int, seed: int) -> SurvivalEstimate:
    if n < 1:
        raise ValueError("depth must be at least 1")
    depths = cluster_depths(params, n, replicas, seed)
    return estimate_from_hits(int((depths >= n).sum()), replicas, n, seed)


# ---------------------------------------------------------------------------
# exact survival


def _transfer_tensor(params: ModelParams) -> np.ndarray:
    """M[old, h, out, h']: one parent of the frontier sweep.

    ``old`` flags a reached parent, ``h`` a hit on the current site coming
    from the parent to its left; ``h'`` is the hit passed to the right.
    """
    p_nw, p_ne, p_b, p_d = arrow_probabilities(params)
    M = np.zeros((2, 2, 2, 2))
    for h in (0, 1):
        M[0, h, h, 0] = 1.0
        M[1, h, 1, 0] += p_nw
        M[1, h, h, 1] += p_ne
        M[1, h, 1, 1] += p_b
        M[1, h, h, 0] += p_d
    return M


def exact_theta_profile(params: ModelParams, n: int) -> np.ndarray:
    """Exact survival probabilities to levels 0..n.

    Dynamic programming over the law of the reached subset of each level;
    each level is swept parent by parent so the work is O(l 2^l).
    """
    if n > MAX_EXACT_DEPTH:
        raise InfeasibleSize(f"exact survival is capped at depth {MAX_EXACT_DEPTH}")
    M = _transfer_tensor(params)
    out = np.ones(n + 1)
    # P over reached subsets of the current level, one binary axis per site
    P = np.array([0.0, 1.0])
    for l in range(n):
        m = l + 1
        T = np.stack([P, np.zeros_like(P)], axis=-1)  # carry h = 0
        for k in range(m):
            T = T.reshape(2 ** k, 2, 2 ** (m - 1 - k), 2)
            T = np.einsum("aibh,ihjg->ajbg", T, M)
        # last site of the new level receives only the carried hit
        P = T.reshape((2,) * (m + 1))
        out[l + 1] = 1.0 - P.reshape(-1)[0]
    return out


def exact_theta_n(params: ModelParams, n: int) -> SurvivalEstimate:
    if n < 0:
        raise ValueError("depth must be nonnegative")
    p = float(exact_theta_profile(params, n)[n])
    return SurvivalEstimate(n, min(max(p, 0.0), 1.0), 0.0, 0, None, True)


def enumerate_theta_n(params: ModelParams, n: int) -> float:
    """Survival by summing over every arrow configuration of the cone."""
    if n > MAX_ENUMERATION_DEPTH:
        raise InfeasibleSize(f"enumeration is capped at depth {MAX_ENUMERATION_DEPTH}")
    if n == 0:
        return 1.0
    sites = [(l, k) for l in range(n) for k in range(l + 1)]
    index = {v: j for j, v in enumerate(sites)}
    N = len(sites)
    configs = np.indices((4,) * N).reshape(N, -1).T.astype(np.uint8)
    probs = arrow_probabilities(params)
    weight = np.prod(probs[configs], axis=1)
    reached = {(0, 0): np.ones(len(configs), dtype=bool)}
    for l in range(n):
        nxt = {}
        for k in range(l + 1):
            c = configs[:, index[(l, k)]]
            r = reached[(l, k)]
            for target, arrow in (((l + 1, k), (c == NW) | (c == BOTH)),
                                  ((l + 1, k + 1), (c == NE) | (c == BOTH))):
                nxt[target] = nxt.get(target, False) | (r & arrow)
        reached = nxt
    alive = np.zeros(len(configs), dtype=bool)
    for r in reached.values():
        alive |= r
    return float(weight[alive].sum())


# ---------------------------------------------------------------------------
# critical point


def _bisect(survival, lo, hi, iterations, supercritical):
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if supercritical(survival(mid)):
            lo = mid
        else:
            hi = mid
    return lo, hi


def estimate_epsilon_c(delta: float, depth: int, replicas: int,
                       survival_threshold: float = 0.01, seed: int = 0,
                       iterations: int = 10, z: float = 2.0) -> CriticalEstimate:
    """Bisection in epsilon of the depth-``depth`` survival frequency.

    All evaluations share one uniform field, so the survival frequency is
    nonincreasing in epsilon and bisection is well defined.  ``eps_lo`` is
    the largest grid point seen above the threshold, ``eps_hi`` the smallest
    seen at or below it.  The confidence interval repeats the bisection with
    the frequency shifted by ``z`` standard errors either way.
    """
    cache: dict[float, tuple[int, float]] = {}

    def survival(eps):
        if eps not in cache:
            d = cluster_depths(ModelParams(delta, eps), depth, replicas, seed)
            hits = int((d >= depth).sum())
            cache[eps] = (hits, binomial_stderr(hits, replicas))
        hits, se = cache[eps]
        return hits / replicas, se

    p0, _ = survival(0.0)
    p1, _ = survival(1.0)
    if not (p0 > survival_threshold >= p1):
        raise BracketFailure(
            f"survival at eps=0 is {p0:.4g} and at eps=1 is {p1:.4g}; "
            f"threshold {survival_threshold} is not bracketed at delta={delta}, depth={depth}")
    lo, hi = _bisect(survival, 0.0, 1.0, iterations,
                     lambda ps: ps[0] > survival_threshold)
    ci_lo, _ = _bisect(survival, 0.0, 1.0, iterations,
                       lambda ps: ps[0] - z * ps[1] > survival_threshold)
    _, ci_hi = _bisect(survival, 0.0, 1.0, iterations,
                       lambda ps: ps[0] + z * ps[1] > survival_threshold)
    return CriticalEstimate(
        delta, depth, lo, hi, min(ci_lo, lo), max(ci_hi, hi), survival_threshold,
        replicas, seed,
        f"survival to depth {depth} crosses {survival_threshold} "
        f"({replicas} replicas, {z:g}-sigma interval, dyadic grid 2^-{iterations})")
