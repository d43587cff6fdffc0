"""Coupled color processes and the chain of dominating binary processes.

Two copies ``A`` and ``B`` of the color dynamics run on the same arrows and
the same uniforms ``U(v)``; the fresh color is ``order[floor(q U)]``.  Above
them sit four binary rows:

* ``C``   disagreement of ``A`` and ``B``;
* ``C'``  the dominating chain, copying along arrows, forced to 0 at Dot, and
  at a Both vertex with disagreeing ``C'`` neighbors set to 0 exactly when
  ``U(v)`` falls in a designated color sub-interval ``J(v)``;
* ``C''`` connectivity to the initial row by arrows;
* ``C*``  connectivity to the initial row after enhancement.

The activation bit of the enhancement is the rotated uniform
``((U - start(J)) mod 1) < s``.  Conditionally on the past it is Bernoulli(s)
and independent of the arrow at ``v``, and for ``s = 1/q`` it is 1 exactly
when ``U`` lies in ``J(v)``.  This makes ``C <= C' <= C* <= C''`` hold on
every trajectory.  Dot arrows of the initial row never activate the
enhancement of row 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .dynamics import InitialCondition, _gather, step_rows, uniform_to_color
from .errors import BracketFailure
from .genealogy import CriticalEstimate, binomial_stderr, estimate_epsilon_c
from .lattice import (BOTH, DOT, NE, NW, LatticeWindow, ModelParams, Stream,
                      _uniform_grid, arrow_probabilities, arrows_from_uniforms,
                      left_arrow, replica_keys, right_arrow, uniform_at)


@dataclass(frozen=True, eq=False)
class CoupledState:
    """One row of the coupled ladder for a batch of replicas, shape (R, sites)."""

    i: int
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    cprime: np.ndarray = field(repr=False)
    cdouble: np.ndarray = field(repr=False)
    cstar: np.ndarray = field(repr=False)
    codes: np.ndarray = field(repr=False)
    lam: np.ndarray | None = field(default=None, repr=False)


def initial_state(a0: np.ndarray, b0: np.ndarray, codes0: np.ndarray) -> CoupledState:
    a0 = np.asarray(a0, dtype=np.int64)
    b0 = np.asarray(b0, dtype=np.int64)
    c = a0 != b0
    ones = np.ones_like(c)
    return CoupledState(0, a0, b0, c, c.copy(), ones, ones.copy(), codes0)


def step_coupled(state: CoupledState, codes: np.ndarray, u: np.ndarray,
                 window: LatticeWindow, params: ModelParams, s: float | None = None,
                 order: np.ndarray | None = None) -> CoupledState:
    """Advance every process of the ladder by one row.

    ``codes`` and ``u`` are the arrows and uniforms of the new row; ``order``
    lists the colors of the ``q`` sub-intervals of [0, 1) (default 0..q-1);
    ``s`` defaults to ``1/q``.
    """
    if params.infinite:
        raise ValueError("the coupling ladder needs a finite number of colors")
    if not window.periodic:
        raise ValueError("the coupling ladder runs on a periodic window")
    q = params.q
    s = 1.0 / q if s is None else s
    order = np.arange(q) if order is None else np.asarray(order)
    inverse = np.argsort(order)
    i = state.i + 1
    left, right = window.upper_sites(i)

    slot = uniform_to_color(u, q)
    fresh = order[slot]
    a, need = step_rows(state.a, codes, left, right)
    a = np.where(need, fresh, a)
    b, need = step_rows(state.b, codes, left, right)
    b = np.where(need, fresh, b)
    c = a != b

    al, ar = _gather(state.a, left), _gather(state.a, right)
    bl, br = _gather(state.b, left), _gather(state.b, right)
    cl, cr = _gather(state.c, left), _gather(state.c, right)
    pl, pr = _gather(state.cprime, left), _gather(state.cprime, right)

    # sub-interval J(v) that sends C' to 0 at a mixed Both vertex
    j = np.zeros_like(slot)
    lr = ~pl & pr & ~cl & cr
    rl = pl & ~pr & cl & ~cr
    split_a = (al != ar) & (bl == br)
    split_b = (al == ar) & (bl != br)
    j = np.where(lr & split_a, inverse[br], j)
    j = np.where(lr & split_b, inverse[ar], j)
    j = np.where(rl & split_a, inverse[bl], j)
    j = np.where(rl & split_b, inverse[al], j)
    in_j = slot == j
    if s == 1.0 / q:
        lam = in_j
    else:
        lam = np.mod(u - j / q, 1.0) < s

    both = codes == BOTH
    cprime = np.where(codes == NW, pl, np.where(codes == NE, pr, False))
    cprime = np.where(both, np.where(pl == pr, pl, ~in_j), cprime)

    dl, dr = _gather(state.cdouble, left), _gather(state.cdouble, right)
    cdouble = (left_arrow(codes) & dl) | (right_arrow(codes) & dr)

    if state.i == 0:
        enhanced = codes
    else:
        up = state.codes == DOT
        fire = both & lam & (up[..., left] | up[..., right])
        enhanced = np.where(fire, DOT, codes)
    sl, sr = _gather(state.cstar, left), _gather(state.cstar, right)
    cstar = (left_arrow(enhanced) & sl) | (right_arrow(enhanced) & sr)
    return CoupledState(i, a, b, c, cprime, cdouble, cstar, codes, lam)


def run_coupled(params: ModelParams, window: LatticeWindow, init_a: InitialCondition,
                init_b: InitialCondition, seed: int, replicas, s: float | None = None,
                order=None):
    """Yield the coupled states row by row (row 0 first).

    Arrows and uniforms are those of the forward dynamics, so ``A`` equals
    the plain forward run from ``init_a`` with the same seed.  An i.i.d.
    initial row for ``B`` is drawn from the tie-break stream so that it is
    independent of ``A``'s.
    """
    replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
    akeys = replica_keys(seed, replicas, Stream.ARROW)[:, None]
    fkeys = replica_keys(seed, replicas, Stream.FRESH)[:, None]

    def row(keys, i):
        return _uniform_grid(keys, np.int64(window.key_row(i)), window.key_columns(i)[None, :])

    a0 = init_a.realize(params, window, seed, replicas)
    b0 = init_b.realize(params, window, seed, replicas, stream=Stream.TIEBREAK)
    state = initial_state(a0, b0, arrows_from_uniforms(row(akeys, 0), params))
    yield state
    for i in range(1, window.height):
        state = step_coupled(state, arrows_from_uniforms(row(akeys, i), params),
                             row(fkeys, i), window, params, s, order)
        yield state


# ---------------------------------------------------------------------------
# transition tables


def cprime_transition(params: ModelParams, left: int, right: int) -> float:
    """One-step probability that C' is 1 given its two upper neighbors."""
    p_nw, p_ne, p_b, p_d = arrow_probabilities(params)
    share = 1.0 if params.infinite else (params.q - 1) / params.q
    if left and right:
        return 1.0 - p_d
    if right:
        return p_ne + p_b * share
    if left:
        return p_nw + p_b * share
    return 0.0


def cstar_lower_transition(params: ModelParams, s: float, left: int, right: int) -> float:
    """Lower bound on the one-step probability that C* is 1."""
    p_nw, p_ne, p_b, p_d = arrow_probabilities(params)
    if left and right:
        return 1.0 - p_d
    if right:
        return p_ne + p_b * (1.0 - s)
    if left:
        return p_nw + p_b * (1.0 - s)
    return 0.0


def mean_field_bound(q: float) -> float:
    """Epsilon above which the continuous-time dominating chain dies out."""
    if q == math.inf:
        return 0.5
    if q < 2:
        raise ValueError("q must be at least 2")
    return (q - 2) / (2 * q - 2)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class DiscrepancyStats:
    """Row densities and first all-zero rows (-1 if none) per process."""

    params: ModelParams
    width: int
    horizon: int
    replicas: int
    seed: int
    density: dict = field(repr=False)
    extinction: dict = field(repr=False)
    violations: int

    def extinct_fraction(self, name: str) -> float:
        return float((self.extinction[name] >= 0).mean())

    def summary(self) -> dict:
        out = {"delta": self.params.delta, "epsilon": self.params.epsilon, "q": self.params.q,
               "width": self.width, "horizon": self.horizon, "replicas": self.replicas,
               "seed": self.seed, "violations": self.violations}
        for name, times in self.extinction.items():
            hit = times[times >= 0]
            out[f"{name}_extinct_fraction"] = float(len(hit) / len(times))
            out[f"{name}_mean_extinction_time"] = float(hit.mean()) if len(hit) else None
        return out


PROCESSES = ("c", "cprime", "cstar", "cdouble")


def extinction_experiment(params: ModelParams, width: int, horizon: int, replicas: int,
                          seed: int, inits: tuple[InitialCondition, InitialCondition] | None = None,
                          s: float | None = None, stop_early: bool = True) -> DiscrepancyStats:
    """Run the ladder on a periodic cylinder and record extinction of each row process.

    With ``stop_early`` the run ends once ``C*`` has died in every replica
    (all smaller processes are then dead too).  Violations count vertices
    breaking ``C <= C' <= C* <= C''``.
    """
    inits = inits or (InitialCondition.iid(), InitialCondition.iid())
    window = LatticeWindow(width, horizon + 1)
    dens = {p: np.zeros(horizon + 1) for p in PROCESSES}
    ext = {p: np.full(replicas, -1, dtype=np.int64) for p in PROCESSES}
    violations = 0
    for st in run_coupled(params, window, inits[0], inits[1], seed, np.arange(replicas), s):
        violations += int((st.c & ~st.cprime).sum() + (st.cprime & ~st.cstar).sum()
                          + (st.cstar & ~st.cdouble).sum())
        for p in PROCESSES:
            row = getattr(st, p)
            dens[p][st.i] = row.mean()
            dead = ~row.any(axis=1) & (ext[p] < 0)
            ext[p][dead] = st.i
        if stop_early and (ext["cstar"] >= 0).all():
            break
    return DiscrepancyStats(params, width, horizon, replicas, seed, dens, ext, violations)


@dataclass(frozen=True)
class TransitionCheck:
    pattern: tuple[int, int]
    trials: int
    ones: int
    expected: float

    @property
    def frequency(self) -> float:
        return self.ones / self.trials if self.trials else math.nan

    @property
    def stderr(self) -> float:
        return math.sqrt(self.expected * (1.0 - self.expected) / self.trials) if self.trials else math.nan

    def within(self, z: float = 4.0) -> bool:
        if not self.trials:
            return False
        if self.expected in (0.0, 1.0):
            return self.frequency == self.expected
        return abs(self.frequency - self.expected) <= z * self.stderr


def transition_frequencies(params: ModelParams, width: int, horizon: int, replicas: int,
                           seed: int, process: str = "cprime") -> dict:
    """Empirical one-step conditional frequencies of a ladder process.

    Given the previous row every vertex updates independently, so the count
    of ones for a neighbor pattern is binomial with the table entry as
    success probability.
    """
    window = LatticeWindow(width, horizon + 1)
    trials = np.zeros((2, 2), dtype=np.int64)
    ones = np.zeros((2, 2), dtype=np.int64)
    prev = None
    for st in run_coupled(params, window, InitialCondition.iid(), InitialCondition.iid(),
                          seed, np.arange(replicas)):
        if prev is not None:
            left, right = window.upper_sites(st.i)
            up = getattr(prev, process)
            l = up[:, left].astype(np.int64)
            r = up[:, right].astype(np.int64)
            cur = getattr(st, process)
            idx = 2 * l + r
            trials += np.bincount(idx.ravel(), minlength=4).reshape(2, 2)
            ones += np.bincount(idx[cur].ravel(), minlength=4).reshape(2, 2)
        prev = st
    table = cprime_transition if process == "cprime" else None
    out = {}
    for l in (0, 1):
        for r in (0, 1):
            expected = table(params, l, r) if table else math.nan
            out[(l, r)] = TransitionCheck((l, r), int(trials[l, r]), int(ones[l, r]), expected)
    return out


# ---------------------------------------------------------------------------
# autonomous dominating chain


@njit(cache=True, parallel=True)
def _cprime_extinction(keys, sites, horizon, p01, p10, p11):
    """First all-zero row of the chain started from all ones (-1 if none)."""
    R = keys.shape[0]
    out = np.full(R, -1, dtype=np.int64)
    for r in prange(R):
        cur = np.ones(sites, dtype=np.bool_)
        nxt = np.zeros(sites, dtype=np.bool_)
        for i in range(1, horizon + 1):
            p = i % 2
            alive = False
            for k in range(sites):
                l = cur[(k - 1 + p) % sites]
                rr = cur[(k + p) % sites]
                if l and rr:
                    th = p11
                elif rr:
                    th = p01
                elif l:
                    th = p10
                else:
                    nxt[k] = False
                    continue
                v = uniform_at(keys[r], i, 2 * k + p) < th
                nxt[k] = v
                alive |= v
            cur, nxt = nxt, cur
            if not alive:
                out[r] = i
                break
    return out


def cprime_extinction_times(params: ModelParams, width: int, horizon: int, replicas: int,
                            seed: int) -> np.ndarray:
    """Extinction rows of the dominating chain run on its own.

    Each update compares one uniform with the table entry, so runs at
    different epsilon share their randomness and extinction is monotone in
    epsilon.
    """
    if width % 2:
        raise ValueError("width must be even")
    keys = replica_keys(seed, np.arange(replicas), Stream.ARROW)
    return _cprime_extinction(keys, width // 2, horizon,
                              cprime_transition(params, 0, 1), cprime_transition(params, 1, 0),
                              cprime_transition(params, 1, 1))


def estimate_epsilon_c_prime(delta: float, q: float, width: int, horizon: int, replicas: int,
                             seed: int = 0, target: float = 0.99, iterations: int = 10,
                             z: float = 2.0) -> CriticalEstimate:
    """Smallest dyadic epsilon at which the chain dies by ``horizon`` in ``target`` of runs."""
    cache: dict[float, tuple[float, float]] = {}

    def extinct(eps):
        if eps not in cache:
            t = cprime_extinction_times(ModelParams(delta, eps, q), width, horizon, replicas, seed)
            hits = int((t >= 0).sum())
            cache[eps] = (hits / replicas, binomial_stderr(hits, replicas))
        return cache[eps]

    e0, _ = extinct(0.0)
    e1, _ = extinct(1.0)
    if not (e0 < target <= e1):
        raise BracketFailure(
            f"extinction frequency is {e0:.4g} at eps=0 and {e1:.4g} at eps=1; "
            f"target {target} is not bracketed at delta={delta}, q={q}")

    def bisect(alive):
        lo, hi = 0.0, 1.0
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if alive(extinct(mid)):
                lo = mid
            else:
                hi = mid
        return lo, hi

    lo, hi = bisect(lambda f: f[0] < target)
    ci_lo, _ = bisect(lambda f: f[0] + z * f[1] < target)
    _, ci_hi = bisect(lambda f: f[0] - z * f[1] < target)
    return CriticalEstimate(
        delta, horizon, lo, hi, min(ci_lo, lo), max(ci_hi, hi), target, replicas, seed,
        f"dominating chain (q={q}) dies by row {horizon} on width {width} in at least "
        f"{target} of {replicas} runs ({z:g}-sigma interval, dyadic grid 2^-{iterations})")


@dataclass(frozen=True)
class ThresholdOrdering:
    eps_c: CriticalEstimate
    eps_c_prime: CriticalEstimate

    @property
    def ordered(self) -> bool:
        return self.eps_c_prime.midpoint <= self.eps_c.midpoint

    @property
    def separated(self) -> bool:
        return self.eps_c_prime.ci_hi < self.eps_c.ci_lo

    def verdict(self) -> str:
        if not self.ordered:
            return "estimates out of order"
        if self.separated:
            return ("intervals separate: the ergodicity threshold lies strictly below the "
                    "percolation threshold, so ergodicity does not coincide with non-percolation")
        return "inconclusive: the confidence intervals overlap"

    def as_dict(self) -> dict:
        return {"eps_c": [self.eps_c.eps_lo, self.eps_c.eps_hi],
                "eps_c_ci": [self.eps_c.ci_lo, self.eps_c.ci_hi],
                "eps_c_prime": [self.eps_c_prime.eps_lo, self.eps_c_prime.eps_hi],
                "eps_c_prime_ci": [self.eps_c_prime.ci_lo, self.eps_c_prime.ci_hi],
                "ordered": self.ordered, "separated": self.separated, "verdict": self.verdict()}


def threshold_ordering(delta: float = 0.9, q: float = 3, depth: int = 200,
                       survival_replicas: int = 2000, width: int = 128, horizon: int = 400,
                       chain_replicas: int = 500, seed: int = 0,
                       iterations: int = 8) -> ThresholdOrdering:
    """Estimate both thresholds with confidence intervals and compare them."""
    eps_c = estimate_epsilon_c(delta, depth, survival_replicas, seed=seed, iterations=iterations)
    eps_cp = estimate_epsilon_c_prime(delta, q, width, horizon, chain_replicas, seed=seed,
                                      iterations=iterations)
    return ThresholdOrdering(eps_c, eps_cp)
