"""Enhanced arrow percolation and pivotality.

An activation field ``lambda`` (i.i.d. Bernoulli(s)) turns a Both vertex into
a Dot when ``lambda(v) = 1`` and at least one of its two upper neighbors is a
Dot.  The rule is applied everywhere against the original arrows at once.

The survival probability ``Theta_n(eps, s)`` of the enhanced cluster is
computed exactly by a transfer sweep over the cone.  The state of a level is
the set of its vertices that are reached and not Dot; a vertex's Dot status
is drawn when it first appears as a child, because it is shared by the
enhancement rule of its two lower neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSize
from .genealogy import (SurvivalEstimate, cluster_depths, estimate_from_hits,
                        grow_cluster)
from .lattice import (BOTH, DOT, NE, NW, ArrowField, LatticeWindow, ModelParams,
                      Stream, UniformField, arrow_probabilities,
                      sample_arrow_field, uniform_grid)

MAX_EXACT_ENH_DEPTH = 16
MAX_ENH_ENUMERATION_DEPTH = 3


@dataclass(frozen=True, eq=False)
class LambdaField:
    """Activation bits on a window (one per vertex, compressed rows)."""

    window: LatticeWindow
    values: np.ndarray = field(repr=False)
    s: float

    def __post_init__(self):
        if self.values.shape != (self.window.height, self.window.sites):
            raise ValueError("activation bits do not match the window shape")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError(f"s must lie in [0, 1], got {self.s!r}")


def sample_lambda_field(field: UniformField, s: float, window: LatticeWindow) -> LambdaField:
    """Bits ``U < s`` from the activation stream (threshold coupling in s)."""
    u = uniform_grid(field, window, Stream.LAMBDA)
    return LambdaField(window, (u < s).astype(np.uint8), s)


def enhance(omega: ArrowField, lam: LambdaField) -> ArrowField:
    """Apply the enhancement rule simultaneously at every vertex.

    Upper neighbors outside the window (row 0, or past a FREE edge) count
    as non-Dot.
    """
    if omega.window != lam.window:
        raise ValueError("arrow and activation fields live on different windows")
    window = omega.window
    codes = omega.codes
    out = codes.copy()
    for i in range(1, window.height):
        left, right = window.upper_sites(i)
        up = codes[i - 1] == DOT
        dot_l = np.where(left >= 0, up[np.maximum(left, 0)], False)
        dot_r = np.where(right >= 0, up[np.maximum(right, 0)], False)
        fire = (codes[i] == BOTH) & (lam.values[i] == 1) & (dot_l | dot_r)
        out[i] = np.where(fire, DOT, codes[i])
    return ArrowField(window, out)


@dataclass(frozen=True)
class Cone:
    """Vertices reachable from the origin in at most ``n`` steps.

    Vertex ``(l, k)`` sits at level ``l`` (row ``t = -l``), position
    ``z = -l + 2k``; its upper neighbors are ``(l+1, k)`` and ``(l+1, k+1)``.
    """

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("cone height must be nonnegative")

    def __len__(self) -> int:
        return (self.n + 1) * (self.n + 2) // 2

    def vertices(self) -> list[tuple[int, int]]:
        return [(l, k) for l in range(self.n + 1) for k in range(l + 1)]

    @staticmethod
    def position(l: int, k: int) -> tuple[int, int]:
        """Lattice coordinate ``(z, t)``."""
        return -l + 2 * k, -l


# ---------------------------------------------------------------------------
# exact transfer sweep


def _vertex_laws(params: ModelParams, s: float, n: int, overrides: dict) -> list[np.ndarray]:
    """Per level, rows (pNW, pNE, pB, pD, s) for every vertex.

    ``overrides`` maps ``(l, k)`` to ``{"omega": code, "lam": 0 | 1}``.
    """
    base = np.append(arrow_probabilities(params), s)
    laws = [np.tile(base, (l + 1, 1)) for l in range(n + 1)]
    for (l, k), ov in overrides.items():
        if not (0 <= l <= n and 0 <= k <= l):
            raise ValueError(f"vertex {(l, k)} is not in the cone of height {n}")
        if "omega" in ov:
            laws[l][k, :4] = 0.0
            laws[l][k, int(ov["omega"])] = 1.0
        if "lam" in ov:
            laws[l][k, 4] = float(ov["lam"])
    return laws


def _parent_tensor(law: np.ndarray, q_next: float, final: bool) -> np.ndarray:
    """M[alive, carry, out, carry'] for one parent; carry = 2 * hit + childDot.

    ``law`` is the parent's (pNW, pNE, pB, pD, s); ``q_next`` the Dot
    probability of the child to the right, drawn here.
    """
    p_nw, p_ne, p_b, p_d, s = law
    live = 1.0 - p_d
    if live > 0.0:
        types = ((p_nw / live, 1, 0, False), (p_ne / live, 0, 1, False),
                 (p_b * (1.0 - s) / live, 1, 1, False), (p_b * s / live, 1, 1, True))
    else:
        types = ()
    M = np.zeros((2, 4, 2, 4))
    for h in (0, 1):
        for dk in (0, 1):
            c = 2 * h + dk
            for dn, pn in ((0, 1.0 - q_next), (1, q_next)):
                if pn == 0.0:
                    continue
                # dead or unreached parent: nothing emitted
                reached = h
                out = reached if final else reached & (1 - dk)
                M[0, c, out, dn] += pn
                for pt, el, er, fragile in types:
                    if pt == 0.0:
                        continue
                    if fragile and (dk or dn):
                        el = er = 0
                    reached = h | el
                    out = reached if final else reached & (1 - dk)
                    M[1, c, out, 2 * er + dn] += pt * pn
    return M


def _advance(P: np.ndarray, laws: list[np.ndarray], l: int, final: bool) -> np.ndarray:
    """Law of the next level's state from the law ``P`` of level ``l``."""
    m = l + 1
    child = laws[l + 1][:, 3]
    carry0 = np.array([1.0 - child[0], child[0], 0.0, 0.0])
    T = P.reshape(-1)[:, None] * carry0[None, :]
    for k in range(m):
        M = _parent_tensor(laws[l][k], child[k + 1], final)
        T = T.reshape(2 ** k, 2, 2 ** (m - 1 - k), 4)
        T = np.einsum("aibc,icjd->ajbd", T, M)
    T = T.reshape(2 ** m, 4)
    # the last child only receives the carried hit
    hit = T[:, 2] + T[:, 3]
    last = np.stack([T[:, 0] + T[:, 1], hit], axis=-1) if final else \
        np.stack([T[:, 0] + T[:, 1] + T[:, 3], T[:, 2]], axis=-1)
    return last.reshape(-1)


def exact_theta_enh(params: ModelParams, s: float, n: int, overrides: dict | None = None) -> float:
    """Exact ``P(enhanced cluster of the origin reaches level n)``.

    Vertex-level overrides fix the arrow state or activation bit of single
    vertices of the cone.
    """
    if n < 0:
        raise ValueError("depth must be nonnegative")
    if n > MAX_EXACT_ENH_DEPTH:
        raise InfeasibleSize(f"exact enhanced survival is capped at depth {MAX_EXACT_ENH_DEPTH}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s!r}")
    if n == 0:
        return 1.0
    laws = _vertex_laws(params, s, n, overrides or {})
    p_d0 = laws[0][0, 3]
    P = np.array([p_d0, 1.0 - p_d0])
    for l in range(n):
        P = _advance(P, laws, l, final=(l == n - 1))
    return float(min(max(1.0 - P[0], 0.0), 1.0))


def theta_n_enh(params: ModelParams, s: float, n: int, mode: str = "exact",
                replicas: int = 0, seed: int = 0) -> SurvivalEstimate:
    """Enhanced survival to level ``n``; ``mode`` is ``"exact"`` or ``"mc"``."""
    if mode == "exact":
        return SurvivalEstimate(n, exact_theta_enh(params, s, n), 0.0, 0, None, True)
    if mode == "mc":
        if replicas < 1:
            raise ValueError("Monte Carlo mode needs replicas >= 1")
        depths = cluster_depths(params, n, replicas, seed, s=s)
        return estimate_from_hits(int((depths >= n).sum()), replicas, n, seed)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# brute-force oracle


def _enumerated_reach(omega: np.ndarray, lam: np.ndarray, n: int, index: dict) -> np.ndarray:
    """Vectorized A_n over configuration rows (levels 0..n of omega, 0..n-1 of lam)."""
    R = omega.shape[0]
    reached = np.ones(R, dtype=bool)[None, :]
    for l in range(n):
        nxt = np.zeros((l + 2, R), dtype=bool)
        for k in range(l + 1):
            c = omega[:, index[(l, k)]]
            dot_up = (omega[:, index[(l + 1, k)]] == DOT) | (omega[:, index[(l + 1, k + 1)]] == DOT)
            c = np.where((c == BOTH) & (lam[:, index[(l, k)]] == 1) & dot_up, DOT, c)
            r = reached[k]
            nxt[k] |= r & ((c == NW) | (c == BOTH))
            nxt[k + 1] |= r & ((c == NE) | (c == BOTH))
        reached = nxt
    return reached.any(axis=0)


@dataclass(frozen=True)
class EnumerationResult:
    theta: float
    omega_pivotal: dict
    lambda_pivotal: dict


def enumerate_enhanced(params: ModelParams, s: float, n: int) -> EnumerationResult:
    """Survival and pivotality by summing over every (omega, lambda) on the cone.

    Level-``n`` arrows enter only through their Dot status, so they are
    enumerated as Dot / non-Dot.
    """
    if n > MAX_ENH_ENUMERATION_DEPTH:
        raise InfeasibleSize(f"enumeration is capped at depth {MAX_ENH_ENUMERATION_DEPTH}")
    cone = Cone(n)
    verts = cone.vertices()
    index = {v: j for j, v in enumerate(verts)}
    inner = [v for v in verts if v[0] < n]
    top = [v for v in verts if v[0] == n]
    probs = arrow_probabilities(params)
    # axes: 4 states per inner vertex, 2 per top vertex, 2 activation bits per inner vertex
    shape = (4,) * len(inner) + (2,) * len(top) + (2,) * len(inner)
    grid = np.indices(shape).reshape(len(shape), -1).T.astype(np.uint8)
    omega = np.empty((len(grid), len(verts)), dtype=np.uint8)
    for j, v in enumerate(inner):
        omega[:, index[v]] = grid[:, j]
    for j, v in enumerate(top):
        omega[:, index[v]] = np.where(grid[:, len(inner) + j] == 1, DOT, NW)
    lam = np.zeros_like(omega)
    for j, v in enumerate(inner):
        lam[:, index[v]] = grid[:, len(inner) + len(top) + j]

    w_inner = probs[omega[:, [index[v] for v in inner]]] if inner else np.ones((len(grid), 0))
    top_dot = omega[:, [index[v] for v in top]] == DOT
    w_top = np.where(top_dot, probs[DOT], 1.0 - probs[DOT])
    lam_bits = lam[:, [index[v] for v in inner]]
    w_lam = np.where(lam_bits == 1, s, 1.0 - s)
    factors = np.concatenate([w_inner, w_top, w_lam], axis=1)
    weight = factors.prod(axis=1)
    theta = float(weight[_enumerated_reach(omega, lam, n, index)].sum())

    def weight_without(col):
        f = factors.copy()
        f[:, col] = 1.0
        return f.prod(axis=1)

    omega_piv, lambda_piv = {}, {}
    for v in verts:
        j = index[v]
        col = inner.index(v) if v in inner else len(inner) + top.index(v)
        # configurations where v is Both (inner) or non-Dot (top) carry the
        # remaining weight once, so restrict to one representative value of v
        rep = omega[:, j] == (BOTH if v in inner else NW)
        w = weight_without(col)[rep]
        a = omega[rep].copy()
        b = omega[rep].copy()
        a[:, j] = BOTH
        b[:, j] = DOT
        lr = lam[rep]
        piv = _enumerated_reach(a, lr, n, index) & ~_enumerated_reach(b, lr, n, index)
        omega_piv[v] = float(w[piv].sum())
        if v in inner:
            lcol = len(inner) + len(top) + inner.index(v)
            rep = lam[:, j] == 0
            w = weight_without(lcol)[rep]
            l0 = lam[rep].copy()
            l1 = lam[rep].copy()
            l1[:, j] = 1
            o = omega[rep]
            piv = _enumerated_reach(o, l0, n, index) & ~_enumerated_reach(o, l1, n, index)
            lambda_piv[v] = float(w[piv].sum())
        else:
            lambda_piv[v] = 0.0
    return EnumerationResult(theta, omega_piv, lambda_piv)


# ---------------------------------------------------------------------------
# pivotality


@dataclass(frozen=True)
class PivotalCounts:
    """Per-vertex pivotality probabilities for reaching level ``n``."""

    params: ModelParams
    s: float
    n: int
    omega: dict = field(repr=False)
    lam: dict = field(repr=False)

    @property
    def sum_omega(self) -> float:
        return math.fsum(self.omega.values())

    @property
    def sum_lambda(self) -> float:
        return math.fsum(self.lam.values())


def pivotal_counts(params: ModelParams, s: float, n: int) -> PivotalCounts:
    """Exact pivotality probabilities through the transfer sweep.

    Reaching level ``n`` is monotone in each single coordinate (Dot below
    Both, activation 1 below 0), so the probability of being pivotal is the
    difference of the two conditioned survival probabilities.
    """
    if n < 1:
        raise ValueError("depth must be at least 1")
    omega, lam = {}, {}
    for v in Cone(n).vertices():
        hi = exact_theta_enh(params, s, n, {v: {"omega": BOTH}})
        lo = exact_theta_enh(params, s, n, {v: {"omega": DOT}})
        omega[v] = max(hi - lo, 0.0)
        if v[0] < n:
            hi = exact_theta_enh(params, s, n, {v: {"lam": 0}})
            lo = exact_theta_enh(params, s, n, {v: {"lam": 1}})
            lam[v] = max(hi - lo, 0.0)
        else:
            lam[v] = 0.0
    return PivotalCounts(params, s, n, omega, lam)


def gamma(delta: float, epsilon: float, s: float) -> float:
    """Coefficient bounding omega-pivotality by lambda-pivotality."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("gamma needs 0 < epsilon < 1")
    if not 0.0 < delta <= 1.0:
        raise ValueError("gamma needs delta > 0")
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    a = delta * (1.0 - epsilon)
    b = delta * epsilon
    return (1.0 - s) / a + 1.0 / (a * b) + 2.0 * s / b


# ---------------------------------------------------------------------------
# derivative checks


def _derivative(f, x: float, h: float) -> float:
    """Second-order difference; one-sided at the ends of [0, 1]."""
    if x - h >= 0.0 and x + h <= 1.0:
        return (f(x + h) - f(x - h)) / (2.0 * h)
    if x + 2 * h <= 1.0:
        return (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2 * h)) / (2.0 * h)
    return (3.0 * f(x) - 4.0 * f(x - h) + f(x - 2 * h)) / (2.0 * h)


@dataclass(frozen=True)
class RussoReport:
    params: ModelParams
    s: float
    n: int
    h: float
    d_eps: float
    pred_eps: float
    d_s: float
    pred_s: float
    err_eps: float
    err_s: float
    err_eps_half: float
    err_s_half: float
    tolerance: float = 1e-6
    noise_floor: float = 1e-11

    @property
    def max_error(self) -> float:
        return max(self.err_eps, self.err_s)

    @staticmethod
    def _second_order(e, e_half, floor):
        # at the rounding floor the difference is exact already
        if e <= floor:
            return e_half <= floor * 4
        return 3.0 <= e / max(e_half, 1e-300) <= 5.0

    @property
    def second_order(self) -> bool:
        return (self._second_order(self.err_eps, self.err_eps_half, self.noise_floor)
                and self._second_order(self.err_s, self.err_s_half, self.noise_floor))

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance and self.second_order


def russo_check(params: ModelParams, s: float, n: int, h: float = 1e-4) -> RussoReport:
    """Finite differences of exact survival against the pivotal sums."""
    piv = pivotal_counts(params, s, n)

    def in_eps(e):
        return exact_theta_enh(params.with_epsilon(e), s, n)

    def in_s(x):
        return exact_theta_enh(params, x, n)

    eps = params.epsilon
    pred_eps = -params.delta * piv.sum_omega
    pred_s = -piv.sum_lambda
    d_eps = _derivative(in_eps, eps, h)
    d_s = _derivative(in_s, s, h)
    d_eps2 = _derivative(in_eps, eps, h / 2)
    d_s2 = _derivative(in_s, s, h / 2)
    return RussoReport(params, s, n, h, d_eps, pred_eps, d_s, pred_s,
                       abs(d_eps - pred_eps), abs(d_s - pred_s),
                       abs(d_eps2 - pred_eps), abs(d_s2 - pred_s))


@dataclass(frozen=True)
class InequalityReport:
    params: ModelParams
    s: float
    n: int
    sum_omega: float
    sum_lambda: float
    gamma: float

    @property
    def margin(self) -> float:
        return self.gamma * self.sum_lambda - self.sum_omega

    @property
    def passed(self) -> bool:
        # relative slack only for rounding in the sums
        return self.sum_omega <= self.gamma * self.sum_lambda * (1.0 + 1e-12) + 1e-15


def pivotal_inequality_check(params: ModelParams, s: float, n: int,
                             counts: PivotalCounts | None = None) -> InequalityReport:
    counts = counts or pivotal_counts(params, s, n)
    return InequalityReport(params, s, n, counts.sum_omega, counts.sum_lambda,
                            gamma(params.delta, params.epsilon, s))


# ---------------------------------------------------------------------------
# pathwise comparison


def enhanced_reach_pair(seed: int, replica: int, params: ModelParams, s: float,
                        depth: int):
    """Reached sets of the plain and the enhanced cluster on one sampled field."""
    window = LatticeWindow(2 * depth + 4, depth + 2, "free", x0=-(depth + 2), t0=-(depth + 1))
    f = UniformField(seed, replica)
    omega = sample_arrow_field(f, params, window)
    lam = sample_lambda_field(f, s, window)
    origin = (0, window.height - 1)
    return (grow_cluster(omega, origin, depth),
            grow_cluster(enhance(omega, lam), origin, depth))
