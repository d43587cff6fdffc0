"""Box events for the block renormalization of arrow percolation.

A box ``B(k, n)`` is ``6k`` wide and ``n`` high.  In box-local coordinates it
holds the vertices ``(x, y)`` with ``|x| <= 3k``, ``0 <= y < n`` and ``x + y``
even; its lowest row carries the start interval ``I = [-2k, 2k]`` and the row
``y = n`` just above it carries the targets ``F1 = [-3k, -k]`` and
``F2 = [k, 3k]``.  A path counts as inside the box when every vertex except
the last lies in the box (side columns included).

Arrows at box vertex ``(x, y)`` are read from the uniform field at lattice
coordinate ``(row=-y, col=x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.special import ndtr

from .genealogy import _code, binomial_stderr
from .lattice import (BOTH, DOT, NE, NW, ModelParams, Stream, UniformField,
                      arrow_from_uniform, replica_keys, uniform_at)

P_C_ORIENTED_SITE_BOUND = 0.819


@dataclass(frozen=True)
class BoxSpec:
    k: int
    n: int

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise ValueError("box needs k >= 1 and n >= 1")

    @property
    def width(self) -> int:
        return 6 * self.k

    @property
    def half(self) -> int:
        return 3 * self.k

    def start_offsets(self) -> np.ndarray:
        """Vertices of I (lowest row, even x)."""
        lo = -2 * self.k
        lo += lo % 2
        return np.arange(lo, 2 * self.k + 1, 2)

    def target(self, which: int) -> tuple[int, int]:
        k = self.k
        return (-3 * k, -k) if which == 1 else (k, 3 * k)

    def contains(self, x: int, y: int) -> bool:
        return abs(x) <= self.half and 0 <= y < self.n and (x + y) % 2 == 0


@dataclass(frozen=True)
class BoxEventEstimate:
    v_offset: int
    p_hat: float
    stderr: float
    replicas: int
    params: ModelParams
    seed: int


@njit(cache=True, parallel=True)
def _box_events(akeys, k, n, t1, t2, t3):
    """Per replica and start vertex: (reaches F1, reaches F2) inside the box."""
    R = akeys.shape[0]
    half = 3 * k
    W = 2 * half + 1
    starts = np.arange(-2 * k + (2 * k) % 2, 2 * k + 1, 2)
    out = np.zeros((R, starts.shape[0], 2), dtype=np.bool_)
    for r in prange(R):
        key = akeys[r]
        f1 = np.zeros(W + 2, dtype=np.bool_)
        f2 = np.zeros(W + 2, dtype=np.bool_)
        g1 = np.zeros(W + 2, dtype=np.bool_)
        g2 = np.zeros(W + 2, dtype=np.bool_)
        # row y = n: targets; index = x + half + 1, entries 0 and W + 1 stay False
        for x in range(-half, half + 1):
            if (x + n) % 2 == 0:
                f1[x + half + 1] = -3 * k <= x <= -k
                f2[x + half + 1] = k <= x <= 3 * k
        for y in range(n - 1, -1, -1):
            for x in range(-half, half + 1):
                j = x + half + 1
                g1[j] = False
                g2[j] = False
                if (x + y) % 2:
                    continue
                c = _code(uniform_at(key, -y, x), t1, t2, t3)
                if c == NW or c == BOTH:
                    g1[j] |= f1[j - 1]
                    g2[j] |= f2[j - 1]
                if c == NE or c == BOTH:
                    g1[j] |= f1[j + 1]
                    g2[j] |= f2[j + 1]
            f1, g1 = g1, f1
            f2, g2 = g2, f2
        for m in range(starts.shape[0]):
            j = starts[m] + half + 1
            out[r, m, 0] = f1[j]
            out[r, m, 1] = f2[j]
    return out


def box_event_matrix(box: BoxSpec, params: ModelParams, replicas: int, seed: int,
                     first_replica: int = 0) -> np.ndarray:
    """Boolean (replicas, |I|) matrix of the events A_v."""
    reps = np.arange(first_replica, first_replica + replicas, dtype=np.int64)
    t1, t2, t3 = params.thresholds()
    hits = _box_events(replica_keys(seed, reps, Stream.ARROW), box.k, box.n, t1, t2, t3)
    return hits[..., 0] & hits[..., 1]


def box_event_mc(v_offset: int, box: BoxSpec, params: ModelParams, replicas: int,
                 seed: int) -> BoxEventEstimate:
    starts = box.start_offsets()
    if v_offset not in starts:
        raise ValueError(f"v_offset {v_offset} is not a vertex of I = [-2k, 2k]")
    col = box_event_matrix(box, params, replicas, seed)[:, int(np.flatnonzero(starts == v_offset)[0])]
    hits = int(col.sum())
    return BoxEventEstimate(v_offset, hits / replicas, binomial_stderr(hits, replicas),
                            replicas, params, seed)


# ---------------------------------------------------------------------------
# extremal walks


@dataclass(frozen=True)
class ExtremalPaths:
    """Positions after each step; a path stops early at a Dot."""

    leftmost: np.ndarray
    rightmost: np.ndarray
    random: np.ndarray


def _walk(field: UniformField, params: ModelParams, start: int, n: int, rule) -> np.ndarray:
    xs = [start]
    x = start
    for y in range(n):
        c = arrow_from_uniform(field.at(-y, x), params)
        if c == DOT:
            break
        x += rule(c, x, y)
        xs.append(x)
    return np.array(xs)


def extremal_paths(field: UniformField, params: ModelParams, start: int, n: int) -> ExtremalPaths:
    """Leftmost, rightmost and random-choice arrow paths from ``(start, 0)``.

    The random-choice path picks a side at Both vertices from the tie-break
    stream.
    """
    def right(c, x, y):
        return -1 if c == NW else 1

    def left(c, x, y):
        return 1 if c == NE else -1

    def rand(c, x, y):
        if c == BOTH:
            return -1 if field.at(-y, x, Stream.TIEBREAK) < 0.5 else 1
        return -1 if c == NW else 1

    return ExtremalPaths(_walk(field, params, start, n, left),
                         _walk(field, params, start, n, right),
                         _walk(field, params, start, n, rand))


@njit(cache=True)
def _walk_increments(akeys, tkeys, n, t1, t2, t3, kind):
    """Steps of the rightmost (kind 1) or random-choice (kind 0) walk; 0 = died."""
    R = akeys.shape[0]
    out = np.zeros((R, n), dtype=np.int8)
    for r in range(R):
        x = 0
        for y in range(n):
            c = _code(uniform_at(akeys[r], -y, x), t1, t2, t3)
            if c == DOT:
                break
            if c == BOTH:
                if kind == 1:
                    step = 1
                else:
                    step = -1 if uniform_at(tkeys[r], -y, x) < 0.5 else 1
            else:
                step = -1 if c == NW else 1
            out[r, y] = step
            x += step
    return out


def walk_increments(params: ModelParams, n: int, replicas: int, seed: int,
                    kind: str = "rightmost") -> np.ndarray:
    reps = np.arange(replicas, dtype=np.int64)
    t1, t2, t3 = params.thresholds()
    return _walk_increments(replica_keys(seed, reps, Stream.ARROW),
                            replica_keys(seed, reps, Stream.TIEBREAK), n, t1, t2, t3,
                            1 if kind == "rightmost" else 0)


def walk_event(box: BoxSpec, path: np.ndarray, which: int) -> bool:
    """Path survives n steps inside the box and ends in target ``which``."""
    if len(path) != box.n + 1:
        return False
    if np.abs(path[:-1]).max() > box.half:
        return False
    lo, hi = box.target(which)
    return bool(lo <= path[-1] <= hi)


# ---------------------------------------------------------------------------
# normal approximation


@dataclass(frozen=True)
class CLTBound:
    n: int
    delta: float
    k: float
    a_symmetric: float
    a_drifted: float
    p_s1_interval: float
    p_s1_barrier: float
    p_s2_interval: float
    p_s2_barrier: float
    intersection_bound: float

    @property
    def probabilities(self) -> tuple[float, float, float, float]:
        return (self.p_s1_interval, self.p_s1_barrier, self.p_s2_interval, self.p_s2_barrier)


def clt_box_bound(n: int, delta: float) -> CLTBound:
    """Normal approximations for the two walks with ``k = n delta / 4``.

    The symmetric walk must end in ``[-k, k]`` without going below ``-k``;
    the drifted walk (mean ``delta``, variance ``1 - delta^2``) must end in
    ``[3k, 5k]`` without going above ``5k``.  The intersection bound is one
    minus the summed failure masses.
    """
    k = n * delta / 4.0
    if k < 1:
        raise ValueError("need n * delta / 4 >= 1")
    a1 = math.sqrt(n) * delta / 4.0
    var2 = 1.0 - delta * delta
    a2 = math.inf if var2 <= 0 else a1 / math.sqrt(var2)
    p1 = float(ndtr(a1) - ndtr(-a1))
    b1 = float(1.0 - 2.0 * ndtr(-a1))
    p2 = float(ndtr(a2) - ndtr(-a2))
    b2 = float(1.0 - 2.0 * ndtr(-a2))
    bound = 1.0 - ((1 - p1) + (1 - b1) + (1 - p2) + (1 - b2))
    return CLTBound(n, delta, k, a1, a2, p1, b1, p2, b2, bound)


# ---------------------------------------------------------------------------
# certificate


@dataclass(frozen=True)
class RenormCertificate:
    params: ModelParams
    box: BoxSpec
    replicas: int
    seed: int
    starts: np.ndarray = field(repr=False)
    p_hat: np.ndarray = field(repr=False)
    min_p: float
    argmin: int
    min_stderr: float
    p_pair: float
    p_all: float
    threshold: float
    z: float

    @property
    def passed(self) -> bool:
        return self.min_p - self.z * self.min_stderr > self.threshold

    def as_dict(self) -> dict:
        return {
            "delta": self.params.delta, "epsilon": self.params.epsilon,
            "k": self.box.k, "n": self.box.n, "replicas": self.replicas, "seed": self.seed,
            "min_p": self.min_p, "argmin": self.argmin, "min_stderr": self.min_stderr,
            "p_pair": self.p_pair, "p_all": self.p_all,
            "threshold": self.threshold, "z": self.z, "passed": self.passed,
        }


def renorm_certificate(params: ModelParams, box: BoxSpec, replicas: int, seed: int,
                       threshold: float = P_C_ORIENTED_SITE_BOUND,
                       z: float = 3.0) -> RenormCertificate:
    """Estimate P(A_v) for every v in I and compare the minimum with ``threshold``.

    PASS requires the minimum to exceed the threshold by ``z`` standard
    errors.  Also reported: P(A_{-2k} and A_{2k}) and P(all A_v).
    """
    A = box_event_matrix(box, params, replicas, seed)
    starts = box.start_offsets()
    p = A.mean(axis=0)
    j = int(np.argmin(p))
    hits = int(A[:, j].sum())
    return RenormCertificate(
        params, box, replicas, seed, starts, p, float(p[j]), int(starts[j]),
        binomial_stderr(hits, replicas), float((A[:, 0] & A[:, -1]).mean()),
        float(A.all(axis=1).mean()), threshold, z)


def positive_epsilon_certificate(params: ModelParams, box: BoxSpec, replicas: int,
                                 seed: int, candidates=None, **kw) -> RenormCertificate | None:
    """Largest candidate epsilon > 0 at which the certificate still passes."""
    if candidates is None:
        candidates = [2.0 ** -j for j in range(3, 11)]
    for eps in sorted(candidates, reverse=True):
        cert = renorm_certificate(params.with_epsilon(eps), box, replicas, seed, **kw)
        if cert.passed:
            return cert
    return None
