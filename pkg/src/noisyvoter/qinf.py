"""W-arrows, the cluster G of the initial row, and color-invariance checks.

``W`` keeps single arrows and Dots of ``X``; a Both survives only when the
colors of its two upper neighbors agree and becomes a Dot otherwise.  The
initial row has ``W = Dot``.  Colors then copy along ``W``-arrows and take a
fresh value at ``W``-Dots, which reproduces the forward dynamics.  ``G`` is
the set of vertices joined to the initial row by ``W``-arrows.

``V'`` is the region whose arrow paths can only reach the initial row at
``z >= 0``: the vertices ``(z, t)`` with ``z >= t`` (rows counted from the
initial row, ``t = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2_contingency

from .dynamics import (GHOST, InitialCondition, _gather, canonical_partition,
                       forward_rows)
from .genealogy import binomial_stderr
from .lattice import (BOTH, DOT, LatticeWindow, ModelParams, left_arrow,
                      right_arrow)


def in_v_prime(z, t) -> np.ndarray:
    """Membership in ``V'`` for row ``t >= 0`` below the initial row."""
    return np.asarray(z) >= np.asarray(t)


def leftmost_v_prime(t: int) -> tuple[int, int]:
    return t, t


def w_row(codes: np.ndarray, prev_values: np.ndarray, window: LatticeWindow, i: int) -> np.ndarray:
    """W-arrows of row ``i >= 1`` from its X-arrows and the colors of row ``i - 1``."""
    left, right = window.upper_sites(i)
    zl = _gather(prev_values, left)
    zr = _gather(prev_values, right)
    split = (codes == BOTH) & ((zl != zr) | (zl == GHOST) | (zr == GHOST))
    return np.where(split, DOT, codes).astype(np.uint8)


def derive_w_arrows(codes: np.ndarray, values: np.ndarray, window: LatticeWindow) -> np.ndarray:
    """W-arrows of a whole run; ``codes`` and ``values`` are (..., height, sites)."""
    codes = np.asarray(codes)
    values = np.asarray(values)
    if codes.shape != values.shape or codes.shape[-2:] != (window.height, window.sites):
        raise ValueError("arrows and colors are not aligned with the window")
    w = np.empty_like(codes, dtype=np.uint8)
    w[..., 0, :] = DOT
    for i in range(1, window.height):
        w[..., i, :] = w_row(codes[..., i, :], values[..., i - 1, :], window, i)
    return w


def g_row(w: np.ndarray, prev_g: np.ndarray, window: LatticeWindow, i: int) -> np.ndarray:
    """Membership in G of row ``i`` given that of row ``i - 1``."""
    left, right = window.upper_sites(i)
    gl = np.where(left >= 0, prev_g[..., np.maximum(left, 0)], False)
    gr = np.where(right >= 0, prev_g[..., np.maximum(right, 0)], False)
    return (left_arrow(w) & gl) | (right_arrow(w) & gr)


# ---------------------------------------------------------------------------
# decay of P(v in G)


@dataclass(frozen=True)
class GClusterStats:
    """Estimated ``P(v in G)`` at ``positions`` of each row of ``V'``.

    ``hits[i, m]`` counts replicas with vertex ``(t + 2m, t)`` in G.
    """

    params: ModelParams
    depth: int
    replicas: int
    seed: int
    hits: np.ndarray = field(repr=False)

    @property
    def p_hat(self) -> np.ndarray:
        return self.hits / self.replicas

    @property
    def sup(self) -> np.ndarray:
        return self.p_hat.max(axis=1)

    @property
    def sup_stderr(self) -> np.ndarray:
        j = self.p_hat.argmax(axis=1)
        return np.array([binomial_stderr(int(self.hits[i, m]), self.replicas)
                         for i, m in enumerate(j)])

    @property
    def bound(self) -> float:
        return 1.0 - self.params.delta * self.params.epsilon

    def ratios(self) -> np.ndarray:
        """``sup(row i) / sup(row i - 1)`` for i >= 1 (nan without data)."""
        s = self.sup
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s[:-1] > 0, s[1:] / s[:-1], np.nan)

    def ratio_stderr(self) -> np.ndarray:
        s = self.sup
        se = self.sup_stderr
        out = np.full(self.depth, np.nan)
        for i in range(self.depth):
            den, num = s[i], s[i + 1]
            if den == 0:
                continue
            # an empty row still carries the smoothed error of its estimate
            out[i] = math.hypot(se[i + 1], num * se[i] / den) / den
        return out

    def decay_violations(self, z: float = 4.0) -> list[int]:
        """Rows whose sup-ratio exceeds the bound by more than ``z`` standard errors."""
        r = self.ratios()
        se = self.ratio_stderr()
        bad = np.flatnonzero(np.nan_to_num(r - self.bound - z * se, nan=-1.0) > 0)
        return [int(i) + 1 for i in bad]

    def tested_rows(self) -> list[int]:
        return [int(i) + 1 for i in np.flatnonzero(~np.isnan(self.ratios()))]

    def partial_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative ``sum_i P(v_i in G)`` and its geometric bound."""
        est = np.cumsum(self.p_hat[:, 0])
        geo = self.sup[0] * np.cumsum(self.bound ** np.arange(self.depth + 1))
        return est, geo


def g_decay_profile(params: ModelParams, depth: int, replicas: int, seed: int,
                    init: InitialCondition | None = None, positions: int = 4,
                    batch: int = 20000) -> GClusterStats:
    """Monte Carlo estimate of ``P(v in G)`` on rows ``0..depth`` of ``V'``.

    Runs on a FREE window starting at ``z = 0`` wide enough that the cones
    of the sampled vertices never meet its right edge.
    """
    init = init or InitialCondition.constant(0)
    width = 2 * (depth + positions) + 2
    window = LatticeWindow(width, depth + 1, "free")
    hits = np.zeros((depth + 1, positions), dtype=np.int64)
    for start in range(0, replicas, batch):
        reps = np.arange(start, min(start + batch, replicas))
        init_rows = init.realize(params, window, seed, reps)
        g = None
        prev = None
        for i, codes, values in forward_rows(init_rows, params, window, seed, reps):
            if i == 0:
                g = np.ones(values.shape, dtype=bool)
            else:
                g = g_row(w_row(codes, prev, window, i), g, window, i)
            prev = values
            sites = [window.site_of(i + 2 * m, i) for m in range(positions)]
            hits[i] += g[:, sites].sum(axis=0)
    return GClusterStats(params, depth, replicas, seed, hits)


# ---------------------------------------------------------------------------
# color permutation invariance


@dataclass(frozen=True)
class PermutationReport:
    params: ModelParams
    width: int
    horizon: int
    replicas: int
    seed: int
    colors: tuple
    p_values: dict
    alpha: float

    @property
    def passed(self) -> bool:
        level = self.alpha / len(self.p_values)
        return all(p > level for p in self.p_values.values())

    def as_dict(self) -> dict:
        return {"delta": self.params.delta, "epsilon": self.params.epsilon, "q": self.params.q,
                "width": self.width, "horizon": self.horizon, "replicas": self.replicas,
                "seed": self.seed, "colors": list(self.colors), "alpha": self.alpha,
                "p_values": {str(k): v for k, v in self.p_values.items()}, "passed": self.passed}


def _pooled_table(samples: list[np.ndarray], q: int, min_expected: float = 5.0) -> np.ndarray:
    """Contingency table of pattern codes; sparse columns pooled into one."""
    cols = int(q) ** samples[0].shape[1]
    table = np.stack([np.bincount(s @ (int(q) ** np.arange(s.shape[1])), minlength=cols)
                      for s in samples])
    table = table[:, table.sum(axis=0) > 0]
    total = table.sum()
    expected = table.sum(axis=0) * table.sum(axis=1).min() / total
    keep = expected >= min_expected
    if (~keep).any():
        table = np.column_stack([table[:, keep], table[:, ~keep].sum(axis=1)])
    return table[:, table.sum(axis=0) > 0]


def permutation_invariance_test(params: ModelParams, width: int, horizon: int, replicas: int,
                                seed: int, colors=None, alpha: float = 1e-3,
                                max_k: int = 3) -> PermutationReport:
    """Compare color patterns at time ``horizon`` across constant starts.

    Each start color uses its own block of replica indices, so the runs are
    independent.  For ``k = 1..max_k`` consecutive sites of the final row a
    chi-square homogeneity test compares the pattern counts; the family is
    Bonferroni-corrected at ``alpha``.
    """
    if params.infinite:
        raise ValueError("permutation invariance is tested for finite q")
    colors = tuple(range(int(params.q))) if colors is None else tuple(colors)
    window = LatticeWindow(width, horizon + 1)
    finals = []
    for j, c in enumerate(colors):
        reps = np.arange(j * replicas, (j + 1) * replicas)
        init_rows = InitialCondition.constant(c).realize(params, window, seed, reps)
        last = init_rows
        for _, _, values in forward_rows(init_rows, params, window, seed, reps):
            last = values
        finals.append(last)
    p_values = {}
    for k in range(1, max_k + 1):
        table = _pooled_table([f[:, :k] for f in finals], params.q)
        if table.shape[1] < 2:
            p_values[k] = 0.0 if len(np.unique(np.argmax(table, axis=1))) > 1 else 1.0
            continue
        p_values[k] = float(chi2_contingency(table)[1])
    return PermutationReport(params, width, horizon, replicas, seed, colors, p_values, alpha)


# ---------------------------------------------------------------------------
# coupling across initial conditions (q = infinity)


@dataclass(frozen=True)
class CouplingReport:
    params: ModelParams
    width: int
    horizon: int
    replicas: int
    seed: int
    target: tuple[int, int]
    w_dot_violations: int
    mismatched_replicas: int
    mismatch_outside_g: int
    cluster_hits_initial_row: int
    time_shift_mismatches: int

    @property
    def passed(self) -> bool:
        return self.w_dot_violations == 0 and self.mismatch_outside_g == 0

    def as_dict(self) -> dict:
        return {"delta": self.params.delta, "epsilon": self.params.epsilon,
                "width": self.width, "horizon": self.horizon, "replicas": self.replicas,
                "seed": self.seed, "target": list(self.target),
                "w_dot_violations": self.w_dot_violations,
                "mismatched_replicas": self.mismatched_replicas,
                "mismatch_outside_g": self.mismatch_outside_g,
                "cluster_hits_initial_row": self.cluster_hits_initial_row,
                "time_shift_mismatches": self.time_shift_mismatches, "passed": self.passed}


def _run_rows(params, window, init, seed, reps):
    rows = init.realize(params, window, seed, reps)
    return forward_rows(rows, params, window, seed, reps)


def qinf_coupling_check(params: ModelParams, width: int, horizon: int, replicas: int,
                        seed: int, inits=None, target: tuple[int, int] = (-10, 10)) -> CouplingReport:
    """Run the partition dynamics from a constant row and from other rows on shared arrows.

    The runs start at time ``-horizon`` and are compared at time 0 on the
    target interval.  Also compares the constant start at ``-horizon`` with
    the constant start one row earlier.
    """
    if not params.infinite:
        raise ValueError("the coupling across initial conditions is for q = infinity")
    inits = list(inits) if inits is not None else [InitialCondition.iid(),
                                                  InitialCondition.blocks(3)]
    reps = np.arange(replicas)
    window = LatticeWindow(width, horizon + 1, x0=-width // 2, t0=-horizon)
    shifted = LatticeWindow(width, horizon + 2, x0=-width // 2, t0=-horizon - 1)
    const = InitialCondition.constant(0)
    runs = [_run_rows(params, window, const, seed, reps)]
    runs += [_run_rows(params, window, init, seed, reps) for init in inits]

    w_viol = 0
    prev = None
    g = None
    final = None
    for rows in zip(*runs):
        i = rows[0][0]
        values = [r[2] for r in rows]
        if i == 0:
            g = np.ones(values[0].shape, dtype=bool)
        else:
            ws = [w_row(rows[j][1], prev[j], window, i) for j in range(len(rows))]
            for w in ws[1:]:
                w_viol += int(((ws[0] == DOT) & (w != DOT)).sum())
            g = g_row(ws[0], g, window, i)
        prev = values
        final = values

    i = window.height - 1
    z = window.positions(i)
    mask = (z >= target[0]) & (z <= target[1])
    parts = [canonical_partition(v[:, mask]) for v in final]
    differs = np.zeros(replicas, dtype=bool)
    for p in parts[1:]:
        differs |= (p != parts[0]).any(axis=1)
    touched = g[:, mask].any(axis=1)

    last = None
    for _, _, values in _run_rows(params, shifted, const, seed, reps):
        last = values
    zs = shifted.positions(shifted.height - 1)
    shift_parts = canonical_partition(last[:, (zs >= target[0]) & (zs <= target[1])])
    shift_mismatch = int((shift_parts != parts[0]).any(axis=1).sum())

    return CouplingReport(params, width, horizon, replicas, seed, tuple(target), w_viol,
                          int(differs.sum()), int((differs & ~touched).sum()),
                          int(touched.sum()), shift_mismatch)
