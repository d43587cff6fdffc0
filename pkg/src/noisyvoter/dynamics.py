"""Forward color dynamics: finite-q colors and q = infinity partitions.

A site of a new row looks at its two upper neighbors (row ``t - 1``):

* NW copies the left neighbor, NE copies the right one;
* Both copies the common value when the two neighbors agree;
* Both with disagreement, and Dot, take the fresh value ``Y(v)``.

For finite ``q`` the fresh value is ``floor(q * U(v))`` with ``U`` from the
fresh-color stream.  For ``q = inf`` fresh values are labels handed out by a
per-replica counter in column order, so they never collide with any label
seen before.

Under FREE boundaries a copy from a neighbor outside the window falls back to
the fresh value; results are exact inside the backward light cone of the
window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .lattice import (BOTH, NE, NW, ArrowField, ArrowRow, LatticeWindow,
                      ModelParams, Stream, UniformField, arrows_from_uniforms,
                      replica_keys, _uniform_grid)

GHOST = -1


@dataclass(frozen=True)
class ColorRow:
    t: int
    colors: np.ndarray


@dataclass(frozen=True)
class PartitionRow:
    t: int
    labels: np.ndarray
    next_label: int

    def __post_init__(self):
        if len(self.labels) and int(self.labels.max()) >= self.next_label:
            raise ValueError("fresh-label counter must exceed every label in the row")


@dataclass(frozen=True)
class FreshColorField:
    """The fresh values ``Y(v)``.

    For finite ``q`` a uniform color from the fresh stream; for ``q = inf``
    :meth:`allocate` hands out never-seen labels.
    """

    field: UniformField
    q: float

    def colors(self, window: LatticeWindow, i: int) -> np.ndarray:
        u = self.field(window.key_row(i), window.key_columns(i), Stream.FRESH)
        return uniform_to_color(u, self.q)

    @staticmethod
    def allocate(next_label: int, fresh: np.ndarray) -> tuple[np.ndarray, int]:
        labels = next_label + np.cumsum(fresh) - 1
        return labels, next_label + int(fresh.sum())


def uniform_to_color(u, q) -> np.ndarray:
    return np.minimum((np.asarray(u) * q).astype(np.int64), int(q) - 1)


# ---------------------------------------------------------------------------
# row kernel


def _gather(prev: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """prev[..., idx] with index -1 mapped to GHOST."""
    out = prev[..., np.maximum(idx, 0)]
    if (idx < 0).any():
        out = np.where(idx < 0, GHOST, out)
    return out


def copy_masks(codes, zl, zr):
    """Masks of sites copying their left / right neighbor."""
    take_left = (((codes == NW) | ((codes == BOTH) & (zl == zr))) & (zl != GHOST))
    take_right = (codes == NE) & (zr != GHOST)
    return take_left, take_right


def step_rows(prev: np.ndarray, codes: np.ndarray, left: np.ndarray,
              right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Copy part of the update.

    Returns ``(new, fresh)``: the copied values and the mask of sites that
    must take a fresh value (their entries in ``new`` are undefined).
    Works on (..., sites) arrays.
    """
    zl = _gather(prev, left)
    zr = _gather(prev, right)
    take_left, take_right = copy_masks(codes, zl, zr)
    new = np.where(take_left, zl, zr)
    return new, ~(take_left | take_right)


def _check_alignment(prev_t: int, arrows: ArrowRow, window: LatticeWindow,
                     n_prev: int, n_arrows: int) -> int:
    if arrows.t != prev_t + 1:
        raise ValueError(f"arrow row t={arrows.t} does not sit below row t={prev_t}")
    if n_prev != window.sites or n_arrows != window.sites:
        raise ValueError("row length does not match the window")
    return arrows.t - window.t0


def step_colors(prev: ColorRow, arrows: ArrowRow, fresh: FreshColorField,
                params: ModelParams, window: LatticeWindow) -> ColorRow:
    if params.infinite:
        raise ValueError("use step_partition for q = infinity")
    i = _check_alignment(prev.t, arrows, window, len(prev.colors), len(arrows.codes))
    new, need = step_rows(prev.colors, arrows.codes, *window.upper_sites(i))
    if need.any():
        new = np.where(need, fresh.colors(window, i), new)
    return ColorRow(arrows.t, new)


def step_partition(prev: PartitionRow, arrows: ArrowRow, fresh: FreshColorField | None,
                   window: LatticeWindow) -> PartitionRow:
    i = _check_alignment(prev.t, arrows, window, len(prev.labels), len(arrows.codes))
    new, need = step_rows(prev.labels, arrows.codes, *window.upper_sites(i))
    labels, counter = FreshColorField.allocate(prev.next_label, need)
    if counter >= np.iinfo(np.int64).max:
        raise OverflowError("fresh-label counter exhausted")
    return PartitionRow(arrows.t, np.where(need, labels, new), counter)


# ---------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class InitialCondition:
    """Initial row: constant, i.i.d. uniform, explicit, or periodic blocks."""

    kind: str
    color: int = 0
    row: tuple = ()
    block: int = 1
    palette: tuple = ()

    KINDS = ("constant", "iid", "explicit", "blocks")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial condition {self.kind!r}")

    @classmethod
    def constant(cls, color: int = 0) -> "InitialCondition":
        return cls("constant", color=color)

    @classmethod
    def iid(cls) -> "InitialCondition":
        return cls("iid")

    @classmethod
    def explicit(cls, row: Sequence[int]) -> "InitialCondition":
        return cls("explicit", row=tuple(int(c) for c in row))

    @classmethod
    def blocks(cls, block: int, palette: Sequence[int] = ()) -> "InitialCondition":
        return cls("blocks", block=block, palette=tuple(palette))

    def realize(self, params: ModelParams, window: LatticeWindow, seed: int,
                replicas=(0,), stream: int = Stream.FRESH) -> np.ndarray:
        """Initial rows, shape (len(replicas), sites).

        The i.i.d. case reads row 0 of ``stream``; row 0 of the fresh stream
        is never consumed by the dynamics.
        """
        replicas = np.asarray(replicas, dtype=np.int64)
        n = window.sites
        q = params.q
        if self.kind == "constant":
            base = np.full(n, self.color, dtype=np.int64)
        elif self.kind == "explicit":
            if len(self.row) != n:
                raise ValueError(f"explicit row has {len(self.row)} sites, window has {n}")
            base = np.array(self.row, dtype=np.int64)
        elif self.kind == "blocks":
            palette = self.palette or (tuple(range(int(q))) if not params.infinite else ())
            idx = np.arange(n) // self.block
            base = idx if not palette else np.array(palette, dtype=np.int64)[idx % len(palette)]
        else:
            if params.infinite:
                base = np.arange(n, dtype=np.int64)
            else:
                keys = replica_keys(seed, replicas, stream)
                u = _uniform_grid(keys[:, None], np.int64(window.key_row(0)),
                                  window.key_columns(0)[None, :])
                return uniform_to_color(u, q)
        if base.min(initial=0) < 0 or (not params.infinite and base.max(initial=0) >= q):
            raise ValueError("initial colors must lie in {0, ..., q-1}")
        return np.broadcast_to(base, (len(replicas), n)).copy()


# ---------------------------------------------------------------------------
# space-time runs


@dataclass(frozen=True, eq=False)
class SpaceTime:
    """A forward run: colors (or partition labels) and the arrows used."""

    window: LatticeWindow
    params: ModelParams
    values: np.ndarray = field(repr=False)
    arrows: ArrowField = field(repr=False)

    def row(self, i: int) -> np.ndarray:
        return self.values[i]


def forward_rows(init_rows: np.ndarray, params: ModelParams, window: LatticeWindow,
                 seed: int, replicas) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(i, arrow_codes, values)`` row by row for a batch of replicas.

    Row 0 yields the arrows sampled at the initial row (never used by the
    color update) and the initial values.
    """
    replicas = np.asarray(replicas, dtype=np.int64)
    akeys = replica_keys(seed, replicas, Stream.ARROW)[:, None]
    fkeys = replica_keys(seed, replicas, Stream.FRESH)[:, None]
    values = np.asarray(init_rows, dtype=np.int64)
    counter = values.max(axis=1) + 1 if params.infinite else None

    def arrows(i):
        u = _uniform_grid(akeys, np.int64(window.key_row(i)), window.key_columns(i)[None, :])
        return arrows_from_uniforms(u, params)

    yield 0, arrows(0), values
    for i in range(1, window.height):
        codes = arrows(i)
        new, need = step_rows(values, codes, *window.upper_sites(i))
        if params.infinite:
            labels = counter[:, None] + np.cumsum(need, axis=1) - 1
            counter = counter + need.sum(axis=1)
            values = np.where(need, labels, new)
        else:
            u = _uniform_grid(fkeys, np.int64(window.key_row(i)), window.key_columns(i)[None, :])
            values = np.where(need, uniform_to_color(u, params.q), new)
        yield i, codes, values


def run_forward_batch(init: InitialCondition, params: ModelParams, window: LatticeWindow,
                      seed: int, replicas) -> tuple[np.ndarray, np.ndarray]:
    """Full histories: ``(values, codes)`` of shape (replicas, height, sites)."""
    replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
    R, H, n = len(replicas), window.height, window.sites
    values = np.empty((R, H, n), dtype=np.int64)
    codes = np.empty((R, H, n), dtype=np.uint8)
    init_rows = init.realize(params, window, seed, replicas)
    for i, c, v in forward_rows(init_rows, params, window, seed, replicas):
        values[:, i] = v
        codes[:, i] = c
    return values, codes


def run_forward(init: InitialCondition, params: ModelParams, window: LatticeWindow,
                seed: int, replica: int = 0) -> SpaceTime:
    values, codes = run_forward_batch(init, params, window, seed, [replica])
    return SpaceTime(window, params, values[0], ArrowField(window, codes[0]))


def canonical_partition(labels: np.ndarray) -> np.ndarray:
    """Relabel by order of first appearance along the last axis."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return rank[inv]
    return np.stack([canonical_partition(row) for row in labels.reshape(-1, labels.shape[-1])]
                    ).reshape(labels.shape)
