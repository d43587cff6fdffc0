"""Lattice geometry, the arrow law and the counter-based uniform field.

Vertices live on the even sublattice of Z^2.  Rows are indexed by color time
``t`` (the forward process runs towards increasing ``t``); the arrows stored
at a vertex of row ``t`` point to its two neighbors in row ``t - 1``.  The
dual percolation cluster of a vertex therefore grows towards decreasing ``t``.

Rows are stored compressed: a row of a window of width ``W`` holds ``W // 2``
sites, site ``k`` sitting at column ``2k + p`` where ``p`` is the row parity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, vectorize

INFINITE = math.inf

# arrow codes; stored as uint8
NW, NE, BOTH, DOT = 0, 1, 2, 3
ARROW_SYMBOLS = ("NW", "NE", "Both", "Dot")


class Arrow(enum.IntEnum):
    NW = NW
    NE = NE
    BOTH = BOTH
    DOT = DOT


class Stream(enum.IntEnum):
    """Independent randomness streams of the uniform field."""

    ARROW = 0
    FRESH = 1
    LAMBDA = 2
    TIEBREAK = 3


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    FREE = "free"


# ---------------------------------------------------------------------------
# model parameters


@dataclass(frozen=True)
class ModelParams:
    """Two noise parameters and the number of colors.

    ``q`` is an integer >= 2 or :data:`INFINITE` (partition dynamics).
    """

    delta: float
    epsilon: float
    q: float = 2

    def __post_init__(self):
        for name in ("delta", "epsilon"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or isinstance(v, bool):
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.q != INFINITE:
            if int(self.q) != self.q or self.q < 2:
                raise ValueError(f"q must be an integer >= 2 or INFINITE, got {self.q!r}")
            object.__setattr__(self, "q", int(self.q))

    @property
    def infinite(self) -> bool:
        return self.q == INFINITE

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return ModelParams(self.delta, epsilon, self.q)

    def thresholds(self) -> tuple[float, float, float]:
        """Cut points of the uniform-threshold coupling."""
        d, e = self.delta, self.epsilon
        return (1.0 - d) / 2.0, 1.0 - d, 1.0 - d * e


def arrow_probabilities(params: ModelParams) -> np.ndarray:
    """Probabilities of (NW, NE, Both, Dot)."""
    d, e = params.delta, params.epsilon
    side = (1.0 - d) / 2.0
    return np.array([side, side, d * (1.0 - e), d * e])


def arrow_from_uniform(u: float, params: ModelParams) -> Arrow:
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"uniform value outside [0, 1]: {u!r}")
    t1, t2, t3 = params.thresholds()
    if u < t1:
        return Arrow.NW
    if u < t2:
        return Arrow.NE
    if u < t3:
        return Arrow.BOTH
    return Arrow.DOT


def arrows_from_uniforms(u, params: ModelParams) -> np.ndarray:
    """Vectorized :func:`arrow_from_uniform` (no range check)."""
    t1, t2, t3 = params.thresholds()
    return _threshold_codes(np.asarray(u, dtype=np.float64), t1, t2, t3)


@vectorize(["uint8(float64, float64, float64, float64)"], cache=True)
def _threshold_codes(u, t1, t2, t3):
    if u < t1:
        return 0
    if u < t2:
        return 1
    if u < t3:
        return 2
    return 3


# ---------------------------------------------------------------------------
# counter-based uniform field
#
# Each uniform is a pure function of (seed, replica, stream, row, column):
# a SplitMix64 finalizer chain over the five coordinates.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K_REPLICA = np.uint64(0xD1B54A32D192ED03)
_K_ROW = np.uint64(0x8CB92BA72F3D8DD7)
_K_COL = np.uint64(0xABC98388FB8FAC03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, replica, stream):
    """Key shared by every uniform of one (seed, replica, stream)."""
    h = _mix64(np.uint64(seed) + _GOLDEN * (np.uint64(stream) + np.uint64(1)))
    return _mix64(h ^ _mix64(np.uint64(replica) + _K_REPLICA))


@njit(cache=True, inline="always")
def uniform_at(key, row, col):
    """Uniform in [0, 1) at lattice coordinate (row, col) under ``key``."""
    h = _mix64(key ^ _mix64(np.uint64(row) + _K_ROW))
    h = _mix64(h ^ _mix64(np.uint64(col) + _K_COL))
    return np.float64(h >> _S11) * _INV53


@vectorize(["uint64(int64, int64, int64)"], cache=True)
def _stream_keys(seed, replica, stream):
    return stream_key(seed, replica, stream)


@vectorize(["float64(uint64, int64, int64)"], cache=True)
def _uniform_grid(key, row, col):
    return uniform_at(key, row, col)


def _as_seed(seed: int) -> np.int64:
    # seeds are 64-bit; store the two's-complement view
    return np.array(int(seed) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64).view(np.int64)[()]


def uniforms(seed: int, replica, stream: int, row, col) -> np.ndarray:
    """Broadcasting accessor over replica, row and column arrays."""
    keys = _stream_keys(_as_seed(seed), np.asarray(replica, dtype=np.int64), int(stream))
    return _uniform_grid(keys, np.asarray(row, dtype=np.int64), np.asarray(col, dtype=np.int64))


def replica_keys(seed: int, replicas, stream: int) -> np.ndarray:
    return _stream_keys(_as_seed(seed), np.asarray(replicas, dtype=np.int64), int(stream))


@dataclass(frozen=True)
class UniformField:
    """Stateless i.i.d. uniform[0,1) field indexed by (row, column, stream)."""

    seed: int
    replica: int = 0

    def key(self, stream: int) -> np.uint64:
        return _stream_keys(_as_seed(self.seed), np.int64(self.replica), int(stream))

    def __call__(self, row, col, stream: int = Stream.ARROW) -> np.ndarray:
        return _uniform_grid(self.key(stream), np.asarray(row, dtype=np.int64),
                             np.asarray(col, dtype=np.int64))

    def at(self, row: int, col: int, stream: int = Stream.ARROW) -> float:
        return float(self(row, col, stream))


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class LatticeWindow:
    """A finite rectangle of the lattice.

    Column ``j`` is the spatial coordinate ``z = x0 + j`` and row ``i`` the
    color time ``t = t0 + i``.  Vertex ``(z, t)`` exists iff
    ``z + t = parity_offset (mod 2)``.
    """

    width: int
    height: int
    boundary: Boundary = Boundary.PERIODIC
    parity_offset: int = 0
    x0: int = 0
    t0: int = 0

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.width <= 0 or self.width % 2:
            raise ValueError(f"width must be a positive even integer, got {self.width}")
        if self.height <= 0:
            raise ValueError(f"height must be positive, got {self.height}")
        if self.parity_offset not in (0, 1):
            raise ValueError("parity_offset must be 0 or 1")

    @property
    def sites(self) -> int:
        return self.width // 2

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def row_parity(self, i: int) -> int:
        return (self.parity_offset - self.x0 - self.t0 - i) % 2

    def columns(self, i: int) -> np.ndarray:
        """Window-local columns of the sites of row ``i``."""
        return 2 * np.arange(self.sites) + self.row_parity(i)

    def positions(self, i: int) -> np.ndarray:
        """Spatial coordinates ``z`` of the sites of row ``i``."""
        return self.x0 + self.columns(i)

    def key_columns(self, i: int) -> np.ndarray:
        z = self.positions(i)
        return z % self.width if self.periodic else z

    def key_row(self, i: int) -> int:
        return self.t0 + i

    def site_of(self, z: int, i: int) -> int:
        """Compressed index of the vertex at coordinate ``z`` in row ``i``."""
        j = z - self.x0
        if self.periodic:
            j %= self.width
        if not (0 <= j < self.width):
            raise IndexError(f"column {z} outside window")
        if j % 2 != self.row_parity(i):
            raise IndexError(f"({z}, t={self.t0 + i}) is not a lattice vertex")
        return j // 2

    def upper_sites(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices in row ``i - 1`` of the left and right upper neighbors.

        Under FREE boundaries a missing neighbor is reported as -1.
        """
        p = self.row_parity(i)
        k = np.arange(self.sites)
        left = k - 1 + p
        right = k + p
        if self.periodic:
            return left % self.sites, right % self.sites
        left = np.where(left >= 0, left, -1)
        right = np.where(right < self.sites, right, -1)
        return left, right


# ---------------------------------------------------------------------------
# arrow fields


@dataclass(frozen=True)
class ArrowRow:
    t: int
    codes: np.ndarray


@dataclass(frozen=True, eq=False)
class ArrowField:
    """Arrow states on a window, row-major by time, one code per vertex."""

    window: LatticeWindow
    codes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.codes.shape != (self.window.height, self.window.sites):
            raise ValueError("arrow codes do not match the window shape")

    def row(self, i: int) -> ArrowRow:
        return ArrowRow(self.window.t0 + i, self.codes[i])

    def at(self, z: int, i: int) -> Arrow:
        return Arrow(int(self.codes[i, self.window.site_of(z, i)]))

    def arrow_set(self) -> np.ndarray:
        """Boolean (height, sites, 2) array of present (left, right) arrows."""
        c = self.codes
        return np.stack([(c == NW) | (c == BOTH), (c == NE) | (c == BOTH)], axis=-1)

    def __eq__(self, other):
        return (isinstance(other, ArrowField) and self.window == other.window
                and np.array_equal(self.codes, other.codes))


def uniform_grid(field: UniformField, window: LatticeWindow, stream: int) -> np.ndarray:
    rows = np.array([window.key_row(i) for i in range(window.height)])[:, None]
    cols = np.stack([window.key_columns(i) for i in range(window.height)])
    return field(rows, cols, stream)


def sample_arrow_field(field: UniformField, params: ModelParams,
                       window: LatticeWindow) -> ArrowField:
    u = uniform_grid(field, window, Stream.ARROW)
    return ArrowField(window, arrows_from_uniforms(u, params))


def left_arrow(codes) -> np.ndarray:
    return (codes == NW) | (codes == BOTH)


def right_arrow(codes) -> np.ndarray:
    return (codes == NE) | (codes == BOTH)
