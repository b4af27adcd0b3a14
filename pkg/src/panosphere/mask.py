"""Sparse spatiotemporal attention masks over a token grid.

Tokens live on an F x rows x cols lattice patchified from an ERP pixel grid.
A pair of tokens is *allowed* when the spherical distance between their patch
centers, after compensating each frame's rotation relative to the reference
frame, is at most a threshold ``tau``.  The allowed set is stored in a
compressed-row layout (sorted key indices per query) so attention kernels can
iterate allowed keys per query; a dense additive bias is provided as a
desk-scale convenience.

Masks are immutable once built and safe to share across threads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import (
    ErpGrid,
    EulerAngles,
    Rotation3,
    SphericalPoint,
    erp_to_sphere,
    rotate_point,
    rotation_matrix,
)

MASK_MAGIC = b"SPAM"
MASK_VERSION = 1

#: Additive bias for disallowed keys.  Large enough that exp() underflows to
#: zero after row-max subtraction, finite so an all-disallowed row (which
#: cannot occur: masks are reflexive) would still not produce NaN.
DISALLOWED_BIAS = -1e9


@dataclass(frozen=True)
class TokenGrid:
    """Token lattice shape plus the source pixel grid it was patchified from."""

    frames: int
    rows: int
    cols: int
    source: ErpGrid

    def __post_init__(self) -> None:
        for name in ("frames", "rows", "cols"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if self.source.width % self.cols != 0:
            raise ValueError(
                f"source width {self.source.width} not divisible by cols {self.cols}"
            )
        if self.source.height % self.rows != 0:
            raise ValueError(
                f"source height {self.source.height} not divisible by rows {self.rows}"
            )

    @property
    def tokens_per_frame(self) -> int:
        return self.rows * self.cols

    @property
    def n(self) -> int:
        return self.frames * self.rows * self.cols


def token_center(grid: TokenGrid, index: int) -> tuple[int, SphericalPoint]:
    """Frame number and patch-center spherical point of a flattened token index."""
    if not 0 <= index < grid.n:
        raise IndexError(f"token index {index} out of range [0, {grid.n})")
    per_frame = grid.tokens_per_frame
    frame, within = divmod(index, per_frame)
    row, col = divmod(within, grid.cols)
    x = (col + 0.5) * (grid.source.width / grid.cols)
    y = (row + 0.5) * (grid.source.height / grid.rows)
    return frame, erp_to_sphere((x, y), grid.source)


class SphereMask:
    """Symmetric, reflexive set of allowed (query, key) token pairs.

    Stored as CSR: ``indices[indptr[q]:indptr[q+1]]`` are the allowed keys of
    query ``q``, sorted ascending.  Construction validates reflexivity and
    symmetry; both are guaranteed by the distance predicate (zero self
    distance, symmetric metric) so a violation indicates corrupted input.
    """

    __slots__ = ("n", "tau", "indptr", "indices")

    def __init__(self, n: int, tau: float, indptr, indices) -> None:
        if n < 1:
            raise ValueError("mask needs at least one token")
        if tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        self.n = int(n)
        self.tau = float(tau)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.uint32)
        if self.indptr.shape != (self.n + 1,):
            raise ValueError("indptr length must be n + 1")
        self._validate()

    def _validate(self) -> None:
        rows = np.repeat(
            np.arange(self.n, dtype=np.int64), np.diff(self.indptr)
        )
        cols = self.indices.astype(np.int64)
        if cols.size and cols.max() >= self.n:
            raise ValueError("key index out of range")
        if cols.size > 1:
            # within each row keys must be strictly increasing; positions
            # where a new row begins carry no ordering constraint
            interior = np.ones(cols.size - 1, dtype=bool)
            starts = self.indptr[1:-1]
            starts = starts[(starts > 0) & (starts < cols.size)]
            interior[starts - 1] = False
            if np.any((np.diff(cols) <= 0) & interior):
                raise ValueError("keys are not strictly increasing within a row")
        diag_hits = np.bincount(rows[rows == cols], minlength=self.n)
        if not np.all(diag_hits > 0):
            raise ValueError("mask is not reflexive")
        fwd = np.lexsort((cols, rows))
        rev = np.lexsort((rows, cols))
        if not (
            np.array_equal(rows[fwd], cols[rev])
            and np.array_equal(cols[fwd], rows[rev])
        ):
            raise ValueError("mask is not symmetric")

    @classmethod
    def from_pairs(cls, n: int, tau: float, pairs) -> "SphereMask":
        """Build from an iterable of (query, key) pairs (any order, no duplicates)."""
        arr = np.asarray(list(pairs), dtype=np.int64)
        if arr.size == 0:
            raise ValueError("pair list is empty")
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
        counts = np.bincount(arr[:, 0], minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(n, tau, indptr, arr[:, 1].astype(np.uint32))

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @property
    def density(self) -> float:
        return self.nnz / (self.n * self.n)

    def keys_of(self, q: int) -> np.ndarray:
        return self.indices[self.indptr[q] : self.indptr[q + 1]]

    def is_allowed(self, q: int, k: int) -> bool:
        row = self.keys_of(q)
        i = np.searchsorted(row, k)
        return bool(i < row.shape[0] and row[i] == k)

    def is_allowed_vector(self, qs, ks) -> np.ndarray:
        return np.fromiter(
            (self.is_allowed(int(q), int(k)) for q, k in zip(qs, ks)),
            dtype=bool,
            count=len(qs),
        )

    def pairs(self) -> np.ndarray:
        """All allowed pairs as an (nnz, 2) array in lexicographic order."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        return np.column_stack([rows, self.indices.astype(np.int64)])

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(q), int(k)) for q, k in self.pairs()}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SphereMask)
            and self.n == other.n
            and self.tau == other.tau
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self) -> str:
        return (
            f"SphereMask(n={self.n}, tau={self.tau}, nnz={self.nnz}, "
            f"density={self.density:.6f})"
        )


def _as_rotations(orientations) -> list[Rotation3]:
    out = []
    for o in orientations:
        if isinstance(o, Rotation3):
            out.append(o)
        elif isinstance(o, EulerAngles):
            out.append(rotation_matrix(o))
        else:
            raise TypeError(f"expected EulerAngles or Rotation3, got {type(o)!r}")
    return out


def rotated_token_coords(grid: TokenGrid, orientations) -> tuple[np.ndarray, np.ndarray]:
    """Per-token (theta, phi) after applying each frame's rotation.

    Shares the scalar rotation path with :func:`geometry.temporal_distance`
    so mask construction and the naive pairwise loop see identical values.
    """
    rotations = _as_rotations(orientations)
    if len(rotations) != grid.frames:
        raise ValueError(
            f"got {len(rotations)} orientations for {grid.frames} frames"
        )
    per_frame = [
        token_center(grid, i)[1] for i in range(grid.tokens_per_frame)
    ]
    theta = np.empty(grid.n, dtype=np.float64)
    phi = np.empty(grid.n, dtype=np.float64)
    i = 0
    for f in range(grid.frames):
        rot = rotations[f]
        for p in per_frame:
            q = rotate_point(p, rot)
            theta[i] = q.theta
            phi[i] = q.phi
            i += 1
    return theta, phi


def rotated_token_vectors(grid: TokenGrid, orientations) -> np.ndarray:
    """Unit vectors of the rotated token centers, shape (n, 3).

    Built through the same scalar rotation path as the pairwise-loop oracle.
    """
    from .geometry import sphere_to_unit_vector

    rotations = _as_rotations(orientations)
    if len(rotations) != grid.frames:
        raise ValueError(
            f"got {len(rotations)} orientations for {grid.frames} frames"
        )
    per_frame = [
        token_center(grid, i)[1] for i in range(grid.tokens_per_frame)
    ]
    out = np.empty((grid.n, 3), dtype=np.float64)
    i = 0
    for f in range(grid.frames):
        rot = rotations[f]
        for p in per_frame:
            out[i] = sphere_to_unit_vector(rotate_point(p, rot))
            i += 1
    return out


def chord_sq_threshold(tau: float) -> float:
    """Squared chord length equivalent to an angular threshold.

    ``d <= tau`` on the unit sphere is equivalent to
    ``|v1 - v2|^2 <= 4 sin^2(tau/2)`` and the map is monotone on [0, pi], so
    the kernels can compare squared chords and skip per-pair inverse trig.
    Any tau >= pi admits every pair (the sphere's diameter is pi).
    """
    if tau >= math.pi:
        return math.inf
    s = math.sin(0.5 * tau)
    return 4.0 * (s * s)


def build_mask(grid: TokenGrid, orientations, tau: float, _backend=None) -> SphereMask:
    """Allowed set {(q, k) : rotation-compensated distance <= tau}.

    ``orientations`` is one EulerAngles (or Rotation3) per frame, each
    expressed relative to the reference frame; the values are used as given.
    """
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    backend = _backend if _backend is not None else _kernels.active
    vectors = rotated_token_vectors(grid, orientations)
    indptr, indices = backend.mask_pairs(vectors, chord_sq_threshold(float(tau)))
    return SphereMask(grid.n, tau, indptr, indices)


def brute_force_pairs(grid: TokenGrid, orientations, tau: float) -> set[tuple[int, int]]:
    """O(N^2) scalar-loop oracle over the same rotated token coordinates.

    Exists for ``--verify`` style self-checks; it shares no code with the
    backend kernels beyond the scalar geometry primitives.
    """
    from .geometry import haversine_distance

    rotations = _as_rotations(orientations)
    if len(rotations) != grid.frames:
        raise ValueError(
            f"got {len(rotations)} orientations for {grid.frames} frames"
        )
    pts = []
    for i in range(grid.n):
        frame, p = token_center(grid, i)
        pts.append(rotate_point(p, rotations[frame]))
    return {
        (q, k)
        for q in range(grid.n)
        for k in range(grid.n)
        if haversine_distance(pts[q], pts[k]) <= tau
    }


def mask_to_bias(mask: SphereMask, literal_add_one: bool = False) -> np.ndarray:
    """Dense n x n additive attention bias.

    Default semantics are hard masking: 0 on allowed pairs and a large
    negative value on disallowed ones, so softmax assigns them no weight.
    ``literal_add_one`` instead returns the raw 0/1 indicator (a mild logit
    bump on allowed pairs) for ablation experiments.
    """
    if literal_add_one:
        bias = np.zeros((mask.n, mask.n))
        allowed_value = 1.0
    else:
        bias = np.full((mask.n, mask.n), DISALLOWED_BIAS)
        allowed_value = 0.0
    rows = np.repeat(np.arange(mask.n), np.diff(mask.indptr))
    bias[rows, mask.indices.astype(np.int64)] = allowed_value
    return bias


def mask_density_curve(grid: TokenGrid, orientations, taus, _backend=None):
    """Density of the allowed set at each threshold; taus must be ascending."""
    taus = [float(t) for t in taus]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be sorted ascending")
    backend = _backend if _backend is not None else _kernels.active
    vectors = rotated_token_vectors(grid, orientations)
    refs2 = np.array([chord_sq_threshold(t) for t in taus])
    counts = backend.count_leq(vectors, refs2)
    n_sq = grid.n * grid.n
    return [(t, int(c) / n_sq) for t, c in zip(taus, counts)]


def write_mask(mask: SphereMask, path) -> None:
    """Serialize to the "SPAM" binary layout (little-endian, lexicographic pairs)."""
    if mask.n > 0xFFFFFFFF:
        raise ValueError("token count exceeds the u32 pair encoding")
    pairs = mask.pairs().astype(np.uint32)
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<H", MASK_VERSION))
        fh.write(struct.pack("<Q", mask.n))
        fh.write(struct.pack("<d", mask.tau))
        fh.write(struct.pack("<Q", pairs.shape[0]))
        fh.write(pairs.astype("<u4").tobytes())


def read_mask(path) -> SphereMask:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MASK_MAGIC:
            raise ValueError(f"bad mask magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != MASK_VERSION:
            raise ValueError(f"unsupported mask version {version}")
        (n,) = struct.unpack("<Q", fh.read(8))
        (tau,) = struct.unpack("<d", fh.read(8))
        (count,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError("truncated mask pair data")
    pairs = np.frombuffer(raw, dtype="<u4").reshape(count, 2)
    return SphereMask.from_pairs(int(n), tau, pairs)


def mask_to_json(mask: SphereMask) -> str:
    return json.dumps(
        {
            "n": mask.n,
            "tau": mask.tau,
            "pairs": [[int(q), int(k)] for q, k in mask.pairs()],
        }
    )


def mask_from_json(text: str) -> SphereMask:
    obj = json.loads(text)
    return SphereMask.from_pairs(int(obj["n"]), float(obj["tau"]), obj["pairs"])


def max_pairwise_distance(points) -> float:
    """Largest great-circle distance among a set of spherical points."""
    from .geometry import haversine_distance

    pts = list(points)
    best = 0.0
    for i, a in enumerate(pts):
        for b in pts[i + 1 :]:
            best = max(best, haversine_distance(a, b))
    return best


__all__ = [
    "TokenGrid",
    "SphereMask",
    "token_center",
    "build_mask",
    "brute_force_pairs",
    "mask_to_bias",
    "mask_density_curve",
    "chord_sq_threshold",
    "rotated_token_coords",
    "rotated_token_vectors",
    "write_mask",
    "read_mask",
    "mask_to_json",
    "mask_from_json",
    "max_pairwise_distance",
    "DISALLOWED_BIAS",
]
