"""Point cloud container, exact k-nearest-neighbor search, downsampling.

KNN here is deliberately exact and deterministic: the self point always
occupies slot 0, remaining slots are sorted by squared distance with
ties broken by lower point index, and the grid-accelerated path must
reproduce the brute-force result index for index (tested).  Downstream
permutation matrices are built per neighbor row, so any drift in
neighbor ordering would silently change model output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import ContractError

# Row block for brute-force distance matrices; keeps peak memory at
# roughly BLOCK * n * 4 doubles instead of n^2 * 4.
_BLOCK = 512


@dataclass
class PointCloud:
    """Coordinates (n, 3) plus optional per-point features (n, d)."""

    coords: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise ContractError(f"coords must be (n>=1, 3), got {c.shape}")
        if not np.isfinite(c).all():
            raise ContractError("coords must be finite")
        self.coords = c
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != c.shape[0]:
                raise ContractError(
                    f"features must be (n, d) with n={c.shape[0]}, got {f.shape}")
            if not np.isfinite(f).all():
                raise ContractError("features must be finite")
            self.features = f

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class NeighborIndex:
    """idx[i] lists the k nearest points to i, self first."""

    k: int
    idx: np.ndarray


@dataclass(frozen=True)
class SampleMap:
    """Original indices kept by a downsample, in ascending order."""

    kept: np.ndarray
    ratio: int


def _neighbor_block(coords: np.ndarray, rows: np.ndarray, cands: np.ndarray,
                    keff: int) -> np.ndarray:
    """Exact keff nearest among cands for each row, ties by lower index.

    cands must be sorted ascending and contain each row itself.  The
    squared-distance formula here is the single source of truth; the
    grid path reuses it so both paths agree bitwise.
    """
    diff = coords[rows][:, None, :] - coords[cands][None, :, :]
    d2 = np.einsum("qcx,qcx->qc", diff, diff)
    # force self into slot 0: strictly below any real distance
    self_pos = np.searchsorted(cands, rows)
    d2[np.arange(rows.size), self_pos] = -1.0
    order = np.argsort(d2, axis=1, kind="stable")
    return cands[order[:, :keff]]


def knn_bruteforce(cloud: PointCloud, k: int) -> NeighborIndex:
    """Exact k nearest neighbors by full pairwise distances.

    Each row starts with the point itself, then neighbors by increasing
    distance, equal distances resolved toward the lower index.  When
    k > n the row is padded with the self index.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    coords = cloud.coords
    n = cloud.n
    keff = min(k, n)
    idx = np.empty((n, k), dtype=np.int64)
    all_ids = np.arange(n)
    for s in range(0, n, _BLOCK):
        rows = all_ids[s:min(s + _BLOCK, n)]
        idx[rows, :keff] = _neighbor_block(coords, rows, all_ids, keff)
        if k > n:
            idx[rows, keff:] = rows[:, None]
    return NeighborIndex(k=k, idx=idx)


def knn_grid(cloud: PointCloud, k: int, cell: float) -> NeighborIndex:
    """Grid-accelerated exact KNN; must match knn_bruteforce exactly.

    Points are bucketed into cubic cells of side ``cell``.  For each
    occupied cell, candidate shells expand in Chebyshev rings until the
    k-th best distance is strictly certified against everything outside
    the examined shells, then the final selection runs the same distance
    and tie rule as the brute-force path.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if not (cell > 0.0 and np.isfinite(cell)):
        raise ContractError(f"cell must be positive and finite, got {cell}")
    coords = cloud.coords
    n = cloud.n
    keff = min(k, n)
    idx = np.empty((n, k), dtype=np.int64)

    cells = np.floor(coords / cell).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    by_bucket = np.argsort(inverse, kind="stable")  # ascending ids per bucket
    counts = np.bincount(inverse, minlength=uniq.shape[0])
    starts = np.concatenate(([0], np.cumsum(counts)))
    bucket_of = {tuple(c): b for b, c in enumerate(uniq)}

    # cell assignment can misplace boundary points by one ulp of x/cell,
    # so the ring certificate keeps a small absolute slack
    slack = 1e-9 * max(1.0, float(np.abs(coords).max()))
    max_ring = int(np.max(uniq.max(axis=0) - uniq.min(axis=0))) + 1

    for b in range(uniq.shape[0]):
        rows = by_bucket[starts[b]:starts[b + 1]]
        home = uniq[b]
        gathered = []
        ring = 0
        while True:
            for off in _ring_offsets(ring):
                hit = bucket_of.get((home[0] + off[0], home[1] + off[1], home[2] + off[2]))
                if hit is not None:
                    gathered.append(by_bucket[starts[hit]:starts[hit + 1]])
            cands = np.concatenate(gathered)
            total = cands.size
            if total >= keff:
                cands_sorted = np.sort(cands)
                if total == n:
                    break
                # certify: points beyond ring r are at least r*cell away
                diff = coords[rows][:, None, :] - coords[cands_sorted][None, :, :]
                d2 = np.einsum("qcx,qcx->qc", diff, diff)
                kth = np.partition(d2, keff - 1, axis=1)[:, keff - 1]
                bound = ring * cell - slack
                if bound > 0 and (kth < bound * bound).all():
                    break
            if ring > max_ring + 2:  # unreachable: total==n breaks by max_ring
                raise AssertionError("grid ring expansion failed to terminate")
            ring += 1
            gathered = [cands]
        idx[rows, :keff] = _neighbor_block(coords, rows, cands_sorted, keff)
        if k > n:
            idx[rows, keff:] = rows[:, None]
    return NeighborIndex(k=k, idx=idx)


def _ring_offsets(r: int):
    """Integer offsets at Chebyshev distance exactly r."""
    if r == 0:
        yield (0, 0, 0)
        return
    rng = range(-r, r + 1)
    for a in rng:
        for b in rng:
            for c in rng:
                if max(abs(a), abs(b), abs(c)) == r:
                    yield (a, b, c)


def random_downsample(cloud: PointCloud, ratio: int,
                      rng: np.random.Generator) -> tuple[PointCloud, SampleMap]:
    """Keep ceil(n / ratio) points chosen uniformly without replacement.

    Selection comes from a seeded shuffle; the kept indices are returned
    sorted so ratio=1 is an exact identity and relative point order is
    always preserved.
    """
    if ratio < 1:
        raise ContractError(f"ratio must be >= 1, got {ratio}")
    n = cloud.n
    m = -(-n // ratio)  # ceil
    kept = np.sort(rng.permutation(n)[:m])
    feats = cloud.features[kept] if cloud.features is not None else None
    return PointCloud(cloud.coords[kept], feats), SampleMap(kept=kept, ratio=ratio)
