"""Micro-benchmarks: soft-permutation cost, parameter counts, memory probes.

Timings compare the dot-product affinity path against a linear-correlation
weighting stub of the kind used by correlation-kernel convolutions, on the
same clouds and kernels.  Everything else here is analytic: exact parameter
counts and a working-set model good enough to predict the largest cloud a
single forward pass can hold inside a byte budget.
"""

from __future__ import annotations

import statistics
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import conv as pconv
from . import numkit
from .lattice import fibonacci_lattice
from .numkit import ContractError

_F8 = 8                  # bytes per float64
_KNN_BLOCK = 512         # row-block size used by the brute-force search

BENCH_HEADER = "op,n,K,L,median_ns,params,peak_bytes"


@dataclass(frozen=True)
class BenchReport:
    """One timed operation at one size."""

    op: str
    sizes: dict = field(default_factory=dict)   # {"n":, "K":, "L":}
    median_ns: int = 0
    params: int = 0
    peak_bytes: int = 0

    def __post_init__(self):
        if self.median_ns <= 0:
            raise ContractError("median time must be positive")

    def row(self) -> str:
        s = self.sizes
        return (f"{self.op},{s['n']},{s['K']},{s['L']},"
                f"{self.median_ns},{self.params},{self.peak_bytes}")


def _median_ns(fn, repeats: int) -> int:
    fn()  # warm the caches and any lazy allocations before timing
    laps = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        laps.append(time.perf_counter_ns() - t0)
    return max(1, int(statistics.median(laps)))


def _chunked(fn, rel: np.ndarray, threads: int):
    bounds = np.linspace(0, rel.shape[0], threads + 1).astype(int)
    chunks = [rel[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]

    def run():
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, chunks))
    return run


def linear_correlation(rel: np.ndarray, kernel: np.ndarray,
                       sigma: float) -> np.ndarray:
    """Reference stub w[j,l] = max(0, 1 - |rel_j - sigma*k_l| / sigma).

    The bandwidth sigma is a hyperparameter of this weighting; the
    dot-product path has no analogue of it.
    """
    diff = rel[:, :, None, :] - sigma * kernel[None, None, :, :]
    return np.maximum(0.0, 1.0 - np.linalg.norm(diff, axis=3) / sigma)


def bench_permutation(n: int, K: int, L: int, repeats: int = 9,
                      sigma: float | None = None, threads: int = 1,
                      rng: np.random.Generator | None = None) -> list[BenchReport]:
    """Time the soft-permutation build against the correlation stub.

    Returns two reports, one per method, over the same random cloud and
    fibonacci kernel.  repeats must be at least 5 (median of warm runs);
    threads > 1 splits the cloud row-wise across a thread pool.
    """
    if repeats < 5:
        raise ContractError(f"need at least 5 repeats, got {repeats}")
    if threads < 1:
        raise ContractError("threads must be >= 1")
    if rng is None:
        rng = numkit.stream(0, "bench")
    coords = rng.standard_normal((n, 3))
    kernel = fibonacci_lattice(L).points
    # both methods consume the same local offsets; build them once outside
    # the timed region so only the weighting itself is measured
    idx = np.argsort(rng.standard_normal((n, K)), axis=1)  # arbitrary neighbors
    rel = coords[:, None, :] - coords[idx]
    rel[:, 0, :] = 0.0
    if sigma is None:
        body = rel[:, 1:, :] if K > 1 else rel
        sigma = float(np.linalg.norm(body, axis=2).mean()) or 1.0

    def dot(chunk=rel):
        pconv.build_permutation(chunk, kernel, "sparsemax")

    def corr(chunk=rel):
        linear_correlation(chunk, kernel, sigma)

    dot_fn = dot if threads == 1 else _chunked(dot, rel, threads)
    corr_fn = corr if threads == 1 else _chunked(corr, rel, threads)
    sizes = {"n": int(n), "K": int(K), "L": int(L)}
    nkl = n * K * L * _F8
    return [
        BenchReport(op="dot_product", sizes=sizes,
                    median_ns=_median_ns(dot_fn, repeats),
                    params=kernel.size, peak_bytes=6 * nkl),
        BenchReport(op="linear_correlation", sizes=sizes,
                    median_ns=_median_ns(corr_fn, repeats),
                    params=kernel.size, peak_bytes=5 * nkl),
    ]


def write_bench_csv(reports: list[BenchReport], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(BENCH_HEADER + "\n")
        for rep in reports:
            fh.write(rep.row() + "\n")


def count_params(state) -> int:
    """Exact trainable-scalar count of a classifier or a tensor mapping."""
    tensors = state.params() if hasattr(state, "params") else dict(state)
    return int(sum(int(np.asarray(a).size) for a in tensors.values()))


def _stage_plan(cfg, n: int):
    """Yield (points, d_in, d_out) per conv stage after downsampling."""
    d_prev = cfg.in_features
    for t, d_out in enumerate(cfg.conv_channels):
        if cfg.downsample_ratios and cfg.downsample_ratios[t] > 1:
            n = max(1, n // cfg.downsample_ratios[t])
        yield n, cfg.d_r + d_prev, d_out
        d_prev = d_out


def estimate_forward_bytes(clf, n: int) -> int:
    """Analytic working-set model of one inference forward pass.

    Counts parameter storage, every array the per-stage tapes retain, and
    the two big transient regions (neighbor-search row blocks and the
    simplex-projection workspace).  Coefficients follow the actual
    allocations in neighbors.knn_bruteforce, conv.build_permutation and
    conv.forward; transient regions do not coexist with later stages but
    are counted once at the widest stage, which keeps the model an upper
    bound of the same order as the true peak.
    """
    cfg = clf.config
    K, L = cfg.k_neighbors, cfg.kernel_points
    total = count_params(clf) * _F8 + n * 3 * _F8   # weights + input coords
    transient = 0
    seen_sets = set()
    for n_t, d_in, d_out in _stage_plan(cfg, n):
        if n_t not in seen_sets:
            # one neighbor index + geometry + permutation per point set
            total += n_t * K * _F8            # nbr.idx (int64)
            total += n_t * K * 11 * _F8       # rel + dist + inp
            total += n_t * K * L * _F8        # retained M
            # d2 block + stable argsort output + its temp + gathered top-k
            knn_ws = min(_KNN_BLOCK, n_t) * n_t * 4 * _F8
            sparse_ws = 4 * n_t * K * L * _F8
            transient = max(transient, knn_ws + sparse_ws)
            seen_sets.add(n_t)
        total += n_t * K * d_in * _F8         # tape.x
        total += n_t * K * cfg.d_r * _F8      # tape.u
        total += n_t * L * d_in * _F8         # tape.vec
        total += 2 * n_t * d_out * _F8        # tape.s and stage output y
        # elu(u) and the slot-stacked xt are transient inside forward()
        transient = max(transient,
                        n_t * K * cfg.d_r * _F8 + n_t * L * d_in * _F8)
    n_final = max(1, n if not cfg.downsample_ratios
                  else list(_stage_plan(cfg, n))[-1][0])
    total += n_final * (sum(cfg.conv_channels) + 2 * cfg.aggregate_width) * _F8
    return int(total + transient)


def max_points_probe(clf, budget_bytes: int, cap: int = 2 ** 26) -> int:
    """Largest power-of-two cloud whose estimated pass fits the budget.

    Doubles n until the working-set model exceeds budget_bytes or the
    probe cap is reached; never allocates the arrays themselves.  A
    budget too small for a single point returns 0 with a warning.
    """
    if estimate_forward_bytes(clf, 1) > budget_bytes:
        warnings.warn("budget below a single point's working set",
                      RuntimeWarning, stacklevel=2)
        return 0
    n = 1
    while 2 * n <= cap and estimate_forward_bytes(clf, 2 * n) <= budget_bytes:
        n *= 2
    return n
