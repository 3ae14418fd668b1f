"""Dense float64 kernels shared by every stage of the pipeline.

Everything here operates on plain numpy arrays in double precision.
Matrices are 2-D ndarrays; there is no wrapper type.  Randomness is
always drawn from a generator returned by ``stream``, which derives
independent named substreams from one user seed, so a whole run is
reproducible bit-for-bit from that seed alone.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ContractError",
    "as_matrix",
    "matmul",
    "elu",
    "elu_grad",
    "softmax",
    "sparsemax",
    "sparsemax_grad",
    "sparsemax_jacobian_vp",
    "stream",
    "STREAMS",
]


class ContractError(ValueError):
    """An input violated a documented precondition."""


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a float64 2-D array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{name}: expected 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ContractError(f"{name}: contains NaN or Inf")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape and finiteness checks.

    Raises ContractError on a dimension mismatch instead of letting
    numpy produce its own error, so callers get a uniform failure mode.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul: need 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if not np.isfinite(out).all():
        raise ContractError("matmul: non-finite result")
    return out


def elu(x: np.ndarray) -> np.ndarray:
    """Exponential linear unit with alpha = 1.

    g(x) = x for x > 0, exp(x) - 1 otherwise.  Continuous and C^1 at 0.
    """
    x = np.asarray(x, dtype=np.float64)
    # expm1 keeps precision near 0; clamp the exponent so large positive
    # inputs never reach exp even though the branch discards them.
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of ``elu``: 1 for x > 0, exp(x) for x <= 0."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-stabilized softmax along ``axis``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[axis] == 0:
        raise ContractError("softmax: empty axis")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sparsemax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Euclidean projection of ``z`` onto the probability simplex.

    Returns argmin_p ||p - z||^2 over p >= 0, sum(p) = 1, computed
    along ``axis`` via the sort-and-threshold rule: with z sorted
    descending, the support size is the largest k such that
    1 + k * z_(k) > sum_{j<=k} z_(j), the threshold is
    tau = (sum over support - 1) / k, and p = max(z - tau, 0).

    Unlike softmax the output can contain exact zeros, and any input
    already on the simplex is returned unchanged.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[axis] == 0:
        raise ContractError("sparsemax: empty axis")
    z = np.moveaxis(z, axis, -1)
    n = z.shape[-1]
    # Shift-invariant in exact arithmetic; subtracting the max keeps the
    # cumulative sums well conditioned for large inputs.
    zc = z - z.max(axis=-1, keepdims=True)
    zs = -np.sort(-zc, axis=-1)
    csum = np.cumsum(zs, axis=-1)
    k = np.arange(1, n + 1, dtype=np.float64)
    # The condition is true for a prefix of k and false afterwards, so the
    # count of true entries is the support size.
    support = np.count_nonzero(1.0 + k * zs > csum, axis=-1)
    support = support[..., None]
    csum_at_k = np.take_along_axis(csum, support - 1, axis=-1)
    tau = (csum_at_k - 1.0) / support
    p = np.maximum(zc - tau, 0.0)
    return np.moveaxis(p, -1, axis)


def sparsemax_grad(p: np.ndarray, upstream: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward rule for sparsemax given its output ``p``.

    The Jacobian at a point with support S is diag(s) - s s^T / |S|
    where s is the indicator of S, so the product with ``upstream`` is
    the upstream value minus its mean over the support, masked to the
    support.  Coordinates off the support get exactly zero.
    """
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(upstream, dtype=np.float64)
    if p.shape != v.shape:
        raise ContractError(f"sparsemax_grad: shape mismatch {p.shape} vs {v.shape}")
    s = p > 0
    cnt = s.sum(axis=axis, keepdims=True)
    vsum = np.where(s, v, 0.0).sum(axis=axis, keepdims=True)
    return np.where(s, v - vsum / np.maximum(cnt, 1), 0.0)


def sparsemax_jacobian_vp(z: np.ndarray, upstream: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of ``sparsemax`` at ``z`` applied to ``upstream``."""
    return sparsemax_grad(sparsemax(z, axis=axis), upstream, axis=axis)


# Purpose ids for derived random streams.  Adding a purpose is fine;
# renumbering an existing one changes every seeded run, so never do it.
STREAMS = {
    "sampling": 0,
    "init": 1,
    "dropout": 2,
    "augmentation": 3,
    "data": 4,
    "bench": 5,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Independent PCG64 generator for one named purpose.

    All randomness in the package flows through these streams.  Distinct
    (purpose, index) pairs give statistically independent sequences via
    SeedSequence spawn keys, so e.g. consuming more init draws never
    shifts what the augmentation stream produces.
    """
    if purpose not in STREAMS:
        raise ContractError(f"unknown stream purpose {purpose!r}; known: {sorted(STREAMS)}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[purpose], index))
    return np.random.Generator(np.random.PCG64(ss))
