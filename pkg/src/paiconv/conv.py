"""Permutable anisotropic point convolution.

One layer turns a point cloud with per-point features into new per-point
features in four steps, all differentiable and all taped for the manual
backward pass:

1. Each neighbor offset (center minus neighbor, kept in that order) is
   scored against every kernel lattice direction by dot product, and the
   scores are projected column-wise onto the probability simplex.  The
   result is a soft permutation M of shape (K, L) per point: column l
   says which neighbors stand in for kernel slot l.  Column 0 is always
   the hard center indicator so the center point survives verbatim.
2. Neighbor offsets are also encoded into a learned positional feature
   via a one-layer MLP on [center, offset, distance].
3. Positional and input features are concatenated per neighbor, then
   resampled through M: X_tilde = X^T M lines neighbors up with kernel
   slots, making the layer invariant to neighbor ordering.
4. A single anisotropic filter mixes everything: the columns of X_tilde
   are stacked slot-major into one vector and multiplied by one weight
   matrix, followed by ELU.

Ablation variants swap the simplex projection for softmax or raw
logits, freeze M to a hard slot assignment, replace the anisotropic
filter with a slot-averaged isotropic one, or swap/learn the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .lattice import KernelLattice, fibonacci_lattice, random_lattice
from .neighbors import NeighborIndex, PointCloud
from .numkit import ContractError, elu, softmax

VARIANTS = (
    "full",
    "no_permutation",
    "no_sparsemax",
    "softmax",
    "isotropic",
    "random_kernel",
    "learnable_kernel",
)

# per-variant behavior: column normalization mode, whether the filter is
# isotropic, whether kernel rows receive gradients
_MODES = {
    "full": "sparsemax",
    "no_permutation": "fixed",
    "no_sparsemax": "raw",
    "softmax": "softmax",
    "isotropic": "sparsemax",
    "random_kernel": "sparsemax",
    "learnable_kernel": "sparsemax",
}


@dataclass(frozen=True)
class VariantConfig:
    name: str
    mode: str
    isotropic: bool
    learn_kernel: bool


def make_variant(name: str, count: int,
                 rng: np.random.Generator | None = None) -> tuple[VariantConfig, KernelLattice]:
    """Variant behavior flags plus the kernel lattice it starts from."""
    if name not in VARIANTS:
        raise ContractError(f"unknown variant {name!r}; known: {VARIANTS}")
    if name == "random_kernel":
        if rng is None:
            raise ContractError("random_kernel variant needs an rng")
        lat = random_lattice(count, rng)
    else:
        lat = fibonacci_lattice(count)
    cfg = VariantConfig(
        name=name,
        mode=_MODES[name],
        isotropic=(name == "isotropic"),
        learn_kernel=(name == "learnable_kernel"),
    )
    return cfg, lat


def local_positions(cloud: PointCloud, nbr: NeighborIndex) -> np.ndarray:
    """Offsets p_i - p_ij, shape (n, K, 3).  Row j=0 is always zero."""
    return cloud.coords[:, None, :] - cloud.coords[nbr.idx]


@dataclass
class StageGeometry:
    """Per-(cloud, neighbor-index) tensors every layer at a stage shares."""

    rel: np.ndarray    # (n, K, 3) center minus neighbor
    dist: np.ndarray   # (n, K, 1) offset norms
    inp: np.ndarray    # (n, K, 7) position-MLP input [center, offset, norm]


def stage_geometry(cloud: PointCloud, nbr: NeighborIndex) -> StageGeometry:
    rel = local_positions(cloud, nbr)
    dist = np.linalg.norm(rel, axis=2, keepdims=True)
    n, k = nbr.idx.shape
    inp = np.empty((n, k, 7))
    inp[:, :, 0:3] = cloud.coords[:, None, :]
    inp[:, :, 3:6] = rel
    inp[:, :, 6:7] = dist
    return StageGeometry(rel=rel, dist=dist, inp=inp)


def build_permutation(rel: np.ndarray, kernel: np.ndarray, mode: str) -> np.ndarray:
    """Soft permutation tensor M of shape (n, K, L).

    Column l >= 1 holds the normalized affinities of the K neighbor
    offsets to kernel direction l; column 0 is overwritten with the
    center indicator (neighbor 0 is the point itself by construction).
    Modes: "sparsemax" projects each column onto the simplex, "softmax"
    normalizes smoothly, "raw" passes the dot products through, and
    "fixed" ignores geometry entirely, assigning slot l to neighbor
    min(l, K-1).
    """
    n, k, _ = rel.shape
    L = kernel.shape[0]
    if mode == "fixed":
        m = np.zeros((n, k, L))
        slots = np.minimum(np.arange(L), k - 1)
        m[:, slots, np.arange(L)] = 1.0
        return m
    z = rel @ kernel.T
    if mode == "sparsemax":
        m = numkit.sparsemax(z, axis=1)
    elif mode == "softmax":
        m = softmax(z, axis=1)
    elif mode == "raw":
        m = z.copy()
    else:
        raise ContractError(f"unknown permutation mode {mode!r}")
    m[:, :, 0] = 0.0
    m[:, 0, 0] = 1.0
    return m


def check_permutation(m: np.ndarray, normalized: bool = True) -> None:
    """Assert the structural invariants of a permutation tensor."""
    if m.ndim != 3:
        raise ContractError(f"permutation tensor must be 3-D, got {m.shape}")
    col0 = np.zeros(m.shape[1])
    col0[0] = 1.0
    if not np.array_equal(m[:, :, 0], np.broadcast_to(col0, m.shape[:2])):
        raise ContractError("column 0 must be the center indicator")
    if normalized:
        if (m < 0).any() or (m > 1).any():
            raise ContractError("entries must lie in [0, 1]")
        if np.abs(m.sum(axis=1) - 1.0).max() > 1e-12:
            raise ContractError("columns must sum to 1")


class PaiConvLayer:
    """One permutable anisotropic convolution layer.

    Parameters
    ----------
    feat_in : width of incoming per-point features; 0 when the layer
        consumes bare geometry (the usual first-layer case).
    d_out : output feature width.
    kernel : kernel lattice shared with or owned by this layer.
    rng : init stream; draws wp then w, biases start at zero.
    d_r : positional encoding width.
    variant : one of VARIANTS.
    """

    def __init__(self, feat_in: int, d_out: int, kernel: KernelLattice,
                 rng: np.random.Generator, d_r: int = 8, variant: str = "full"):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}")
        if d_r < 1 or d_out < 1 or feat_in < 0:
            raise ContractError("bad layer widths")
        self.feat_in = feat_in
        self.d_out = d_out
        self.d_r = d_r
        self.variant = variant
        self.mode = _MODES[variant]
        self.isotropic = variant == "isotropic"
        self.learn_kernel = variant == "learnable_kernel"
        self.L = kernel.count
        self.d_in = d_r + feat_in
        # learnable variants own a mutable copy; others alias the shared
        # lattice so equal geometry is shared structurally
        self.kernel = kernel.points.copy() if self.learn_kernel else kernel.points

        # uniform bounds sqrt(3)/sqrt(fan-in) keep unit variance per layer
        s = np.sqrt(3.0 / 7.0)
        self.wp = rng.uniform(-s, s, (7, d_r))
        self.bp = np.zeros(d_r)
        fan = self.d_in if self.isotropic else self.d_in * self.L
        s = np.sqrt(3.0 / fan)
        self.w = rng.uniform(-s, s, (fan, d_out))
        self.b = np.zeros(d_out)

    def params(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name, in a fixed order."""
        out = {"wp": self.wp, "bp": self.bp, "w": self.w, "b": self.b}
        if self.learn_kernel:
            out["kernel"] = self.kernel
        return out


def encode_position(cloud: PointCloud, nbr: NeighborIndex,
                    layer: PaiConvLayer) -> np.ndarray:
    """Positional features (n, K, d_r) from the layer's one-layer MLP."""
    geom = stage_geometry(cloud, nbr)
    return elu(geom.inp @ layer.wp + layer.bp)


def assemble_features(r: np.ndarray, gathered: np.ndarray | None) -> np.ndarray:
    """Concatenate positional and input features along the last axis."""
    if gathered is None:
        return r
    return np.concatenate([r, gathered], axis=2)


@dataclass
class LayerTape:
    """Everything backward() needs from one forward()."""

    geom: StageGeometry
    idx: np.ndarray
    u: np.ndarray            # position MLP preactivation
    x: np.ndarray            # assembled neighbor features (n, K, d_in)
    m: np.ndarray            # permutation tensor (n, K, L)
    vec: np.ndarray | None   # stacked X_tilde (n, L*d_in); None when isotropic
    xm: np.ndarray | None    # slot-mean features (n, d_in); isotropic only
    s: np.ndarray            # filter preactivation (n, d_out)
    n_in: int                # rows of the feature source (for scatter)
    had_features: bool


def forward(layer: PaiConvLayer, cloud: PointCloud, nbr: NeighborIndex,
            geom: StageGeometry | None = None,
            m: np.ndarray | None = None) -> tuple[np.ndarray, LayerTape]:
    """Apply the layer to every point; returns (n, d_out) and a tape.

    ``geom`` and ``m`` allow stacked layers over the same cloud and
    neighbor index to share geometry instead of recomputing it; pass a
    shared ``m`` only when kernels and modes are identical.
    """
    feats = cloud.features
    width = 0 if feats is None else feats.shape[1]
    if width != layer.feat_in:
        raise ContractError(
            f"layer expects {layer.feat_in} input features, cloud has {width}")
    if nbr.idx.shape[0] != cloud.n:
        raise ContractError("neighbor index does not match cloud")
    if geom is None:
        geom = stage_geometry(cloud, nbr)
    if m is None:
        m = build_permutation(geom.rel, layer.kernel, layer.mode)

    # overflow is handled by the finiteness gate below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        n, k = nbr.idx.shape
        u = (geom.inp.reshape(n * k, 7) @ layer.wp).reshape(n, k, -1) + layer.bp
        r = elu(u)
        gathered = None if feats is None else feats[nbr.idx]
        x = assemble_features(r, gathered)

        xt = x.transpose(0, 2, 1) @ m
        if layer.isotropic:
            xm = xt.mean(axis=2)
            s = xm @ layer.w + layer.b
            vec = None
        else:
            # slot-major stacking: entry l*d_in + d is slot l, channel d
            vec = xt.transpose(0, 2, 1).reshape(cloud.n, layer.L * layer.d_in)
            s = vec @ layer.w + layer.b
            xm = None
        y = elu(s)
    if not np.isfinite(y).all():
        raise ContractError(
            f"non-finite layer output (variant={layer.variant}, n={cloud.n})")
    tape = LayerTape(geom=geom, idx=nbr.idx, u=u, x=x, m=m, vec=vec, xm=xm,
                     s=s, n_in=cloud.n, had_features=feats is not None)
    return y, tape


def backward(layer: PaiConvLayer, tape: LayerTape,
             dy: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray | None, np.ndarray]:
    """Gradients of a scalar loss given dloss/dY.

    Returns (param grads keyed like layer.params(), dloss/dfeatures or
    None, dloss/dcoords with the neighbor index held fixed).
    """
    n, k = tape.idx.shape
    ds = dy * numkit.elu_grad(tape.s)
    grads: dict[str, np.ndarray] = {"b": ds.sum(axis=0)}
    if layer.isotropic:
        grads["w"] = tape.xm.T @ ds
        dxm = ds @ layer.w.T
        dxt = np.repeat(dxm[:, :, None], layer.L, axis=2) / layer.L
    else:
        grads["w"] = tape.vec.T @ ds
        dvec = ds @ layer.w.T
        dxt = dvec.reshape(n, layer.L, layer.d_in).transpose(0, 2, 1)

    dx = tape.m @ dxt.transpose(0, 2, 1)
    dm = tape.x @ dxt

    # back through the column normalization; column 0 is a constant
    if layer.mode == "sparsemax":
        dz = numkit.sparsemax_grad(tape.m, dm, axis=1)
        dz[:, :, 0] = 0.0
    elif layer.mode == "softmax":
        p = tape.m
        dz = p * (dm - (p * dm).sum(axis=1, keepdims=True))
        dz[:, :, 0] = 0.0
    elif layer.mode == "raw":
        dz = dm.copy()
        dz[:, :, 0] = 0.0
    else:  # fixed: M does not depend on geometry
        dz = None

    rel = tape.geom.rel
    drel = np.zeros_like(rel)
    if dz is not None:
        drel += dz @ layer.kernel
        if layer.learn_kernel:
            dk = dz.reshape(-1, layer.L).T @ rel.reshape(-1, 3)
            dk[0] = 0.0  # origin slot stays pinned
            grads["kernel"] = dk

    dr = dx[:, :, :layer.d_r]
    du = np.ascontiguousarray(dr) * numkit.elu_grad(tape.u)
    grads["wp"] = tape.geom.inp.reshape(-1, 7).T @ du.reshape(n * k, -1)
    grads["bp"] = du.sum(axis=(0, 1))
    dinp = (du.reshape(n * k, -1) @ layer.wp.T).reshape(n, k, 7)

    drel += dinp[:, :, 3:6]
    # norm term: d||rel||/drel = rel/||rel||, zero at the origin offset
    dist = tape.geom.dist
    safe = np.where(dist > 0, dist, 1.0)
    drel += np.where(dist > 0, dinp[:, :, 6:7] * rel / safe, 0.0)

    dcoords = np.zeros((tape.n_in, 3))
    # center appears in inp[:, :, 0:3] for every neighbor slot, and in
    # rel = center - neighbor; query row i is its own cloud row i
    dcoords[:n] += dinp[:, :, 0:3].sum(axis=1) + drel.sum(axis=1)
    flat_idx = tape.idx.reshape(-1)
    for c in range(3):  # bincount scatters duplicates far faster than ufunc.at
        dcoords[:, c] -= np.bincount(flat_idx, weights=drel[:, :, c].reshape(-1),
                                     minlength=tape.n_in)

    dfeatures = None
    if tape.had_features:
        dfg = dx[:, :, layer.d_r:]
        dfeatures = np.empty((tape.n_in, layer.feat_in))
        for c in range(layer.feat_in):
            dfeatures[:, c] = np.bincount(flat_idx,
                                          weights=dfg[:, :, c].reshape(-1),
                                          minlength=tape.n_in)
    return grads, dfeatures, dcoords
