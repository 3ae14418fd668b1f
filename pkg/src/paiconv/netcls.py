"""Point cloud classifier built from stacked permutable convolutions.

Architecture: a chain of convolution layers (optionally downsampling the
cloud before each), whose per-point outputs are all gathered onto the
final point set and concatenated (multi-scale shortcut), pushed through
one shared aggregation layer, pooled globally over points, and scored by
a small fully connected head with dropout before each linear layer.

Everything is stored as plain float64 arrays and the whole graph has a
hand-written backward pass; ``forward_logits``/``backward_logits`` are
the only entry points the trainer needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conv as pconv
from . import numkit
from .conv import PaiConvLayer, make_variant
from .lattice import KernelLattice
from .neighbors import NeighborIndex, PointCloud, knn_bruteforce, random_downsample
from .numkit import ContractError, elu

POOLINGS = ("max", "sum", "max_and_sum")


@dataclass(frozen=True)
class ClassifierConfig:
    """Hyperparameters; defaults follow the large-scale reference setup.

    fc_widths includes the output layer, so its last entry is the number
    of classes.  downsample_ratios, when non-empty, must have one entry
    per conv layer and is applied before that layer.
    """

    conv_channels: tuple = (64, 64, 128, 256)
    aggregate_width: int = 2048
    fc_widths: tuple = (512, 40)
    k_neighbors: int = 40
    kernel_points: int = 32
    d_r: int = 8
    in_features: int = 0
    dropout_p: float = 0.5
    downsample_ratios: tuple = ()
    pooling: str = "max_and_sum"
    variant: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        object.__setattr__(self, "downsample_ratios",
                           tuple(int(r) for r in self.downsample_ratios))
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ContractError("conv_channels must be positive and non-empty")
        if not self.fc_widths or min(self.fc_widths) < 1:
            raise ContractError("fc_widths must be positive and non-empty")
        if self.num_classes < 2:
            raise ContractError("need at least 2 classes")
        if self.pooling not in POOLINGS:
            raise ContractError(f"pooling must be one of {POOLINGS}")
        if self.downsample_ratios and len(self.downsample_ratios) != len(self.conv_channels):
            raise ContractError("downsample_ratios must match conv_channels")
        if self.downsample_ratios and min(self.downsample_ratios) < 1:
            raise ContractError("downsample ratios must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError("dropout_p must be in [0, 1)")
        if self.k_neighbors < 1 or self.kernel_points < 2 or self.d_r < 1:
            raise ContractError("bad k_neighbors/kernel_points/d_r")
        if self.variant not in pconv.VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")

    @property
    def num_classes(self) -> int:
        return self.fc_widths[-1]


@dataclass
class Classifier:
    config: ClassifierConfig
    lattice: KernelLattice
    layers: list
    agg_w: np.ndarray
    agg_b: np.ndarray
    fc: list  # list of [w, b]

    def params(self) -> dict[str, np.ndarray]:
        """All trainable tensors, insertion order fixed for life."""
        out: dict[str, np.ndarray] = {}
        for t, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"conv{t}.{name}"] = arr
        out["agg.w"] = self.agg_w
        out["agg.b"] = self.agg_b
        for i, (w, b) in enumerate(self.fc):
            out[f"fc{i}.w"] = w
            out[f"fc{i}.b"] = b
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        cur = self.params()[name]
        if cur.shape != value.shape:
            raise ContractError(f"{name}: shape {value.shape} != {cur.shape}")
        cur[...] = value


def build(config: ClassifierConfig, rng: np.random.Generator) -> Classifier:
    """Construct a classifier; rng drives the whole init draw order."""
    _, lat = make_variant(config.variant, config.kernel_points,
                          rng if config.variant == "random_kernel" else None)
    layers = []
    feat_in = config.in_features
    for c in config.conv_channels:
        layers.append(PaiConvLayer(feat_in, c, lat, rng, d_r=config.d_r,
                                   variant=config.variant))
        feat_in = c
    concat_w = sum(config.conv_channels)
    s = np.sqrt(3.0 / concat_w)
    agg_w = rng.uniform(-s, s, (concat_w, config.aggregate_width))
    agg_b = np.zeros(config.aggregate_width)
    pooled_w = config.aggregate_width * (2 if config.pooling == "max_and_sum" else 1)
    fc = []
    prev = pooled_w
    for width in config.fc_widths:
        s = np.sqrt(3.0 / prev)
        fc.append([rng.uniform(-s, s, (prev, width)), np.zeros(width)])
        prev = width
    return Classifier(config=config, lattice=lat, layers=layers,
                      agg_w=agg_w, agg_b=agg_b, fc=fc)


@dataclass
class StageRecord:
    cloud: PointCloud
    nbr: NeighborIndex
    kept: np.ndarray | None
    tape: pconv.LayerTape
    y: np.ndarray


@dataclass
class NetTape:
    stages: list
    sel: list            # rows of stage t aligned with the final point set
    abs_idx: list        # original-cloud indices of each stage's points
    h: np.ndarray
    a_pre: np.ndarray
    a: np.ndarray
    pooled: np.ndarray
    max_rows: np.ndarray | None
    fc: list             # (dropped input, mask or None, preactivation)
    n_original: int


def forward_logits(clf: Classifier, cloud: PointCloud, training: bool = False,
                   rng: np.random.Generator | None = None,
                   knn=None) -> tuple[np.ndarray, NetTape]:
    """Logits for one cloud, plus the tape for backward.

    rng feeds dropout (training) and downsampling; required only when
    either is active.  ``knn`` overrides neighbor search (same contract
    as knn_bruteforce) and exists for testing neighbor-order effects.
    """
    cfg = clf.config
    if knn is None:
        knn = knn_bruteforce
    needs_rng = (training and cfg.dropout_p > 0) or bool(cfg.downsample_ratios)
    if needs_rng and rng is None:
        raise ContractError("training/downsampling forward needs an rng")
    if cfg.in_features != (0 if cloud.features is None else cloud.features.shape[1]):
        raise ContractError("cloud feature width does not match config.in_features")

    stages: list[StageRecord] = []
    abs_idx: list[np.ndarray] = []
    cur = cloud
    cur_abs = np.arange(cloud.n)
    shared_nbr = None
    shared_geom = None
    shared_m = None
    shared_kernel = None
    for t, layer in enumerate(clf.layers):
        kept = None
        if cfg.downsample_ratios and cfg.downsample_ratios[t] > 1:
            cur, smap = random_downsample(cur, cfg.downsample_ratios[t], rng)
            kept = smap.kept
            cur_abs = cur_abs[kept]
            shared_nbr = shared_geom = shared_m = shared_kernel = None
        if shared_nbr is None:
            shared_nbr = knn(cur, cfg.k_neighbors)
            shared_geom = pconv.stage_geometry(cur, shared_nbr)
            shared_m = None
            shared_kernel = None
        # layers over one point set share geometry; the permutation is
        # shared too whenever they read the same kernel array
        if shared_m is None or shared_kernel is not layer.kernel:
            shared_m = pconv.build_permutation(shared_geom.rel, layer.kernel, layer.mode)
            shared_kernel = layer.kernel
        y, tape = pconv.forward(layer, cur, shared_nbr, geom=shared_geom, m=shared_m)
        stages.append(StageRecord(cloud=cur, nbr=shared_nbr, kept=kept, tape=tape, y=y))
        abs_idx.append(cur_abs)
        cur = PointCloud(cur.coords, features=y)

    # align every stage's output with the final point set
    nstages = len(stages)
    sel = [None] * nstages
    sel[-1] = np.arange(stages[-1].cloud.n)
    for t in range(nstages - 2, -1, -1):
        kept_next = stages[t + 1].kept
        sel[t] = sel[t + 1] if kept_next is None else kept_next[sel[t + 1]]
    h = np.concatenate([stages[t].y[sel[t]] for t in range(nstages)], axis=1)

    a_pre = h @ clf.agg_w + clf.agg_b
    a = elu(a_pre)
    max_rows = None
    if cfg.pooling in ("max", "max_and_sum"):
        max_rows = np.argmax(a, axis=0)  # first max wins ties
        pmax = a[max_rows, np.arange(a.shape[1])]
    if cfg.pooling == "max":
        pooled = pmax
    elif cfg.pooling == "sum":
        pooled = a.sum(axis=0)
    else:
        pooled = np.concatenate([pmax, a.sum(axis=0)])

    fc_tape = []
    hvec = pooled
    z = None
    for i, (w, b) in enumerate(clf.fc):
        mask = None
        if training and cfg.dropout_p > 0:
            keep = 1.0 - cfg.dropout_p
            mask = (rng.uniform(size=hvec.shape) < keep) / keep
            hin = hvec * mask
        else:
            hin = hvec
        z = hin @ w + b
        fc_tape.append((hin, mask, z))
        if i < len(clf.fc) - 1:
            hvec = elu(z)
    logits = z
    if not np.isfinite(logits).all():
        raise ContractError("non-finite logits")
    tape = NetTape(stages=stages, sel=sel, abs_idx=abs_idx, h=h, a_pre=a_pre,
                   a=a, pooled=pooled, max_rows=max_rows, fc=fc_tape,
                   n_original=cloud.n)
    return logits, tape


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable softmax cross-entropy; returns loss and dloss/dlogits."""
    if not 0 <= label < logits.shape[0]:
        raise ContractError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = float(lse - logits[label])
    p = np.exp(logits - lse)
    p[label] -= 1.0
    return loss, p


def backward_logits(clf: Classifier, tape: NetTape,
                    dlogits: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray | None]:
    """Gradients for every parameter plus the cloud coords and features.

    Coordinate gradients treat each stage's neighbor index and sample
    selection as fixed.  Returns (grads, dcoords, dfeatures_or_None).
    """
    cfg = clf.config
    grads: dict[str, np.ndarray] = {}

    dz = dlogits
    for i in range(len(clf.fc) - 1, -1, -1):
        hin, mask, z = tape.fc[i]
        w, _ = clf.fc[i]
        grads[f"fc{i}.w"] = np.outer(hin, dz)
        grads[f"fc{i}.b"] = dz.copy()
        dhin = w @ dz
        if mask is not None:
            dhin = dhin * mask
        if i > 0:
            _, _, zprev = tape.fc[i - 1]
            dz = dhin * numkit.elu_grad(zprev)
        else:
            dpooled = dhin

    aw = cfg.aggregate_width
    da = np.zeros_like(tape.a)
    if cfg.pooling == "max":
        da[tape.max_rows, np.arange(aw)] = dpooled
    elif cfg.pooling == "sum":
        da += dpooled[None, :]
    else:
        da[tape.max_rows, np.arange(aw)] = dpooled[:aw]
        da += dpooled[aw:][None, :]

    da_pre = da * numkit.elu_grad(tape.a_pre)
    grads["agg.w"] = tape.h.T @ da_pre
    grads["agg.b"] = da_pre.sum(axis=0)
    dh = da_pre @ clf.agg_w.T

    # split the concat and scatter each slice back onto its stage rows;
    # sel/kept/abs_idx all come from sampling without replacement, so the
    # indices are unique and fancy += scatters safely
    nstages = len(tape.stages)
    dy = [np.zeros_like(tape.stages[t].y) for t in range(nstages)]
    col = 0
    for t in range(nstages):
        width = tape.stages[t].y.shape[1]
        dy[t][tape.sel[t]] += dh[:, col:col + width]
        col += width

    dcoords = np.zeros((tape.n_original, 3))
    dfeatures = None
    for t in range(nstages - 1, -1, -1):
        layer = clf.layers[t]
        g, dfeat, dc = pconv.backward(layer, tape.stages[t].tape, dy[t])
        for name, arr in g.items():
            grads[f"conv{t}.{name}"] = arr
        dcoords[tape.abs_idx[t]] += dc
        if t > 0:
            if tape.stages[t].kept is not None:
                dy[t - 1][tape.stages[t].kept] += dfeat
            else:
                dy[t - 1] += dfeat
        else:
            dfeatures = dfeat
    return grads, dcoords, dfeatures


# ------------------------------------------------------------ checkpoints

_FORMAT_LINE = "paiconv checkpoint 1"


def _cfg_to_items(cfg: ClassifierConfig) -> list[tuple[str, str]]:
    def j(xs):
        return ",".join(str(x) for x in xs)
    return [
        ("conv_channels", j(cfg.conv_channels)),
        ("aggregate_width", str(cfg.aggregate_width)),
        ("fc_widths", j(cfg.fc_widths)),
        ("k_neighbors", str(cfg.k_neighbors)),
        ("kernel_points", str(cfg.kernel_points)),
        ("d_r", str(cfg.d_r)),
        ("in_features", str(cfg.in_features)),
        ("dropout_p", repr(cfg.dropout_p)),
        ("downsample_ratios", j(cfg.downsample_ratios)),
        ("pooling", cfg.pooling),
        ("variant", cfg.variant),
    ]


def _cfg_from_items(items: dict[str, str]) -> ClassifierConfig:
    def ints(s):
        return tuple(int(x) for x in s.split(",")) if s else ()
    return ClassifierConfig(
        conv_channels=ints(items["conv_channels"]),
        aggregate_width=int(items["aggregate_width"]),
        fc_widths=ints(items["fc_widths"]),
        k_neighbors=int(items["k_neighbors"]),
        kernel_points=int(items["kernel_points"]),
        d_r=int(items["d_r"]),
        in_features=int(items["in_features"]),
        dropout_p=float(items["dropout_p"]),
        downsample_ratios=ints(items["downsample_ratios"]),
        pooling=items["pooling"],
        variant=items["variant"],
    )


def save_checkpoint(clf: Classifier, path, meta: dict | None = None) -> None:
    """Plain-text checkpoint: %.17g round-trips float64 exactly, and the
    byte stream depends only on parameter values and meta, never on
    wall-clock state, so equal runs write equal files."""
    lines = [_FORMAT_LINE, "[config]"]
    lines += [f"{k} = {v}" for k, v in _cfg_to_items(clf.config)]
    if meta:
        lines.append("[meta]")
        for k in sorted(meta):
            v = str(meta[k])
            if "\n" in v or "=" in k:
                raise ContractError(f"meta entry {k!r} not representable")
            lines.append(f"{k} = {v}")
    # random_kernel lattices are part of the model, not re-derivable
    lines.append("[lattice]")
    lines.append(f"{clf.lattice.count} 3")
    for row in clf.lattice.points:
        lines.append(" ".join("%.17g" % v for v in row))
    for name, arr in clf.params().items():
        lines.append(f"[tensor {name}]")
        mat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        lines.append(f"{mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join("%.17g" % v for v in row))
    lines.append("[end]")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[Classifier, dict]:
    """Rebuild a classifier from save_checkpoint output."""
    with open(path, encoding="ascii") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != _FORMAT_LINE:
        raise ContractError(f"{path}: not a checkpoint file")
    i = 1
    section = None
    cfg_items: dict[str, str] = {}
    meta: dict[str, str] = {}
    lattice_pts = None
    tensors: dict[str, np.ndarray] = {}
    while i < len(lines):
        ln = lines[i]
        if ln == "[end]":
            break
        if ln == "[config]":
            section = cfg_items
            i += 1
        elif ln == "[meta]":
            section = meta
            i += 1
        elif ln == "[lattice]":
            rows, cols = (int(x) for x in lines[i + 1].split())
            lattice_pts = np.array([
                [float(v) for v in lines[i + 2 + r].split()] for r in range(rows)])
            i += 2 + rows
            section = None
        elif ln.startswith("[tensor "):
            name = ln[len("[tensor "):-1]
            rows, cols = (int(x) for x in lines[i + 1].split())
            tensors[name] = np.array([
                [float(v) for v in lines[i + 2 + r].split()] for r in range(rows)])
            i += 2 + rows
            section = None
        elif section is not None and " = " in ln:
            k, v = ln.split(" = ", 1)
            section[k] = v
            i += 1
        else:
            raise ContractError(f"{path}: cannot parse line {i + 1}: {ln!r}")
    else:
        raise ContractError(f"{path}: missing [end] marker")

    cfg = _cfg_from_items(cfg_items)
    clf = build(cfg, np.random.Generator(np.random.PCG64(0)))
    if lattice_pts is not None:
        lat = KernelLattice(lattice_pts)
        clf.lattice = lat
        for layer in clf.layers:
            if not layer.learn_kernel:
                layer.kernel = lat.points
    expected = set(clf.params())
    if set(tensors) != expected:
        raise ContractError(
            f"{path}: tensor names {sorted(set(tensors) ^ expected)} do not match")
    for name, arr in tensors.items():
        cur = clf.params()[name]
        clf.set_param(name, arr.reshape(cur.shape))
    return clf, meta
