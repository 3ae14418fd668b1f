"""Training loop: cosine-scheduled SGD with classical momentum.

Determinism contract: given one seed, every run of ``fit`` produces
bit-identical parameters, metrics, and checkpoint bytes.  All random
choices flow through named streams derived from that seed (shuffling,
dropout, augmentation), gradient accumulation is sequential in sample
order, and nothing time-dependent is ever written to the outputs.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import numkit
from .dataio import AugmentConfig, Dataset, augment
from .netcls import (
    Classifier,
    ClassifierConfig,
    backward_logits,
    build,
    cross_entropy,
    forward_logits,
)
from .numkit import ContractError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr_init: float = 0.1
    lr_final: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.threads < 1:
            raise ContractError("epochs, batch_size and threads must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")
        if self.lr_init <= 0 or self.lr_final <= 0:
            raise ContractError("learning rates must be positive")


def cosine_lr(epoch: int, epochs: int, lr_init: float = 0.1,
              lr_final: float = 0.01) -> float:
    """Half-cosine decay from lr_init (epoch 0) to lr_final (last epoch).

    Endpoints are returned exactly, not through the cosine expression,
    so schedules can be asserted with equality.
    """
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside [0, {epochs})")
    if epoch == 0 or epochs == 1:
        return lr_init
    if epoch == epochs - 1:
        return lr_final
    span = np.pi * epoch / (epochs - 1)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + float(np.cos(span)))


def sgd_step(param: np.ndarray, velocity: np.ndarray, grad: np.ndarray,
             lr: float, momentum: float) -> None:
    """Classical momentum update, in place: v = m*v + g; p -= lr*v."""
    velocity *= momentum
    velocity += grad
    param -= lr * velocity


class SgdMomentum:
    """Keeps one velocity per parameter, keyed like Classifier.params()."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float):
        if not 0.0 <= momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        for name, p in params.items():
            sgd_step(p, self.velocity[name], grads[name], lr, self.momentum)


@dataclass
class Metrics:
    loss: float
    oa: float          # overall accuracy
    ma: float          # mean per-class recall over classes present
    per_class: np.ndarray


def _forward_backward(clf, cloud, label, rng):
    logits, tape = forward_logits(clf, cloud, training=True, rng=rng)
    loss, dlogits = cross_entropy(logits, label)
    grads, _, _ = backward_logits(clf, tape, dlogits)
    return loss, grads, int(np.argmax(logits)) == label


def train_epoch(clf: Classifier, dataset: Dataset, opt: SgdMomentum, lr: float,
                batch_size: int, shuffle_rng: np.random.Generator,
                model_rng: np.random.Generator,
                augment_cfg: AugmentConfig | None = None,
                augment_rng: np.random.Generator | None = None,
                threads: int = 1) -> float:
    """One pass over the dataset; returns the mean training loss.

    Gradients are averaged over each minibatch.  With threads > 1 the
    per-sample passes run in a pool but are reduced in sample order, so
    the result is identical to the single-threaded run.
    """
    if augment_cfg is not None and augment_rng is None:
        raise ContractError("augmentation needs its rng")
    n = len(dataset)
    order = shuffle_rng.permutation(n)
    params = clf.params()
    total_loss = 0.0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            jobs = []
            for i in batch:
                cloud, label = dataset.samples[i]
                if augment_cfg is not None:
                    cloud = augment(cloud, augment_cfg, augment_rng)
                # dropout draws happen here, in batch order, so threaded
                # and serial runs consume the stream identically
                drop = numkit.stream(int(model_rng.integers(2 ** 63)), "dropout")
                jobs.append((cloud, label, drop))
            if pool is not None:
                results = list(pool.map(lambda a: _forward_backward(clf, *a), jobs))
            else:
                results = [_forward_backward(clf, *a) for a in jobs]
            mean_grads = None
            for loss, grads, _ in results:
                total_loss += loss
                if mean_grads is None:
                    mean_grads = {k: g.copy() for k, g in grads.items()}
                else:
                    for k, g in grads.items():
                        mean_grads[k] += g
            for k in mean_grads:
                mean_grads[k] /= len(batch)
            opt.step(params, mean_grads, lr)
    finally:
        if pool is not None:
            pool.shutdown()
    mean_loss = total_loss / n
    if not np.isfinite(mean_loss):
        raise ContractError("training diverged: non-finite loss")
    return mean_loss


def evaluate(clf: Classifier, dataset: Dataset) -> Metrics:
    """Loss, overall accuracy, and mean per-class recall, dropout off.

    Classes listed in the dataset but absent from its samples are left
    out of the mean recall, with a warning.
    """
    ncls = clf.config.num_classes
    correct = np.zeros(ncls)
    seen = np.zeros(ncls)
    total_loss = 0.0
    hits = 0
    # downsampling models draw their point subsets from a fixed
    # per-sample stream so evaluation is a pure function of the weights
    needs_rng = bool(clf.config.downsample_ratios)
    for i, (cloud, label) in enumerate(dataset.samples):
        rng = numkit.stream(i, "sampling", index=3) if needs_rng else None
        logits, _ = forward_logits(clf, cloud, training=False, rng=rng)
        loss, _ = cross_entropy(logits, label)
        total_loss += loss
        seen[label] += 1
        if int(np.argmax(logits)) == label:
            correct[label] += 1
            hits += 1
    present = seen > 0
    if not present.all():
        missing = [dataset.class_names[i] if i < len(dataset.class_names) else str(i)
                   for i in np.flatnonzero(~present)]
        warnings.warn(f"classes absent from evaluation set: {missing}")
    per_class = np.full(ncls, np.nan)
    per_class[present] = correct[present] / seen[present]
    return Metrics(
        loss=total_loss / len(dataset),
        oa=hits / len(dataset),
        ma=float(per_class[present].mean()),
        per_class=per_class,
    )


METRICS_HEADER = ("epoch", "lr", "loss", "oa", "ma")


def write_metrics_csv(path, rows) -> None:
    """Epoch rows with %.17g floats; byte-stable for identical runs."""
    with open(path, "w", newline="", encoding="ascii") as f:
        wr = csv.writer(f)
        wr.writerow(METRICS_HEADER)
        for epoch, lr, loss, oa, ma in rows:
            wr.writerow([epoch] + ["%.17g" % v for v in (lr, loss, oa, ma)])


def fit(clf: Classifier, train_set: Dataset, cfg: TrainConfig,
        augment_cfg: AugmentConfig | None = None,
        log=None) -> list:
    """Full training run; returns one (epoch, lr, loss, oa, ma) row per epoch.

    loss is the running mean training loss of the epoch; oa/ma come from
    a clean evaluation pass over the training set after the epoch's
    updates, which is exactly what a later eval of the saved checkpoint
    on the same data reproduces.
    """
    opt = SgdMomentum(clf.params(), cfg.momentum)
    shuffle_rng = numkit.stream(cfg.seed, "sampling", index=1)
    model_rng = numkit.stream(cfg.seed, "dropout", index=1)
    augment_rng = numkit.stream(cfg.seed, "augmentation") if augment_cfg else None
    rows = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_init, cfg.lr_final)
        loss = train_epoch(clf, train_set, opt, lr, cfg.batch_size,
                           shuffle_rng, model_rng, augment_cfg, augment_rng,
                           threads=cfg.threads)
        m = evaluate(clf, train_set)
        rows.append((epoch, lr, loss, m.oa, m.ma))
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.5f}  loss {loss:.4f}  "
                f"oa {m.oa:.3f}  ma {m.ma:.3f}")
    return rows


# ------------------------------------------------------------------ ablation

ABLATION_HEADER = ("variant", "seed", "oa", "ma")


def run_ablation(base_config: ClassifierConfig, variants, seeds,
                 train_set: Dataset, test_set: Dataset, cfg: TrainConfig,
                 augment_cfg: AugmentConfig | None = None,
                 log=None) -> list:
    """Train each variant at each seed on the same data; per-seed rows.

    Returns (variant, seed, test OA, test MA) tuples in variant-major
    order.  The datasets are shared across all runs so rows differ only
    by variant and seed.
    """
    rows = []
    for variant in variants:
        vcfg = replace(base_config, variant=variant)
        for seed in seeds:
            clf = build(vcfg, numkit.stream(seed, "init"))
            fit(clf, train_set, replace(cfg, seed=seed), augment_cfg, log=None)
            m = evaluate(clf, test_set)
            rows.append((variant, int(seed), m.oa, m.ma))
            if log is not None:
                log(f"{variant:17s} seed {seed}  oa {m.oa:.3f}  ma {m.ma:.3f}")
    return rows


def summarize_ablation(rows) -> list:
    """Mean/std of OA and MA per variant, preserving first-seen order."""
    order = []
    acc: dict[str, list] = {}
    for variant, _, oa, ma in rows:
        if variant not in acc:
            acc[variant] = []
            order.append(variant)
        acc[variant].append((oa, ma))
    out = []
    for variant in order:
        arr = np.array(acc[variant])
        out.append((variant, arr[:, 0].mean(), arr[:, 0].std(),
                    arr[:, 1].mean(), arr[:, 1].std()))
    return out


def write_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        wr = csv.writer(f)
        wr.writerow(ABLATION_HEADER)
        for variant, seed, oa, ma in rows:
            wr.writerow([variant, seed, "%.17g" % oa, "%.17g" % ma])
