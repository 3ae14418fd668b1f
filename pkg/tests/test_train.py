import csv

import numpy as np
import pytest

from paiconv import numkit as nk
from paiconv.dataio import AugmentConfig, Dataset, synth_shapes
from paiconv.neighbors import PointCloud
from paiconv.netcls import ClassifierConfig, build, forward_logits
from paiconv.numkit import ContractError
from paiconv.train import (
    SgdMomentum,
    TrainConfig,
    cosine_lr,
    evaluate,
    fit,
    run_ablation,
    sgd_step,
    summarize_ablation,
    train_epoch,
    write_ablation_csv,
    write_metrics_csv,
)


def micro_config(**kw):
    base = dict(conv_channels=(4, 4), aggregate_width=6, fc_widths=(5, 3),
                k_neighbors=4, kernel_points=4, d_r=2, dropout_p=0.0)
    base.update(kw)
    return ClassifierConfig(**base)


def micro_dataset(seed, per_class=2, n_points=12):
    return synth_shapes(per_class, n_points, nk.stream(seed, "data"))


# ---------------------------------------------------------------- schedule

def test_cosine_lr_endpoints_exact():
    assert cosine_lr(0, 250) == 0.1
    assert cosine_lr(249, 250) == 0.01
    assert cosine_lr(0, 30, lr_init=0.5, lr_final=0.002) == 0.5
    assert cosine_lr(29, 30, lr_init=0.5, lr_final=0.002) == 0.002
    assert cosine_lr(0, 1) == 0.1  # single-epoch schedule degenerates to init


def test_cosine_lr_midpoint():
    # halfway through an odd-length schedule the cosine term vanishes:
    # lr = lr_final + (lr_init - lr_final)/2 = 0.055 for the defaults
    for epochs in (3, 11, 251):
        mid = (epochs - 1) // 2
        assert abs(cosine_lr(mid, epochs) - 0.055) < 1e-12


def test_cosine_lr_monotone_decreasing():
    vals = [cosine_lr(e, 40) for e in range(40)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert max(vals) == 0.1 and min(vals) == 0.01


def test_cosine_lr_range_checked():
    with pytest.raises(ContractError):
        cosine_lr(-1, 10)
    with pytest.raises(ContractError):
        cosine_lr(10, 10)


# --------------------------------------------------------------- optimizer

def test_sgd_step_hand_case():
    p = np.array([1.0])
    v = np.array([0.0])
    sgd_step(p, v, np.array([0.5]), lr=0.1, momentum=0.9)
    assert v[0] == 0.5 and p[0] == 0.95
    sgd_step(p, v, np.array([0.5]), lr=0.1, momentum=0.9)
    # v = 0.9*0.5 + 0.5 = 0.95; p = 0.95 - 0.095
    assert abs(v[0] - 0.95) < 1e-15
    assert abs(p[0] - 0.855) < 1e-15


def test_sgd_momentum_zero_is_plain_gd():
    p = {"a": np.array([2.0, -1.0])}
    opt = SgdMomentum(p, momentum=0.0)
    g = {"a": np.array([1.0, 2.0])}
    opt.step(p, g, lr=0.5)
    assert np.array_equal(p["a"], [1.5, -2.0])


def test_sgd_momentum_accumulates_velocity():
    p = {"a": np.zeros(1)}
    opt = SgdMomentum(p, momentum=0.5)
    for _ in range(3):
        opt.step(p, {"a": np.ones(1)}, lr=1.0)
    # v: 1, 1.5, 1.75 ; p: -1, -2.5, -4.25
    assert abs(p["a"][0] + 4.25) < 1e-15


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ContractError):
        TrainConfig(lr_init=0.0)


# ------------------------------------------------------------- train loop

def test_overfit_single_sample_loss_decreases():
    # one cloud, constant lr: after momentum warmup the loss must fall
    # monotonically in nearly every seed
    failures = 0
    for seed in range(20):
        ds = Dataset(samples=[micro_dataset(seed).samples[0]],
                     class_names=["sphere", "cube", "torus"])
        clf = build(micro_config(), nk.stream(seed, "init"))
        opt = SgdMomentum(clf.params(), momentum=0.9)
        shuffle = nk.stream(seed, "sampling")
        model = nk.stream(seed, "dropout")
        losses = [train_epoch(clf, ds, opt, 0.01, 1, shuffle, model)
                  for _ in range(8)]
        tail = losses[3:]
        if not all(b < a for a, b in zip(tail, tail[1:])):
            failures += 1
    assert failures <= 1  # >= 95% of seeds


def test_overfit_reaches_perfect_train_accuracy():
    ds = Dataset(samples=micro_dataset(0).samples[:3],
                 class_names=["sphere", "cube", "torus"])
    clf = build(micro_config(), nk.stream(1, "init"))
    fit(clf, ds, TrainConfig(epochs=30, batch_size=3, lr_init=0.02,
                             lr_final=0.004, seed=0))
    m = evaluate(clf, ds)
    assert m.oa == 1.0
    assert m.ma == 1.0


def test_fit_rows_and_determinism():
    ds = micro_dataset(1)
    cfg = TrainConfig(epochs=4, batch_size=2, seed=5)

    def run():
        clf = build(micro_config(), nk.stream(5, "init"))
        rows = fit(clf, ds, cfg)
        return rows, {k: v.copy() for k, v in clf.params().items()}

    rows1, p1 = run()
    rows2, p2 = run()
    assert rows1 == rows2  # bit-identical floats
    for k in p1:
        assert np.array_equal(p1[k], p2[k]), k
    assert [r[0] for r in rows1] == [0, 1, 2, 3]
    assert rows1[0][1] == 0.1 and rows1[3][1] == 0.01


def test_fit_threads_match_serial():
    ds = micro_dataset(2)
    clfs = []
    for threads in (1, 3):
        clf = build(micro_config(), nk.stream(6, "init"))
        fit(clf, ds, TrainConfig(epochs=2, batch_size=3, seed=7, threads=threads))
        clfs.append(clf)
    for k, v in clfs[0].params().items():
        assert np.array_equal(v, clfs[1].params()[k]), k


def test_fit_with_augmentation_deterministic():
    ds = micro_dataset(3)
    rows = []
    for _ in range(2):
        clf = build(micro_config(), nk.stream(8, "init"))
        rows.append(fit(clf, ds, TrainConfig(epochs=2, batch_size=2, seed=9),
                        augment_cfg=AugmentConfig()))
    assert rows[0] == rows[1]


def test_fit_dropout_training_still_deterministic():
    ds = micro_dataset(4)
    results = []
    for _ in range(2):
        clf = build(micro_config(dropout_p=0.5), nk.stream(10, "init"))
        results.append(fit(clf, ds, TrainConfig(epochs=2, batch_size=2, seed=11)))
    assert results[0] == results[1]


def test_train_epoch_requires_augment_rng():
    ds = micro_dataset(5)
    clf = build(micro_config(), nk.stream(12, "init"))
    opt = SgdMomentum(clf.params(), 0.9)
    with pytest.raises(ContractError):
        train_epoch(clf, ds, opt, 0.01, 2, nk.stream(0, "sampling"),
                    nk.stream(0, "dropout"), augment_cfg=AugmentConfig())


# --------------------------------------------------------------- evaluate

def test_evaluate_warns_on_absent_class():
    ds = micro_dataset(6)
    ds = Dataset(samples=[s for s in ds.samples if s[1] != 2],
                 class_names=ds.class_names)
    clf = build(micro_config(), nk.stream(13, "init"))
    with pytest.warns(UserWarning, match="absent"):
        m = evaluate(clf, ds)
    assert np.isnan(m.per_class[2])
    assert np.isfinite(m.ma)


def test_evaluate_downsampling_model_is_deterministic():
    cfg = micro_config(downsample_ratios=(2, 1))
    clf = build(cfg, nk.stream(14, "init"))
    ds = micro_dataset(7, n_points=16)
    m1 = evaluate(clf, ds)
    m2 = evaluate(clf, ds)
    assert m1.loss == m2.loss and m1.oa == m2.oa


# ----------------------------------------------------------------- output

def test_write_metrics_csv_round_trip(tmp_path):
    rows = [(0, 0.1, 1.0986122886681098, 0.5, 0.4444444444444444),
            (1, 0.01, 0.9, 1.0, 1.0)]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    with open(path) as f:
        got = list(csv.reader(f))
    assert got[0] == ["epoch", "lr", "loss", "oa", "ma"]
    assert float(got[1][2]) == rows[0][2]  # %.17g round-trips exactly
    write_metrics_csv(tmp_path / "again.csv", rows)
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


# ---------------------------------------------------------------- ablation

def test_run_ablation_rows_and_summary(tmp_path):
    train_set = micro_dataset(8)
    test_set = micro_dataset(9)
    rows = run_ablation(micro_config(), ("full", "no_permutation"), (0, 1),
                        train_set, test_set,
                        TrainConfig(epochs=2, batch_size=3))
    assert [(r[0], r[1]) for r in rows] == [
        ("full", 0), ("full", 1), ("no_permutation", 0), ("no_permutation", 1)]
    for _, _, oa, ma in rows:
        assert 0.0 <= oa <= 1.0 and 0.0 <= ma <= 1.0
    summary = summarize_ablation(rows)
    assert [s[0] for s in summary] == ["full", "no_permutation"]
    full_oas = [r[2] for r in rows if r[0] == "full"]
    assert abs(summary[0][1] - np.mean(full_oas)) < 1e-15
    path = tmp_path / "ablation.csv"
    write_ablation_csv(path, rows)
    with open(path) as f:
        got = list(csv.reader(f))
    assert got[0] == ["variant", "seed", "oa", "ma"]
    assert len(got) == 5
