"""Command-line entry point: one binary, six subcommands.

    paiconv gen-kernel  write a kernel-point file
    paiconv train       fit a classifier, write metrics.csv + model.ckpt
    paiconv eval        score a checkpoint on a dataset
    paiconv ablate      variant sweep, per-seed rows + summary
    paiconv bench       micro-benchmark CSV
    paiconv check       run the self-verification suite

Options come from flags and an optional INI config file (sections
[netcls], [train], [dataio]); flags override file values and unknown
sections or keys are rejected.  Exit codes: 0 success, 1 usage error
(bad flags, bad config file), 2 runtime failure (missing files, invalid
values caught by the library), 3 check-suite failure.  The environment
variable PAICONV_THREADS is the fallback for --threads.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys

from . import bench as bench_mod
from . import checks as checks_mod
from . import numkit
from .conv import VARIANTS
from .dataio import (AugmentConfig, ParseError, load_manifest, synth_shapes)
from .lattice import fibonacci_lattice, random_lattice
from .netcls import (ClassifierConfig, build, load_checkpoint,
                     save_checkpoint)
from .numkit import ContractError
from .train import (TrainConfig, evaluate, fit, run_ablation,
                    summarize_ablation, write_ablation_csv,
                    write_metrics_csv)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

# desk-scale defaults; the reference-scale network is configured via file
_NET_DEFAULTS = dict(conv_channels=(16, 16, 32), aggregate_width=64,
                     fc_widths=(32, 3), k_neighbors=16, kernel_points=16,
                     d_r=8, dropout_p=0.5, pooling="max")
# reference-scale runs override these via [train]; the desk default
# rate is calibrated so the small network trains stably without
# normalization layers
_TRAIN_DEFAULTS = dict(epochs=30, batch_size=8, lr_init=0.008,
                       lr_final=0.0016)
_DATA_DEFAULTS = dict(train_per_class=100, test_per_class=50, points=256,
                      augment=False)
_DATA_TYPES = dict(train_per_class=int, test_per_class=int, points=int,
                   augment=bool)


class UsageError(Exception):
    """Bad flags or bad config file; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):   # argparse default exit status is 2
        raise UsageError(message)


# ------------------------------------------------------------- config file

def _parse_typed(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise UsageError(
            f"config [{section}] {key} = {raw!r}: cannot parse as {typ.__name__}")


def _field_types(cls):
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, type) else None
        if t is None:   # from __future__ annotations: types arrive as strings
            name = str(f.type)
            t = {"int": int, "float": float, "str": str, "tuple": tuple}.get(name)
        out[f.name] = t or str
    return out


def load_file_config(path: str) -> dict:
    """INI file -> {"netcls": {...}, "train": {...}, "dataio": {...}}."""
    known = {
        "netcls": _field_types(ClassifierConfig),
        "train": {k: t for k, t in _field_types(TrainConfig).items()
                  if k not in ("seed", "threads")},
        "dataio": _DATA_TYPES,
    }
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str    # keep key case: keys are exact field names
    try:
        with open(path, encoding="ascii") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except configparser.Error as exc:
        raise UsageError(f"malformed config file: {exc}")
    out = {}
    for section in cp.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}]")
        fields = known[section]
        vals = {}
        for key, raw in cp[section].items():
            if key not in fields:
                raise UsageError(f"unknown key {key!r} in section [{section}]")
            vals[key] = _parse_typed(section, key, raw, fields[key])
        out[section] = vals
    return out


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        env = os.environ.get("PAICONV_THREADS")
        if env is None:
            return 1
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"PAICONV_THREADS={env!r} is not an integer")
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _merged_configs(args):
    """(ClassifierConfig, TrainConfig, data dict, AugmentConfig | None)."""
    filecfg = load_file_config(args.config) if args.config else {}
    net_kw = dict(_NET_DEFAULTS)
    net_kw.update(filecfg.get("netcls", {}))
    if getattr(args, "variant", None):
        net_kw["variant"] = args.variant
    train_kw = dict(_TRAIN_DEFAULTS)
    train_kw.update(filecfg.get("train", {}))
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("lr_init", "lr_init"), ("lr_final", "lr_final")):
        v = getattr(args, flag, None)
        if v is not None:
            train_kw[key] = v
    train_kw["seed"] = args.seed
    train_kw["threads"] = _resolve_threads(args)
    data_kw = dict(_DATA_DEFAULTS)
    data_kw.update(filecfg.get("dataio", {}))
    for flag in ("train_per_class", "test_per_class", "points"):
        v = getattr(args, flag, None)
        if v is not None:
            data_kw[flag] = v
    if getattr(args, "augment", False):
        data_kw["augment"] = True
    aug = AugmentConfig() if data_kw.pop("augment") else None
    return ClassifierConfig(**net_kw), TrainConfig(**train_kw), data_kw, aug


def _synthetic_pair(data_kw: dict, seed: int):
    train = synth_shapes(data_kw["train_per_class"], data_kw["points"],
                         numkit.stream(seed, "data"))
    test = synth_shapes(data_kw["test_per_class"], data_kw["points"],
                        numkit.stream(seed, "data", index=1))
    return train, test


# ------------------------------------------------------------- subcommands

def cmd_gen_kernel(args) -> int:
    if args.count < 2:
        raise UsageError("--count must be at least 2 (origin plus one point)")
    if args.mode == "fibonacci":
        lat = fibonacci_lattice(args.count)
    else:
        lat = random_lattice(args.count, numkit.stream(args.seed, "sampling"))
    with open(args.out, "w", encoding="ascii") as fh:
        for row in lat.points:
            fh.write(" ".join("%.17g" % v for v in row) + "\n")
    print(f"wrote {lat.count} kernel points to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    net_cfg, train_cfg, data_kw, aug = _merged_configs(args)
    if args.data == "synthetic":
        train_set, _ = _synthetic_pair(data_kw, args.seed)
    else:
        train_set = load_manifest(args.data, data_kw["points"],
                                  numkit.stream(args.seed, "data"))
    if net_cfg.num_classes != len(train_set.class_names):
        raise ContractError(
            f"model has {net_cfg.num_classes} outputs but data has "
            f"{len(train_set.class_names)} classes; adjust fc_widths")
    os.makedirs(args.out_dir, exist_ok=True)
    clf = build(net_cfg, numkit.stream(args.seed, "init"))
    log = None if args.quiet else print
    rows = fit(clf, train_set, train_cfg, aug, log=log)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    write_metrics_csv(metrics_path, rows)
    meta = {
        "data": args.data,
        "data_seed": args.seed,
        "points": data_kw["points"],
        "train_per_class": data_kw["train_per_class"],
        "test_per_class": data_kw["test_per_class"],
        "classes": ",".join(train_set.class_names),
        "final_train_oa": "%.17g" % rows[-1][3],
        "final_train_ma": "%.17g" % rows[-1][4],
    }
    ckpt_path = os.path.join(args.out_dir, "model.ckpt")
    save_checkpoint(clf, ckpt_path, meta)
    print(f"wrote {metrics_path} and {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    clf, meta = load_checkpoint(args.checkpoint)
    if args.data == "synthetic":
        for key in ("data_seed", "points", "train_per_class", "test_per_class"):
            if key not in meta:
                raise ContractError(
                    f"checkpoint lacks {key!r}; cannot regenerate synthetic data")
        data_kw = dict(train_per_class=int(meta["train_per_class"]),
                       test_per_class=int(meta["test_per_class"]),
                       points=int(meta["points"]))
        train_set, test_set = _synthetic_pair(data_kw, int(meta["data_seed"]))
        ds = train_set if args.split == "train" else test_set
    else:
        points = int(meta.get("points", _DATA_DEFAULTS["points"]))
        ds = load_manifest(args.data, points, numkit.stream(args.seed, "data"))
    m = evaluate(clf, ds)
    print("oa,ma")
    print("%.17g,%.17g" % (m.oa, m.ma))
    return EXIT_OK


def cmd_ablate(args) -> int:
    net_cfg, train_cfg, data_kw, aug = _merged_configs(args)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise UsageError(f"unknown variants: {sorted(unknown)}")
    train_set, test_set = _synthetic_pair(data_kw, args.seed)
    seeds = list(range(args.seeds))
    log = None if args.quiet else print
    rows = run_ablation(net_cfg, variants, seeds, train_set, test_set,
                        train_cfg, aug, log=log)
    write_ablation_csv(args.out, rows)
    print(f"wrote {args.out}")
    print("variant,mean_oa,std_oa,mean_ma,std_ma")
    for variant, oa_m, oa_s, ma_m, ma_s in summarize_ablation(rows):
        print("%s,%.17g,%.17g,%.17g,%.17g" % (variant, oa_m, oa_s, ma_m, ma_s))
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes_n = [int(x) for x in args.n.split(",")]
    sizes_k = [int(x) for x in args.k.split(",")]
    sizes_l = [int(x) for x in args.l.split(",")]
    threads = _resolve_threads(args)
    reports = []
    for n in sizes_n:
        for k in sizes_k:
            for l in sizes_l:
                reports += bench_mod.bench_permutation(
                    n, k, l, repeats=args.repeats, sigma=args.sigma,
                    threads=threads,
                    rng=numkit.stream(args.seed, "bench"))
    bench_mod.write_bench_csv(reports, args.out)
    print(bench_mod.BENCH_HEADER)
    for rep in reports:
        print(rep.row())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    names = tuple(n.strip() for n in args.only.split(",") if n.strip()) \
        if args.only else None
    results = checks_mod.run_checks(seed=args.seed, names=names)
    failed = 0
    for r in results:
        verdict = "pass" if r.ok else "FAIL"
        print(f"{r.name}: {verdict} ({r.detail})")
        failed += not r.ok
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="paiconv",
                description="Permutable anisotropic point convolution toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, threads=True):
        sp.add_argument("--seed", type=int, default=0,
                        help="base seed for every random stream (default 0)")
        if threads:
            sp.add_argument("--threads", type=int, default=None,
                            help="worker threads; falls back to PAICONV_THREADS, then 1")

    g = sub.add_parser("gen-kernel", help="write kernel points to a file")
    g.add_argument("--count", type=int, required=True,
                   help="total points including the origin (min 2)")
    g.add_argument("--mode", choices=("fibonacci", "random"), default="fibonacci",
                   help="spiral lattice or seeded random directions")
    g.add_argument("--out", required=True, help="output path, one 'x y z' per line")
    common(g, threads=False)
    g.set_defaults(fn=cmd_gen_kernel)

    def train_like(sp):
        sp.add_argument("--config", default=None,
                        help="INI file with [netcls]/[train]/[dataio] sections")
        sp.add_argument("--epochs", type=int, default=None,
                        help="training epochs (default 30)")
        sp.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                        help="samples per gradient step")
        sp.add_argument("--lr-init", dest="lr_init", type=float, default=None,
                        help="initial learning rate (default 0.008)")
        sp.add_argument("--lr-final", dest="lr_final", type=float, default=None,
                        help="final learning rate of the cosine schedule (default 0.0016)")
        sp.add_argument("--train-per-class", dest="train_per_class", type=int,
                        default=None, help="synthetic training clouds per class")
        sp.add_argument("--test-per-class", dest="test_per_class", type=int,
                        default=None, help="synthetic test clouds per class")
        sp.add_argument("--points", type=int, default=None,
                        help="points sampled per cloud")
        sp.add_argument("--augment", action="store_true",
                        help="enable scale/shift/jitter training augmentation")
        sp.add_argument("--quiet", action="store_true",
                        help="suppress per-epoch progress lines")
        common(sp)

    t = sub.add_parser("train", help="fit a classifier and save artifacts")
    t.add_argument("--data", default="synthetic",
                   help="'synthetic' or a manifest file of 'path<TAB>label' lines")
    t.add_argument("--variant", choices=VARIANTS, default=None,
                   help="operator variant (default: full)")
    t.add_argument("--out-dir", dest="out_dir", default=".",
                   help="directory for metrics.csv and model.ckpt")
    train_like(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--checkpoint", required=True, help="path to model.ckpt")
    e.add_argument("--data", default="synthetic",
                   help="'synthetic' (regenerated from checkpoint meta) or a manifest")
    e.add_argument("--split", choices=("train", "test"), default="test",
                   help="synthetic split to score (default test)")
    common(e, threads=False)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="variant sweep over seeds")
    a.add_argument("--variants", default=",".join(VARIANTS),
                   help="comma list of variants (default: all)")
    a.add_argument("--seeds", type=int, default=5,
                   help="number of seeds, used as 0..N-1 (default 5)")
    a.add_argument("--out", default="ablation.csv",
                   help="per-seed result CSV (summary goes to stdout)")
    train_like(a)
    a.set_defaults(fn=cmd_ablate)

    b = sub.add_parser("bench", help="time the permutation against a correlation stub")
    b.add_argument("--n", default="4096", help="comma list of cloud sizes")
    b.add_argument("--k", default="16", help="comma list of neighbor counts")
    b.add_argument("--l", default="16", help="comma list of kernel sizes")
    b.add_argument("--repeats", type=int, default=9,
                   help="timed repeats per op, median reported (min 5)")
    b.add_argument("--sigma", type=float, default=None,
                   help="correlation bandwidth (default: mean neighbor distance)")
    b.add_argument("--out", default="bench.csv", help="output CSV path")
    common(b)
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("check", help="run the self-verification suite")
    c.add_argument("--only", default=None,
                   help="comma list of property names (default: all)")
    common(c, threads=False)
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
