"""Self-verification suite: named runtime properties with one verdict each.

Every property re-derives its expectation independently of the code under
test (bisection instead of the sorting projection, finite differences
instead of the analytic backward, brute force instead of the grid search),
so a sign error or an off-by-one in the production path turns a check red
rather than silently shifting numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conv as pconv
from . import numkit
from .lattice import fibonacci_lattice, random_lattice, uniformity_stats
from .neighbors import NeighborIndex, PointCloud, knn_bruteforce, knn_grid
from .netcls import (ClassifierConfig, backward_logits, build, cross_entropy,
                     forward_logits, load_checkpoint, save_checkpoint)
from .train import cosine_lr


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _simplex_project_bisect(z: np.ndarray) -> np.ndarray:
    """Projection of z onto the simplex by bisection on the threshold."""
    lo, hi = z.max() - 1.0, z.max()
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if np.maximum(z - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(z - 0.5 * (lo + hi), 0.0)


def check_sparsemax_projection(seed: int) -> tuple[bool, str]:
    rng = numkit.stream(seed, "bench")
    worst = 0.0
    for _ in range(200):
        z = rng.uniform(-4, 4, size=rng.integers(2, 7))
        p = numkit.sparsemax(z)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            return False, "output left the simplex"
        worst = max(worst, np.abs(p - _simplex_project_bisect(z)).max())
    return worst <= 1e-6, f"max deviation from bisection oracle {worst:.2e}"


def _micro_config() -> ClassifierConfig:
    return ClassifierConfig(conv_channels=(3, 3), aggregate_width=4,
                            fc_widths=(4, 3), k_neighbors=3, kernel_points=4,
                            d_r=2, dropout_p=0.0)


def _masks_signature(tape) -> bytes:
    """Activation pattern of one forward pass; changes mark FD kinks."""
    parts = []
    for st in tape.stages:
        parts.append((st.tape.m > 0).tobytes())
        parts.append((st.tape.u > 0).tobytes())
        parts.append((st.tape.s > 0).tobytes())
    parts.append((tape.a_pre > 0).tobytes())
    for _, _, pre in tape.fc:
        parts.append((pre > 0).tobytes())
    return b"".join(parts)


def check_gradients(seed: int) -> tuple[bool, str]:
    """Full-chain analytic vs central differences, inputs included.

    Coordinate gradients exercise the simplex-projection backward rule,
    which parameter gradients never touch; both must agree with finite
    differences away from activation kinks.
    """
    rng = numkit.stream(seed, "bench")
    clf = build(_micro_config(), numkit.stream(seed, "init"))
    coords = rng.standard_normal((5, 3))
    label = 1
    nbr = knn_bruteforce(PointCloud(coords), 3)
    fixed = lambda cloud, k: nbr  # noqa: E731  hold neighbors across FD shifts

    def loss_at(cs):
        logits, tape = forward_logits(clf, PointCloud(cs), knn=fixed)
        val, dlogits = cross_entropy(logits, label)
        return val, dlogits, tape

    val, dlogits, tape = loss_at(coords)
    grads, dcoords, _ = backward_logits(clf, tape, dlogits)

    h = 1e-5
    checked, skipped, worst = 0, 0, 0.0

    def fd_check(base, apply, analytic, flat_positions):
        # apply(tensor) installs the candidate and returns (loss, signature)
        nonlocal checked, skipped, worst
        for pos in flat_positions:
            hi = base.ravel().copy()
            lo = base.ravel().copy()
            hi[pos] += h
            lo[pos] -= h
            vhi, sighi = apply(hi.reshape(base.shape))
            vlo, siglo = apply(lo.reshape(base.shape))
            apply(base)
            if sighi != siglo:
                skipped += 1   # an activation flipped inside the stencil
                continue
            fd = (vhi - vlo) / (2 * h)
            ref = analytic.ravel()[pos]
            rel = abs(fd - ref) / max(abs(fd), abs(ref), 1e-8)
            worst = max(worst, rel)
            checked += 1

    params = clf.params()
    for name in ("conv0.w", "conv0.wp", "conv1.b", "fc0.w", "agg.w"):
        arr = params[name].copy()

        def apply_param(v, n=name):
            clf.set_param(n, v)
            loss, _, t = loss_at(coords)
            return loss, _masks_signature(t)

        pick = rng.choice(arr.size, size=min(3, arr.size), replace=False)
        fd_check(arr, apply_param, grads[name], pick)

    def apply_coords(c):
        loss, _, t = loss_at(c)
        return loss, _masks_signature(t)

    pick = rng.choice(coords.size, size=6, replace=False)
    fd_check(coords, apply_coords, dcoords, pick)

    ok = worst < 1e-3 and checked >= 12
    return ok, f"{checked} coords checked ({skipped} at kinks), worst rel err {worst:.2e}"


def check_permutation_invariance(seed: int) -> tuple[bool, str]:
    rng = numkit.stream(seed, "bench")
    cfg = dict(conv_channels=(4, 4), aggregate_width=6, fc_widths=(4, 3),
               k_neighbors=8, kernel_points=8, d_r=4, dropout_p=0.0)
    full = build(ClassifierConfig(**cfg), numkit.stream(seed, "init"))
    slot = build(ClassifierConfig(variant="no_permutation", **cfg),
                 numkit.stream(seed, "init"))
    violations, worst_full = 0, 0.0
    trials = 10
    for _ in range(trials):
        cloud = PointCloud(rng.standard_normal((32, 3)))
        perm = rng.permutation(32)
        shuffled = PointCloud(cloud.coords[perm])

        def row_shuffled(c, k, rng=rng):
            nbr = knn_bruteforce(c, k)
            idx = nbr.idx.copy()
            for i in range(idx.shape[0]):   # keep self in row slot 0
                idx[i, 1:] = rng.permutation(idx[i, 1:])
            return NeighborIndex(k=k, idx=idx)

        base, _ = forward_logits(full, cloud)
        moved, _ = forward_logits(full, shuffled)
        mixed, _ = forward_logits(full, cloud, knn=row_shuffled)
        d = max(np.abs(base - moved).max(), np.abs(base - mixed).max())
        worst_full = max(worst_full, d)

        sbase, _ = forward_logits(slot, cloud)
        smix, _ = forward_logits(slot, cloud, knn=row_shuffled)
        violations += np.abs(sbase - smix).max() > 1e-7
    ok = worst_full <= 1e-7 and violations >= int(0.8 * trials)
    return ok, (f"full-model drift {worst_full:.2e}, "
                f"slot-order witness violated {violations}/{trials}")


def check_sparsemax_sparsity(seed: int) -> tuple[bool, str]:
    rng = numkit.stream(seed, "bench")
    coords = rng.standard_normal((200, 3))
    coords /= np.maximum(1.0, np.linalg.norm(coords, axis=1, keepdims=True))
    nbr = knn_bruteforce(PointCloud(coords), 40)
    rel = pconv.local_positions(PointCloud(coords), nbr)
    m = pconv.build_permutation(rel, fibonacci_lattice(32).points, "sparsemax")
    frac = float((m[:, :, 1:] > 0).mean())
    return frac < 0.5, f"mean support fraction {frac:.3f} (dense would be 1.0)"


def check_lattice_uniformity(seed: int) -> tuple[bool, str]:
    fib = uniformity_stats(fibonacci_lattice(33)).angle_std
    rand = [uniformity_stats(
        random_lattice(33, numkit.stream(seed, "bench", i))).angle_std
        for i in range(20)]
    mean_rand = float(np.mean(rand))
    return fib < mean_rand, f"fibonacci {fib:.4f} vs random mean {mean_rand:.4f}"


def check_knn_grid_equivalence(seed: int) -> tuple[bool, str]:
    rng = numkit.stream(seed, "bench")
    for t in range(10):
        n = int(rng.integers(5, 400))
        coords = rng.standard_normal((n, 3))
        if t % 3 == 2:   # clustered: stresses non-uniform cell occupancy
            coords[: n // 2] *= 0.01
        cloud = PointCloud(coords)
        k = int(rng.integers(1, min(12, n) + 1))
        cell = float(rng.uniform(0.2, 1.5))
        if not np.array_equal(knn_grid(cloud, k, cell).idx,
                              knn_bruteforce(cloud, k).idx):
            return False, f"mismatch at n={n}, k={k}"
    return True, "grid == brute force on 10 clouds"


def check_scheduler_endpoints(seed: int) -> tuple[bool, str]:
    del seed
    first = cosine_lr(0, 31, 0.1, 0.01)
    last = cosine_lr(30, 31, 0.1, 0.01)
    mid = cosine_lr(15, 31, 0.1, 0.01)
    ok = first == 0.1 and last == 0.01 and abs(mid - 0.055) <= 1e-12
    return ok, f"first {first}, last {last}, mid {mid}"


def check_checkpoint_roundtrip(seed: int) -> tuple[bool, str]:
    import tempfile
    from pathlib import Path
    clf = build(_micro_config(), numkit.stream(seed, "init"))
    cloud = PointCloud(numkit.stream(seed, "bench").standard_normal((6, 3)))
    base, _ = forward_logits(clf, cloud)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.ckpt"
        save_checkpoint(clf, str(path))
        text1 = path.read_bytes()
        loaded, _ = load_checkpoint(str(path))
        save_checkpoint(loaded, str(path))
        stable = path.read_bytes() == text1
    again, _ = forward_logits(loaded, cloud)
    ok = stable and np.array_equal(base, again)
    return ok, "save -> load -> save is byte-stable, logits preserved"


CHECKS = (
    ("sparsemax_projection", check_sparsemax_projection),
    ("gradient_check", check_gradients),
    ("permutation_invariance", check_permutation_invariance),
    ("sparsemax_sparsity", check_sparsemax_sparsity),
    ("lattice_uniformity", check_lattice_uniformity),
    ("knn_grid_equivalence", check_knn_grid_equivalence),
    ("scheduler_endpoints", check_scheduler_endpoints),
    ("checkpoint_roundtrip", check_checkpoint_roundtrip),
)


def run_checks(seed: int = 0, names: tuple[str, ...] | None = None) -> list[CheckResult]:
    """Run the suite (or the named subset) and collect verdicts."""
    known = {n for n, _ in CHECKS}
    if names:
        bad = set(names) - known
        if bad:
            raise numkit.ContractError(f"unknown checks: {sorted(bad)}")
    out = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # a crash is a failing property, not a crash of the suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append(CheckResult(name=name, ok=ok, detail=detail))
    return out
