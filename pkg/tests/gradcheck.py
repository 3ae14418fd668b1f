"""Finite-difference gradient checking with kink exclusion.

The loss surfaces here are piecewise smooth: sparsemax support sets and
ELU sign patterns change along measure-zero boundaries where central
differences are meaningless.  ``fd_compare`` therefore asks the loss
function for its activation masks and skips any coordinate whose masks
differ between the +h and -h evaluations.
"""

import numpy as np


def masks_signature(masks):
    """Hashable snapshot of a tuple of boolean arrays."""
    return tuple(m.tobytes() for m in masks)


def fd_compare(loss_fn, arrays, analytic, h=1e-5, rtol=1e-4, min_checked=0.5):
    """Check analytic gradients of a scalar loss against central FD.

    loss_fn() -> (loss, masks) evaluated at the current values of
    ``arrays`` (mutated in place coordinate by coordinate).  ``arrays``
    and ``analytic`` are parallel lists.  Coordinates whose activation
    masks flip inside the stencil are skipped; at least ``min_checked``
    of all coordinates must survive or the check itself fails.

    Returns (worst relative error, fraction checked).
    """
    worst = 0.0
    checked = 0
    total = 0
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            total += 1
            orig = flat[i]
            flat[i] = orig + h
            lp, masks_p = loss_fn()
            flat[i] = orig - h
            lm, masks_m = loss_fn()
            flat[i] = orig
            if masks_signature(masks_p) != masks_signature(masks_m):
                continue
            fd = (lp - lm) / (2.0 * h)
            scale = max(abs(fd), abs(gflat[i]), 1e-8)
            err = abs(fd - gflat[i]) / scale
            worst = max(worst, err)
            checked += 1
            assert err < rtol, (
                f"coordinate {i} of array with shape {arr.shape}: "
                f"fd={fd!r} analytic={gflat[i]!r} rel_err={err:.3e}")
    frac = checked / max(total, 1)
    assert frac >= min_checked, f"only {frac:.0%} of coordinates were checkable"
    return worst, frac
