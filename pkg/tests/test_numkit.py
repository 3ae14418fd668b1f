import numpy as np
import pytest

from paiconv import numkit as nk
from oracles import simplex_project_enum, fd_jvp


# ---------------------------------------------------------------- matmul

def test_matmul_hand_cases():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    # worked by hand: [[1*5+2*7, 1*6+2*8], [3*5+4*7, 3*6+4*8]]
    assert np.array_equal(nk.matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])
    c = np.array([[1.0, 0.0, 2.0]])
    d = np.array([[1.0], [10.0], [100.0]])
    assert np.array_equal(nk.matmul(c, d), [[201.0]])


def test_matmul_rejects_bad_shapes():
    with pytest.raises(nk.ContractError):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(nk.ContractError):
        nk.matmul(np.ones(3), np.ones((3, 2)))


def test_matmul_rejects_nonfinite_result():
    big = np.full((2, 2), 1e308)
    with pytest.raises(nk.ContractError):
        nk.matmul(big, big)


def test_matmul_associativity_tolerance():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        c = rng.standard_normal((3, 6))
        left = nk.matmul(nk.matmul(a, b), c)
        right = nk.matmul(a, nk.matmul(b, c))
        assert np.abs(left - right).max() < 1e-10


def test_as_matrix_contract():
    with pytest.raises(nk.ContractError):
        nk.as_matrix(np.ones(3))
    with pytest.raises(nk.ContractError):
        nk.as_matrix(np.array([[1.0, np.nan]]))
    m = nk.as_matrix([[1, 2], [3, 4]])
    assert m.dtype == np.float64


# ---------------------------------------------------------------- elu

def test_elu_frozen_values():
    # g(x) = x for x > 0, exp(x) - 1 otherwise
    assert nk.elu(np.array(1.5)) == 1.5
    assert nk.elu(np.array(0.0)) == 0.0
    assert abs(nk.elu(np.array(-1.0)) - (-0.6321205588285577)) < 1e-16
    assert nk.elu(np.array(-10.0)) > -1.0  # bounded below by -1
    assert nk.elu(np.array(-40.0)) >= -1.0  # fp64 saturates at the bound


def test_elu_grad_frozen_values():
    assert nk.elu_grad(np.array(2.0)) == 1.0
    assert nk.elu_grad(np.array(0.0)) == 1.0  # continuous at the joint
    assert abs(nk.elu_grad(np.array(-1.0)) - 0.36787944117144233) < 1e-16


def test_elu_continued_smoothly_at_zero():
    eps = 1e-9
    assert abs(nk.elu(np.array(eps)) - eps) < 1e-18
    assert abs(nk.elu(np.array(-eps)) + eps) < 1e-15
    assert abs(nk.elu_grad(np.array(-1e-12)) - 1.0) < 1e-11


def test_elu_grad_matches_central_differences():
    rng = np.random.default_rng(11)
    x = rng.uniform(-4.0, 4.0, size=200)
    x = x[np.abs(x) > 1e-3]  # stay clear of the joint at 0
    h = 1e-5
    fd = (nk.elu(x + h) - nk.elu(x - h)) / (2.0 * h)
    g = nk.elu_grad(x)
    rel = np.abs(fd - g) / np.maximum(np.abs(g), 1e-12)
    assert rel.max() < 1e-8


def test_elu_no_overflow_for_large_positive():
    with np.errstate(over="raise"):
        out = nk.elu(np.array([800.0, -800.0]))
    assert out[0] == 800.0
    assert out[1] == -1.0


# ---------------------------------------------------------------- softmax

def test_softmax_hand_case():
    p = nk.softmax(np.array([0.0, 0.0]))
    assert np.array_equal(p, [0.5, 0.5])
    p = nk.softmax(np.array([1.0, 1.0, 1.0, 1.0]))
    assert np.abs(p - 0.25).max() < 1e-15


def test_softmax_shift_invariance_and_stability():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(8)
    assert np.abs(nk.softmax(z) - nk.softmax(z + 123.0)).max() < 1e-15
    with np.errstate(over="raise"):
        p = nk.softmax(np.array([1e4, 0.0]))
    assert p[0] > 0.999


def test_softmax_strictly_positive():
    p = nk.softmax(np.array([100.0, -100.0, 0.0]))
    assert (p > 0).all()


# ---------------------------------------------------------------- sparsemax

def test_sparsemax_hand_cases():
    # support {0}: sorted [1.1, 0.1]; k=2 fails since 1 + 2*0.1 == 1.2
    assert np.array_equal(nk.sparsemax(np.array([1.1, 0.1])), [1.0, 0.0])
    # all ties: uniform
    assert np.array_equal(nk.sparsemax(np.zeros(4)), np.full(4, 0.25))
    # already on the simplex: unchanged
    z = np.array([0.3, 0.7])
    assert np.abs(nk.sparsemax(z) - z).max() < 1e-15


def test_sparsemax_exact_zeros():
    p = nk.sparsemax(np.array([2.0, 0.0, -1.0]))
    assert p[0] == 1.0 and p[1] == 0.0 and p[2] == 0.0


def test_sparsemax_matches_enumeration_oracle():
    rng = np.random.default_rng(17)
    for _ in range(300):
        n = int(rng.integers(1, 7))
        z = rng.uniform(-3.0, 3.0, size=n) * rng.choice([0.1, 1.0, 10.0])
        p = nk.sparsemax(z)
        q = simplex_project_enum(z)
        assert np.abs(p - q).max() < 1e-9
        assert abs(p.sum() - 1.0) < 1e-12
        assert (p >= 0).all()


def test_sparsemax_shift_invariance():
    rng = np.random.default_rng(23)
    for shift in (-7.0, 0.5, 1000.0):
        z = rng.standard_normal(6)
        d = np.abs(nk.sparsemax(z) - nk.sparsemax(z + shift)).max()
        assert d <= 1e-12


def test_sparsemax_preserves_ordering():
    rng = np.random.default_rng(29)
    for _ in range(50):
        z = rng.standard_normal(8)
        p = nk.sparsemax(z)
        order = np.argsort(z)
        assert (np.diff(p[order]) >= -1e-15).all()


def test_sparsemax_axis_handling():
    rng = np.random.default_rng(31)
    z = rng.standard_normal((4, 6))
    p0 = nk.sparsemax(z, axis=0)
    assert np.abs(p0.sum(axis=0) - 1.0).max() < 1e-12
    # axis semantics match projecting each slice independently
    for j in range(6):
        assert np.abs(p0[:, j] - nk.sparsemax(z[:, j])).max() < 1e-15
    p1 = nk.sparsemax(z, axis=1)
    assert np.abs(p1.sum(axis=1) - 1.0).max() < 1e-12


def test_sparsemax_empty_axis_raises():
    with pytest.raises(nk.ContractError):
        nk.sparsemax(np.zeros((3, 0)), axis=1)


# ------------------------------------------------- sparsemax gradient

def test_sparsemax_grad_hand_cases():
    # full support, uniform output: J v = v - mean(v)
    z = np.zeros(4)
    p = nk.sparsemax(z)
    v = np.array([1.0, 0.0, 0.0, 0.0])
    g = nk.sparsemax_grad(p, v)
    assert np.abs(g - [0.75, -0.25, -0.25, -0.25]).max() < 1e-15
    # singleton support: gradient vanishes identically
    p = nk.sparsemax(np.array([3.0, 0.0, 0.0]))
    g = nk.sparsemax_grad(p, np.array([1.0, 5.0, -2.0]))
    assert np.array_equal(g, np.zeros(3))


def test_sparsemax_grad_zero_off_support():
    z = np.array([1.0, 0.9, -5.0, -5.0])
    p = nk.sparsemax(z)
    assert p[2] == 0.0 and p[3] == 0.0
    g = nk.sparsemax_grad(p, np.ones(4))
    assert g[2] == 0.0 and g[3] == 0.0


def test_sparsemax_jvp_matches_central_differences():
    rng = np.random.default_rng(41)
    h = 1e-6
    checked = 0
    while checked < 60:
        z = rng.uniform(-2.0, 2.0, size=int(rng.integers(2, 7)))
        v = rng.standard_normal(z.size)
        # skip draws whose support flips inside the FD stencil
        sup_p = nk.sparsemax(z + h * v) > 0
        sup_m = nk.sparsemax(z - h * v) > 0
        if not np.array_equal(sup_p, sup_m):
            continue
        jv = nk.sparsemax_jacobian_vp(z, v)
        fd = fd_jvp(lambda t: nk.sparsemax(t), z, v, h=h)
        denom = max(np.abs(fd).max(), 1e-10)
        assert np.abs(jv - fd).max() / denom < 1e-6
        checked += 1


def test_sparsemax_grad_batched_matches_per_vector():
    rng = np.random.default_rng(43)
    z = rng.standard_normal((5, 7))
    v = rng.standard_normal((5, 7))
    p = nk.sparsemax(z, axis=1)
    g = nk.sparsemax_grad(p, v, axis=1)
    for i in range(5):
        gi = nk.sparsemax_grad(p[i], v[i])
        assert np.abs(g[i] - gi).max() < 1e-15


# ---------------------------------------------------------------- rng

def test_stream_is_reproducible():
    a = nk.stream(123, "init").standard_normal(16)
    b = nk.stream(123, "init").standard_normal(16)
    assert np.array_equal(a, b)


def test_streams_are_distinct():
    a = nk.stream(123, "init").standard_normal(16)
    b = nk.stream(123, "sampling").standard_normal(16)
    c = nk.stream(123, "init", index=1).standard_normal(16)
    d = nk.stream(124, "init").standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_stream_unknown_purpose():
    with pytest.raises(nk.ContractError):
        nk.stream(0, "nonsense")


def test_seeded_pipeline_is_bit_identical():
    def run():
        rng = nk.stream(777, "sampling")
        a = rng.standard_normal((32, 8))
        b = rng.standard_normal((8, 4))
        return nk.matmul(nk.elu(a), b)

    x = run()
    y = run()
    assert x.tobytes() == y.tobytes()
