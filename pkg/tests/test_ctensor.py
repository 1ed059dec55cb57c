import math

import numpy as np
import pytest

from cvnnlab.ctensor import (
    CTensor,
    DomainError,
    ShapeError,
    cmul,
    matmul_oracle,
    polar_compose,
    polar_decompose,
)


def test_polar_decompose_pythagorean():
    r, theta = polar_decompose(CTensor(np.array([3.0]), np.array([4.0])))
    assert r[0] == pytest.approx(5.0, abs=0)
    assert theta[0] == pytest.approx(math.atan2(4, 3), abs=1e-15)


def test_polar_decompose_branch_convention():
    r, theta = polar_decompose(CTensor(np.array([-1.0]), np.array([0.0])))
    assert theta[0] == pytest.approx(math.pi)
    # a negative-zero imaginary part must not flip the branch
    r, theta = polar_decompose(CTensor(np.array([-1.0]), np.array([-0.0])))
    assert theta[0] == pytest.approx(math.pi)


def test_polar_decompose_zero():
    r, theta = polar_decompose(CTensor.zeros(3))
    assert np.all(r == 0.0)
    assert np.all(theta == 0.0)


def test_polar_compose_examples():
    z = polar_compose(np.array([1.0]), np.array([0.0]))
    assert z.re[0] == 1.0 and z.im[0] == 0.0
    z = polar_compose(np.array([2.0]), np.array([math.pi / 2]))
    assert z.re[0] == pytest.approx(0.0, abs=1e-15)
    assert z.im[0] == pytest.approx(2.0)
    z = polar_compose(np.array([5.0]), np.array([0.9273]))
    assert z.re[0] == pytest.approx(3.0, abs=1e-3)
    assert z.im[0] == pytest.approx(4.0, abs=1e-3)


def test_polar_compose_rejects_negative_magnitude():
    with pytest.raises(DomainError):
        polar_compose(np.array([-1.0]), np.array([0.0]))


def test_polar_round_trip_property():
    rng = np.random.default_rng(11)
    z = CTensor(rng.normal(size=500) * 10, rng.normal(size=500) * 10)
    back = polar_compose(*polar_decompose(z))
    scale = np.maximum(z.abs(), 1e-30)
    assert np.max(np.abs(back.re - z.re) / scale) < 1e-12
    assert np.max(np.abs(back.im - z.im) / scale) < 1e-12


def test_conj_involution():
    rng = np.random.default_rng(5)
    z = CTensor(rng.normal(size=64), rng.normal(size=64))
    back = z.conj().conj()
    assert np.array_equal(back.re, z.re)
    assert np.array_equal(back.im, z.im)


def test_cmul_hand_examples():
    a = CTensor(np.array([1.0]), np.array([2.0]))
    b = CTensor(np.array([3.0]), np.array([4.0]))
    p = cmul(a, b)
    assert p.re[0] == -5.0 and p.im[0] == 10.0
    one = CTensor(np.array([1.0]), np.array([0.0]))
    q = cmul(a, one)
    assert q.re[0] == a.re[0] and q.im[0] == a.im[0]
    m = cmul(a, a.conj())
    assert m.re[0] == pytest.approx(5.0)
    assert m.im[0] == pytest.approx(0.0, abs=1e-15)


def test_cmul_commutative_associative_modulus():
    rng = np.random.default_rng(17)
    a = CTensor(rng.uniform(-10, 10, 200), rng.uniform(-10, 10, 200))
    b = CTensor(rng.uniform(-10, 10, 200), rng.uniform(-10, 10, 200))
    c = CTensor(rng.uniform(-10, 10, 200), rng.uniform(-10, 10, 200))
    ab = cmul(a, b)
    ba = cmul(b, a)
    assert np.max(np.abs(ab.re - ba.re)) < 1e-12
    assert np.max(np.abs(ab.im - ba.im)) < 1e-12
    left = cmul(ab, c)
    right = cmul(a, cmul(b, c))
    scale = np.maximum(np.abs(left.to_complex()), 1.0)
    assert np.max(np.abs(left.to_complex() - right.to_complex()) / scale) < 1e-12
    assert np.max(np.abs(ab.abs() - a.abs() * b.abs())) < 1e-10 * np.max(ab.abs())


def test_cmul_shape_error():
    a = CTensor(np.zeros((2, 3)), np.zeros((2, 3)))
    b = CTensor(np.zeros(4), np.zeros(4))
    with pytest.raises(ShapeError):
        cmul(a, b)


def test_nonfinite_rejected():
    with pytest.raises(DomainError):
        CTensor(np.array([np.nan]), np.array([0.0]))
    with pytest.raises(DomainError):
        CTensor(np.array([0.0]), np.array([np.inf]))


def _schoolbook(w: CTensor, z: CTensor) -> np.ndarray:
    wc = w.to_complex()
    zc = z.to_complex()
    out = np.zeros(w.shape[0], dtype=complex)
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            out[i] += wc[i, j] * zc[j]
    return out


def test_matmul_oracle_identity_and_rotation():
    eye = CTensor(np.eye(3), np.zeros((3, 3)))
    z = CTensor(np.array([1.0, -2.0, 0.5]), np.array([0.0, 1.0, 3.0]))
    out = matmul_oracle(eye, z)
    assert np.array_equal(out.re, z.re) and np.array_equal(out.im, z.im)
    rot = CTensor(np.zeros((1, 1)), np.ones((1, 1)))
    out = matmul_oracle(rot, CTensor(np.array([1.0]), np.array([0.0])))
    assert out.re[0] == 0.0 and out.im[0] == 1.0


def test_matmul_oracle_vs_schoolbook():
    rng = np.random.default_rng(23)
    for _ in range(20):
        w = CTensor(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
        z = CTensor(rng.normal(size=2), rng.normal(size=2))
        ours = matmul_oracle(w, z).to_complex()
        ref = _schoolbook(w, z)
        assert np.max(np.abs(ours - ref)) <= 1e-12


def test_matmul_oracle_dimension_mismatch():
    w = CTensor(np.zeros((2, 3)), np.zeros((2, 3)))
    z = CTensor(np.zeros(4), np.zeros(4))
    with pytest.raises(ShapeError):
        matmul_oracle(w, z)
