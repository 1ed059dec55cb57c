import math

import numpy as np
import pytest

from cvnnlab.autograd import (
    Adam,
    CVar,
    Parameter,
    Tape,
    backward,
    cmag_sq,
    cmul_t,
    mean,
    node_count,
    sgd_step,
    ste_identity,
)
from cvnnlab.ctensor import CTensor, matmul_oracle
from cvnnlab.layers import Backend, ComplexLinear, quantize_phase
from cvnnlab.verify import finite_difference, max_relative_error


def test_backward_quadratic_example():
    # L = |z|^2 at z = 3 + 4i -> (6, 8)
    tape = Tape()
    p = Parameter("z", CTensor(np.array([3.0]), np.array([4.0])))
    z = tape.register(p)
    loss = mean(cmag_sq(z))
    backward(tape, loss)
    assert p.grad.g_r[0] == pytest.approx(6.0)
    assert p.grad.g_i[0] == pytest.approx(8.0)


def test_backward_linear_example():
    # L = Re(w z) with w = a + bi fixed -> gradient (a, -b)
    a, b = 1.7, -0.6
    tape = Tape()
    p = Parameter("z", CTensor(np.array([0.3]), np.array([0.9])))
    z = tape.register(p)
    w = tape.complex_leaf(CTensor(np.array([a]), np.array([b])))
    prod = cmul_t(w, z)
    loss = mean(prod.re)
    backward(tape, loss)
    assert p.grad.g_r[0] == pytest.approx(a)
    assert p.grad.g_i[0] == pytest.approx(-b)


def test_backward_matches_finite_differences():
    # L = |W z - t|^2 for a random 2x2 complex system
    rng = np.random.default_rng(3)
    w = CTensor(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    t = CTensor(rng.normal(size=2), rng.normal(size=2))
    p = Parameter("z", CTensor(rng.normal(size=2), rng.normal(size=2)))

    def build():
        tape = Tape()
        z = tape.register(p)
        wz = tape.complex_leaf(w)
        # W z via cmul-style expansion over rows, using the oracle layout
        out = matmul_oracle(w, CTensor(z.re.value, z.im.value))
        # tape version of the residual: use ComplexLinear-free primitives
        from cvnnlab.autograd import linear_mm, sub, add

        yr = sub(linear_mm(_row(tape, z.re), _wleaf(tape, w.re)),
                 linear_mm(_row(tape, z.im), _wleaf(tape, w.im)))
        yi = add(linear_mm(_row(tape, z.re), _wleaf(tape, w.im)),
                 linear_mm(_row(tape, z.im), _wleaf(tape, w.re)))
        res = CVar(sub(yr, tape.leaf(t.re[None, :])), sub(yi, tape.leaf(t.im[None, :])))
        return tape, mean(cmag_sq(res))

    def _row(tape, v):
        from cvnnlab.autograd import reshape

        return reshape(v, (1, 2))

    def _wleaf(tape, plane):
        return tape.leaf(plane)

    tape, loss = build()
    backward(tape, loss)
    analytic = [p.grad.g_r, p.grad.g_i]

    def f():
        _, l = build()
        return float(l.value)

    numeric = finite_difference(f, [p.value.re, p.value.im], h=1e-5)
    assert max_relative_error(analytic, numeric, floor=1e-6) <= 1e-6


def test_backward_rejects_bad_losses():
    tape = Tape()
    v = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        backward(tape, v)
    z = tape.complex_leaf(CTensor(np.array([1.0]), np.array([0.5])))
    with pytest.raises(ValueError):
        backward(tape, z)


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    used = Parameter("used", CTensor(np.array([1.0]), np.array([0.0])))
    idle = Parameter("idle", CTensor(np.array([2.0]), np.array([2.0])))
    z = tape.register(used)
    tape.register(idle)
    backward(tape, mean(cmag_sq(z)))
    assert np.all(idle.grad.g_r == 0.0)
    assert np.all(idle.grad.g_i == 0.0)


def test_ste_identity_forward_and_backward():
    tape = Tape()
    z = tape.complex_leaf(CTensor(np.array([1.0, 0.2]), np.array([-0.5, 0.8])))
    forced = CTensor(np.array([9.0, 8.0]), np.array([7.0, 6.0]))
    out = ste_identity(z, forced)
    assert np.array_equal(out.re.value, forced.re)
    proj = CTensor(np.array([0.3, -1.2]), np.array([2.0, 0.1]))
    from cvnnlab.autograd import add, mul, sum_

    loss = add(sum_(mul(out.re, tape.leaf(proj.re))),
               sum_(mul(out.im, tape.leaf(proj.im))))
    grads = backward(tape, loss)
    assert np.array_equal(grads[z.re.vid], proj.re)
    assert np.array_equal(grads[z.im.vid], proj.im)


def test_ste_composite_magnitude_loss():
    # on the quantization lattice PQ is the identity, so the straight-through
    # gradient of |PQ(z)|^2 equals the direct gradient of |z|^2
    levels = 8
    theta = 2 * math.pi * np.array([1.0, -2.0, 3.0]) / levels
    zin = CTensor(1.5 * np.cos(theta), 1.5 * np.sin(theta))
    tape = Tape()
    z = tape.complex_leaf(zin)
    q = quantize_phase(CTensor(z.re.value, z.im.value), levels)
    out = ste_identity(z, q)
    grads = backward(tape, mean(cmag_sq(out)))
    assert np.allclose(grads[z.re.vid], 2.0 * zin.re / 3, atol=1e-12)
    assert np.allclose(grads[z.im.vid], 2.0 * zin.im / 3, atol=1e-12)


def test_node_count_empty_and_snapshot():
    tape = Tape()
    assert node_count(tape) == 0
    zin = CTensor(np.ones((2, 3)), np.zeros((2, 3)))
    counts = {}
    for bk in Backend:
        layer = ComplexLinear(3, 3, backend=bk, rng=np.random.default_rng(0))
        tape = Tape()
        layer.forward(tape, tape.complex_leaf(zin))
        counts[bk] = node_count(tape)
    # golden snapshot of this library's op decomposition
    assert counts[Backend.NAIVE] == 8
    assert counts[Backend.GAUSS] == 10
    assert counts[Backend.BLOCK] == 1
    assert counts[Backend.BLOCK] < counts[Backend.NAIVE]


def test_node_count_deterministic():
    zin = CTensor(np.ones((2, 4)), np.zeros((2, 4)))

    def count_once():
        layer = ComplexLinear(4, 4, backend=Backend.GAUSS,
                              rng=np.random.default_rng(1))
        tape = Tape()
        layer.forward(tape, tape.complex_leaf(zin))
        return node_count(tape)

    assert count_once() == count_once()


def test_generator_like_stack_node_ratio():
    from cvnnlab.bench import GeneratorStack

    counts = {}
    for bk in (Backend.NAIVE, Backend.BLOCK):
        stack = GeneratorStack(bk, seed=0)
        tape = Tape()
        stack.forward(tape, stack.make_input())
        counts[bk] = node_count(tape)
    assert counts[Backend.BLOCK] <= 0.5 * counts[Backend.NAIVE]


def test_sgd_step_examples():
    p = Parameter("z", CTensor(np.array([1.0]), np.array([1.0])))
    from cvnnlab.autograd import GradPair

    p.grad = GradPair(np.array([2.0]), np.array([2.0]))
    sgd_step([p], lr=0.5)
    assert p.value.re[0] == 0.0 and p.value.im[0] == 0.0


def test_sgd_missing_gradient():
    p = Parameter("z", CTensor(np.array([1.0]), np.array([1.0])))
    with pytest.raises(ValueError):
        sgd_step([p], lr=0.1)


def _quadratic_loss(p, w, t):
    tape = Tape()
    z = tape.register(p)
    from cvnnlab.autograd import add, linear_mm, reshape, sub

    zr = reshape(z.re, (1, z.re.value.shape[0]))
    zi = reshape(z.im, (1, z.im.value.shape[0]))
    yr = sub(linear_mm(zr, tape.leaf(w.re)), linear_mm(zi, tape.leaf(w.im)))
    yi = add(linear_mm(zr, tape.leaf(w.im)), linear_mm(zi, tape.leaf(w.re)))
    res = CVar(sub(yr, tape.leaf(t.re[None, :])), sub(yi, tape.leaf(t.im[None, :])))
    from cvnnlab.autograd import sum_

    return tape, sum_(cmag_sq(res))


def test_one_step_decreases_quadratic():
    rng = np.random.default_rng(9)
    w = CTensor(np.eye(2) + 0.1 * rng.normal(size=(2, 2)), 0.1 * rng.normal(size=(2, 2)))
    t = CTensor(rng.normal(size=2), rng.normal(size=2))
    p = Parameter("z", CTensor.zeros(2))
    tape, loss = _quadratic_loss(p, w, t)
    before = float(loss.value)
    backward(tape, loss)
    sgd_step([p], lr=0.25)
    _, loss2 = _quadratic_loss(p, w, t)
    assert float(loss2.value) < before


def test_descent_converges_on_well_conditioned_system():
    rng = np.random.default_rng(10)
    w = CTensor(np.eye(2) + 0.1 * rng.normal(size=(2, 2)), 0.1 * rng.normal(size=(2, 2)))
    t = CTensor(rng.normal(size=2), rng.normal(size=2))
    p = Parameter("z", CTensor.zeros(2))
    prev = np.inf
    for _ in range(100):
        tape, loss = _quadratic_loss(p, w, t)
        val = float(loss.value)
        assert val <= prev + 1e-15
        prev = val
        backward(tape, loss)
        sgd_step([p], lr=0.2)
    _, loss = _quadratic_loss(p, w, t)
    assert float(loss.value) < 1e-6


def test_adam_reduces_loss():
    rng = np.random.default_rng(2)
    w = CTensor(np.eye(2), np.zeros((2, 2)))
    t = CTensor(rng.normal(size=2), rng.normal(size=2))
    p = Parameter("z", CTensor.zeros(2))
    opt = Adam([p], lr=0.05)
    tape, loss = _quadratic_loss(p, w, t)
    first = float(loss.value)
    for _ in range(200):
        tape, loss = _quadratic_loss(p, w, t)
        backward(tape, loss)
        opt.step()
    assert float(loss.value) < 1e-3 * first


def test_broadcast_ops_finite_difference():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 1))

    def build():
        tape = Tape()
        va = tape.leaf(a)
        vb = tape.leaf(b)
        from cvnnlab.autograd import div, mean as tmean, mul, sqrt, square, sub, tanh

        out = tmean(tanh(div(mul(va, vb), sqrt(square(sub(va, 3.0))))))
        return tape, va, vb, out

    tape, va, vb, out = build()
    grads = backward(tape, out)
    analytic = [grads[va.vid], grads[vb.vid]]

    def f():
        _, _, _, l = build()
        return float(l.value)

    numeric = finite_difference(f, [a, b], h=1e-6)
    assert max_relative_error(analytic, numeric, floor=1e-3) < 1e-6
