import math

import numpy as np
import pytest
from scipy.special import erf

from cvnnlab.autograd import CVar, GradPair, Tape, backward, cmag_sq, mean, tanh
from cvnnlab.ctensor import CTensor, DomainError, ShapeError, matmul_oracle
from cvnnlab.layers import (
    Backend,
    ComplexConv1d,
    ComplexConv2d,
    ComplexLayerNorm,
    ComplexLinear,
    PhaseQuantizer,
    mag_activation,
    quantize_phase,
    split_gelu,
    split_leaky_relu,
)

BACKENDS = list(Backend)


def _forward(layer, zin):
    tape = Tape()
    out = layer.forward(tape, tape.complex_leaf(zin))
    return CTensor(out.re.value, out.im.value)


def _identity_linear(backend):
    layer = ComplexLinear(3, 3, bias=False, backend=backend,
                          rng=np.random.default_rng(0))
    layer.w.value = CTensor(np.eye(3), np.zeros((3, 3)))
    return layer


@pytest.mark.parametrize("backend", BACKENDS)
def test_clinear_identity(backend):
    rng = np.random.default_rng(1)
    zin = CTensor(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    out = _forward(_identity_linear(backend), zin)
    assert np.allclose(out.re, zin.re, atol=1e-14)
    assert np.allclose(out.im, zin.im, atol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
def test_clinear_rotation_by_i(backend):
    layer = ComplexLinear(1, 1, bias=False, backend=backend,
                          rng=np.random.default_rng(0))
    layer.w.value = CTensor(np.zeros((1, 1)), np.ones((1, 1)))
    out = _forward(layer, CTensor(np.array([[1.0]]), np.array([[0.0]])))
    assert out.re[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert out.im[0, 0] == pytest.approx(1.0)


def test_clinear_random_draws_match_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n_in = int(rng.integers(1, 5))
        n_out = int(rng.integers(1, 5))
        zin = CTensor(rng.normal(size=(1, n_in)), rng.normal(size=(1, n_in)))
        seed = int(rng.integers(0, 2**31))
        expected = None
        for backend in BACKENDS:
            layer = ComplexLinear(n_in, n_out, bias=False, backend=backend,
                                  rng=np.random.default_rng(seed))
            out = _forward(layer, zin)
            oracle = matmul_oracle(layer.w.value, CTensor(zin.re[0], zin.im[0]))
            assert np.max(np.abs(out.re[0] - oracle.re)) <= 1e-10
            assert np.max(np.abs(out.im[0] - oracle.im)) <= 1e-10
            if expected is None:
                expected = out
            else:
                assert np.max(np.abs(out.re - expected.re)) <= 1e-10
                assert np.max(np.abs(out.im - expected.im)) <= 1e-10


def test_clinear_width_mismatch():
    layer = ComplexLinear(3, 2, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        _forward(layer, CTensor(np.zeros((2, 4)), np.zeros((2, 4))))


def test_manual_backward_identity():
    layer = _identity_linear(Backend.NAIVE)
    z = CTensor(np.zeros((2, 3)), np.zeros((2, 3)))
    g = GradPair(np.arange(6.0).reshape(2, 3), -np.arange(6.0).reshape(2, 3))
    gin, gw, gb = layer.manual_backward(z, g)
    assert np.array_equal(gin.g_r, g.g_r)
    assert np.array_equal(gin.g_i, g.g_i)


def test_manual_backward_rotation_formulas():
    # W = [[i]]: g_x = Wr^T g_r + Wi^T g_i = 0, g_y = -Wi^T g_r + Wr^T g_i = -1
    layer = ComplexLinear(1, 1, bias=False, backend=Backend.NAIVE,
                          rng=np.random.default_rng(0))
    layer.w.value = CTensor(np.zeros((1, 1)), np.ones((1, 1)))
    z = CTensor(np.array([[0.4]]), np.array([[0.7]]))
    gin, gw, gb = layer.manual_backward(z, GradPair(np.array([[1.0]]), np.array([[0.0]])))
    assert gin.g_r[0, 0] == 0.0
    assert gin.g_i[0, 0] == -1.0
    assert gb is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_manual_backward_agrees_with_tape(backend):
    rng = np.random.default_rng(7)
    layer = ComplexLinear(3, 3, backend=backend, rng=rng)
    zin = CTensor(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    proj = CTensor(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    tape = Tape()
    z = tape.complex_leaf(zin)
    out = layer.forward(tape, z)
    from cvnnlab.autograd import add, mul, sum_

    loss = add(sum_(mul(out.re, tape.leaf(proj.re))),
               sum_(mul(out.im, tape.leaf(proj.im))))
    grads = backward(tape, loss)
    gin, gw, gb = layer.manual_backward(zin, GradPair(proj.re, proj.im))
    assert np.allclose(grads[z.re.vid], gin.g_r, atol=1e-12)
    assert np.allclose(grads[z.im.vid], gin.g_i, atol=1e-12)
    assert np.allclose(layer.w.grad.g_r, gw.g_r, atol=1e-12)
    assert np.allclose(layer.w.grad.g_i, gw.g_i, atol=1e-12)
    assert np.allclose(layer.b.grad.g_r, gb.g_r, atol=1e-12)


def _conv_oracle(z: CTensor, w: CTensor, stride, pad, dil, groups) -> np.ndarray:
    """Nested-loop complex cross-correlation."""
    zc, wc = z.to_complex(), w.to_complex()
    b_n, cin, length = zc.shape
    cout, cing, k = wc.shape
    lout = (length + 2 * pad - dil * (k - 1) - 1) // stride + 1
    zp = np.pad(zc, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros((b_n, cout, lout), dtype=complex)
    og = cout // groups
    for b in range(b_n):
        for o in range(cout):
            gidx = o // og
            for j in range(lout):
                acc = 0j
                for c in range(cing):
                    for t in range(k):
                        acc += wc[o, c, t] * zp[b, gidx * cing + c, j * stride + t * dil]
                out[b, o, j] = acc
    return out


@pytest.mark.parametrize("backend", BACKENDS)
def test_cconv1d_identity_kernel(backend):
    rng = np.random.default_rng(3)
    conv = ComplexConv1d(1, 1, 1, bias=False, backend=backend, rng=rng)
    conv.w.value = CTensor(np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
    zin = CTensor(rng.normal(size=(2, 1, 5)), rng.normal(size=(2, 1, 5)))
    out = _forward(conv, zin)
    assert np.allclose(out.re, zin.re, atol=1e-15)
    assert np.allclose(out.im, zin.im, atol=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cconv1d_rotation_kernel(backend):
    conv = ComplexConv1d(1, 1, 1, bias=False, backend=backend,
                         rng=np.random.default_rng(0))
    conv.w.value = CTensor(np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    zin = CTensor(np.array([[[1.0, 2.0]]]), np.array([[[3.0, -1.0]]]))
    out = _forward(conv, zin)
    assert np.allclose(out.re, -zin.im, atol=1e-15)
    assert np.allclose(out.im, zin.re, atol=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cconv1d_matches_nested_loop_oracle(backend):
    rng = np.random.default_rng(4)
    conv = ComplexConv1d(2, 3, 3, bias=False, backend=backend,
                         rng=np.random.default_rng(11))
    zin = CTensor(rng.normal(size=(2, 2, 8)), rng.normal(size=(2, 2, 8)))
    out = _forward(conv, zin)
    ref = _conv_oracle(zin, conv.w.value, 1, 0, 1, 1)
    assert np.max(np.abs(out.re - ref.real)) <= 1e-10
    assert np.max(np.abs(out.im - ref.imag)) <= 1e-10


@pytest.mark.parametrize("backend", BACKENDS)
def test_cconv1d_grouped_strided(backend):
    rng = np.random.default_rng(5)
    conv = ComplexConv1d(4, 2, 2, stride=2, padding=1, dilation=2, groups=2,
                         bias=False, backend=backend, rng=np.random.default_rng(6))
    zin = CTensor(rng.normal(size=(1, 4, 9)), rng.normal(size=(1, 4, 9)))
    out = _forward(conv, zin)
    ref = _conv_oracle(zin, conv.w.value, 2, 1, 2, 2)
    assert np.max(np.abs(out.re - ref.real)) <= 1e-10
    assert np.max(np.abs(out.im - ref.imag)) <= 1e-10


def test_cconv_zero_kernel_returns_zeros():
    conv = ComplexConv1d(2, 2, 3, bias=False, backend=Backend.BLOCK,
                         rng=np.random.default_rng(0))
    conv.w.value = CTensor.zeros((2, 2, 3))
    zin = CTensor(np.random.default_rng(1).normal(size=(1, 2, 6)),
                  np.random.default_rng(2).normal(size=(1, 2, 6)))
    out = _forward(conv, zin)
    assert np.all(out.re == 0.0) and np.all(out.im == 0.0)


def test_cconv_output_length_formula():
    conv = ComplexConv1d(1, 1, 3, stride=2, padding=1, dilation=2,
                         rng=np.random.default_rng(0))
    zin = CTensor(np.zeros((1, 1, 10)), np.zeros((1, 1, 10)))
    out = _forward(conv, zin)
    expected = (10 + 2 * 1 - 2 * (3 - 1) - 1) // 2 + 1
    assert out.shape[2] == expected


def test_cconv_invalid_geometry():
    conv = ComplexConv1d(1, 1, 5, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        _forward(conv, CTensor(np.zeros((1, 1, 3)), np.zeros((1, 1, 3))))


@pytest.mark.parametrize("backend", BACKENDS)
def test_cconv2d_matches_oracle_via_1d_separation(backend):
    # a 1xK 2-D kernel on a 1-row image must reproduce the 1-D result
    rng = np.random.default_rng(8)
    k = 3
    conv2 = ComplexConv2d(1, 2, k, bias=False, backend=backend,
                          rng=np.random.default_rng(9))
    row = CTensor(rng.normal(size=(1, 1, k, 10)), rng.normal(size=(1, 1, k, 10)))
    out = _forward(conv2, row)
    # direct dense evaluation
    zc = row.to_complex()[0, 0]
    wc = conv2.w.value.to_complex()
    expected = np.zeros((2, 1, 10 - k + 1), dtype=complex)
    for o in range(2):
        for j in range(10 - k + 1):
            expected[o, 0, j] = np.sum(wc[o, 0] * zc[:, j : j + k])
    assert np.max(np.abs(out.re[0] - expected.real)) <= 1e-10
    assert np.max(np.abs(out.im[0] - expected.imag)) <= 1e-10


def test_split_leaky_relu_example():
    tape = Tape()
    z = tape.complex_leaf(CTensor(np.array([1.0]), np.array([-1.0])))
    out = split_leaky_relu(z, 0.2)
    assert out.re.value[0] == 1.0
    assert out.im.value[0] == pytest.approx(-0.2)


def test_split_gelu_examples():
    tape = Tape()
    z = tape.complex_leaf(CTensor(np.array([0.0, 3.0]), np.array([0.0, 3.0])))
    out = split_gelu(z)
    assert out.re.value[0] == 0.0 and out.im.value[0] == 0.0
    gelu3 = 0.5 * 3.0 * (1.0 + erf(3.0 / math.sqrt(2.0)))
    assert out.re.value[1] == pytest.approx(gelu3, rel=1e-12)
    assert out.im.value[1] == pytest.approx(gelu3, rel=1e-12)


def test_mag_activation_identity_and_relu():
    rng = np.random.default_rng(12)
    zin = CTensor(rng.normal(size=8), rng.normal(size=8))
    tape = Tape()
    z = tape.complex_leaf(zin)
    out = mag_activation(z, lambda r: r)
    assert np.array_equal(out.re.value, zin.re)
    assert np.array_equal(out.im.value, zin.im)
    from cvnnlab.autograd import relu

    out = mag_activation(z, relu)
    assert np.array_equal(out.re.value, zin.re)


def test_mag_activation_tanh_example():
    tape = Tape()
    z = tape.complex_leaf(CTensor(np.array([3.0]), np.array([4.0])))
    out = mag_activation(z, tanh)
    t5 = math.tanh(5.0)
    assert out.re.value[0] == pytest.approx(t5 * 0.6, rel=1e-12)
    assert out.im.value[0] == pytest.approx(t5 * 0.8, rel=1e-12)


def test_mag_activation_preserves_phase():
    rng = np.random.default_rng(13)
    zin = CTensor(rng.normal(size=32), rng.normal(size=32))
    tape = Tape()
    out = mag_activation(tape.complex_leaf(zin), tanh)
    got = CTensor(out.re.value, out.im.value)
    assert np.max(np.abs(got.phase() - zin.phase())) < 1e-12


def test_mag_activation_rejects_negative():
    tape = Tape()
    z = tape.complex_leaf(CTensor(np.array([1.0]), np.array([1.0])))
    from cvnnlab.autograd import sub

    with pytest.raises(DomainError):
        mag_activation(z, lambda r: sub(r, 100.0))


def test_layernorm_constant_input_returns_beta():
    norm = ComplexLayerNorm(6)
    rng = np.random.default_rng(14)
    norm.beta.value = CTensor(rng.normal(size=6), rng.normal(size=6))
    zin = CTensor(np.full((3, 6), 2.5), np.full((3, 6), -1.0))
    tape = Tape()
    out = norm.forward(tape, tape.complex_leaf(zin))
    assert np.allclose(out.re.value, norm.beta.value.re[None, :], atol=1e-9)
    assert np.allclose(out.im.value, norm.beta.value.im[None, :], atol=1e-9)


def test_layernorm_standardizes_real_input():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(1, 4096))
    zin = CTensor(x, np.zeros_like(x))
    norm = ComplexLayerNorm(4096, eps=1e-8)
    tape = Tape()
    out = norm.forward(tape, tape.complex_leaf(zin))
    assert abs(out.re.value.mean()) < 1e-10
    assert out.re.value.var() == pytest.approx(1.0, abs=1e-3)
    assert np.max(np.abs(out.im.value)) < 1e-6


def test_layernorm_whitens_covariance():
    rng = np.random.default_rng(16)
    mix = rng.normal(size=(2, 2))
    raw = rng.normal(size=(2, 1024, 2)) @ mix.T + np.array([0.7, -0.3])
    zin = CTensor(raw[..., 0], raw[..., 1])
    norm = ComplexLayerNorm(1024, eps=1e-8)
    tape = Tape()
    out = norm.forward(tape, tape.complex_leaf(zin))
    for b in range(2):
        x, y = out.re.value[b], out.im.value[b]
        cov = np.cov(np.stack([x, y]), bias=True)
        assert np.max(np.abs(cov - np.eye(2))) < 1e-6


def test_layernorm_rejects_scalar_axis():
    norm = ComplexLayerNorm(1)
    with pytest.raises(ShapeError):
        tape = Tape()
        norm.forward(tape, tape.complex_leaf(CTensor(np.zeros((2, 1)), np.zeros((2, 1)))))


# ---------------------------------------------------------------------------
# phase quantization


def test_pq_hand_example():
    # N_q = 4, theta = 0.7: round(4*0.7/2pi) = round(0.4456) = 0 -> 1 + 0i
    z = CTensor(np.array([math.cos(0.7)]), np.array([math.sin(0.7)]))
    q = quantize_phase(z, 4)
    assert q.re[0] == pytest.approx(1.0, rel=1e-12)
    assert q.im[0] == pytest.approx(0.0, abs=1e-12)


def test_pq_lattice_fixed_point():
    levels = 8
    theta = 2 * math.pi * np.arange(-3, 4) / levels
    z = CTensor(2.0 * np.cos(theta), 2.0 * np.sin(theta))
    q = quantize_phase(z, levels)
    assert np.allclose(q.re, z.re, atol=1e-12)
    assert np.allclose(q.im, z.im, atol=1e-12)


def test_pq_zero_levels_is_identity():
    rng = np.random.default_rng(17)
    z = CTensor(rng.normal(size=16), rng.normal(size=16))
    q = quantize_phase(z, 0)
    assert np.array_equal(q.re, z.re) and np.array_equal(q.im, z.im)
    tape = Tape()
    pq = PhaseQuantizer(0)
    out = pq.forward(tape, tape.complex_leaf(z))
    assert tape.node_count() == 0


def test_pq_negative_levels_rejected():
    with pytest.raises(ValueError):
        PhaseQuantizer(-1)


@pytest.mark.parametrize("levels", [4, 128, 512])
def test_pq_sweep_properties(levels):
    theta = np.linspace(-math.pi, math.pi, 10_000)
    z = CTensor(np.cos(theta), np.sin(theta))
    q = quantize_phase(z, levels)
    # magnitude preserved
    assert np.max(np.abs(q.abs() - 1.0)) <= 1e-12
    # phase moves at most half a cell
    dq = np.angle(np.exp(1j * (q.phase() - theta)))
    assert np.max(np.abs(dq)) <= math.pi / levels + 1e-12
    # output phase stays in (-pi, pi]
    assert np.all(q.phase() > -math.pi) and np.all(q.phase() <= math.pi)
    # idempotent
    q2 = quantize_phase(q, levels)
    assert np.max(np.abs(q2.re - q.re)) <= 1e-12
    assert np.max(np.abs(q2.im - q.im)) <= 1e-12


def test_pq_tie_rounds_half_away_from_zero():
    levels = 4
    theta = math.pi / 4  # exactly between levels 0 and pi/2
    z = CTensor(np.array([math.cos(theta)]), np.array([math.sin(theta)]))
    q = quantize_phase(z, levels)
    assert q.phase()[0] == pytest.approx(math.pi / 2, rel=1e-12)


# ---------------------------------------------------------------------------
# backend equivalence across all parameterized layers (reduced sweep; the
# acceptance suite runs the full one)


def test_backend_equivalence_quick():
    from cvnnlab.verify import run_verify

    report = run_verify(seed=123, trials=3)
    assert report.passed(), report.failures
