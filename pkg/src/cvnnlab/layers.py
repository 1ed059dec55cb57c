"""Parameterized complex layers with three interchangeable execution backends.

Every complex linear/convolution can run as:

* ``NAIVE``  - four independent real products, recorded as separate tape
  nodes (this is the baseline decomposition that tracks real and imaginary
  parts explicitly);
* ``GAUSS``  - the three-real-multiplication identity
  ``k1 = Wr(x + y), k2 = (Wr + Wi) y, k3 = (Wi - Wr) x`` with
  ``Re = k1 - k2`` and ``Im = k1 + k3``;
* ``BLOCK``  - one fused node applying the real block matrix
  ``[[Wr, -Wi], [Wi, Wr]]`` to the stacked ``[x; y]`` planes, with a
  hand-written backward that applies the transposed block.

All three produce identical outputs up to float64 rounding; the backends
differ in how many tape nodes they record and how the work is batched.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Callable

import numpy as np

from . import _convops as cv
from .autograd import (
    CVar,
    GradPair,
    Parameter,
    RealParameter,
    Tape,
    Var,
    add,
    cadd,
    cmul_t,
    div,
    gelu,
    leaky_relu,
    linear_mm,
    magnitude,
    mean,
    mul,
    relu,
    sqrt,
    ste_identity,
    sub,
)
from .ctensor import CTensor, DomainError, ShapeError, polar_compose, polar_decompose

TWO_PI = 2.0 * math.pi


class Backend(Enum):
    NAIVE = "naive"
    GAUSS = "gauss"
    BLOCK = "block"

    @classmethod
    def parse(cls, name: str) -> "Backend":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown backend {name!r}") from None


def glorot_complex(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> CTensor:
    """Independent zero-mean uniform Glorot planes, each scaled by 1/sqrt(2)
    so the complex weight variance matches the real-valued Glorot variance."""
    limit = math.sqrt(6.0 / (fan_in + fan_out)) / math.sqrt(2.0)
    return CTensor(rng.uniform(-limit, limit, shape), rng.uniform(-limit, limit, shape))


def _gauss_combine(k1: Var, k2: Var, k3: Var) -> tuple[Var, Var]:
    # factored out so the verification CLI can be fault-injected against it
    return sub(k1, k2), add(k1, k3)


class ComplexLinear:
    """Dense complex layer ``z -> W z + b`` over [batch, features] inputs."""

    _count = 0

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 backend: Backend = Backend.BLOCK,
                 rng: np.random.Generator | None = None, name: str | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        if name is None:
            name = f"clinear{ComplexLinear._count}"
            ComplexLinear._count += 1
        self.in_features = in_features
        self.out_features = out_features
        self.backend = backend
        self.name = name
        self.w = Parameter(
            f"{name}.w",
            glorot_complex(rng, (out_features, in_features), in_features, out_features),
        )
        self.b = Parameter(f"{name}.b", CTensor.zeros(out_features)) if bias else None

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])

    def forward(self, tape: Tape, z: CVar) -> CVar:
        if z.shape[-1] != self.in_features:
            raise ShapeError(
                f"{self.name}: input width {z.shape[-1]} != {self.in_features}"
            )
        w = tape.register(self.w)
        b = tape.register(self.b) if self.b is not None else None
        if self.backend is Backend.BLOCK:
            return self._forward_block(tape, z, w, b)
        if self.backend is Backend.GAUSS:
            out = self._forward_gauss(z, w)
        else:
            out = self._forward_naive(z, w)
        if b is not None:
            out = cadd(out, b)
        return out

    def _forward_naive(self, z: CVar, w: CVar) -> CVar:
        rr = linear_mm(z.re, w.re)
        ii = linear_mm(z.im, w.im)
        ri = linear_mm(z.re, w.im)
        ir = linear_mm(z.im, w.re)
        return CVar(sub(rr, ii), add(ri, ir))

    def _forward_gauss(self, z: CVar, w: CVar) -> CVar:
        k1 = linear_mm(add(z.re, z.im), w.re)
        k2 = linear_mm(z.im, add(w.re, w.im))
        k3 = linear_mm(z.re, sub(w.im, w.re))
        re, im = _gauss_combine(k1, k2, k3)
        return CVar(re, im)

    def _forward_block(self, tape: Tape, z: CVar, w: CVar, b: CVar | None) -> CVar:
        m, n = self.out_features, self.in_features
        wr, wi = w.re.value, w.im.value
        a = np.block([[wr, -wi], [wi, wr]])
        u = np.concatenate([z.re.value, z.im.value], axis=1)
        out = u @ a.T
        if b is not None:
            out = out + np.concatenate([b.re.value, b.im.value])
        yr, yi = out[:, :m], out[:, m:]

        def bwd(ctx, gs):
            uv, av, has_bias = ctx
            g = np.concatenate(gs, axis=1)
            gu = g @ av
            ga = g.T @ uv
            gwr = ga[:m, :n] + ga[m:, n:]
            gwi = ga[m:, :n] - ga[:m, n:]
            grads = [gu[:, :n], gu[:, n:], gwr, gwi]
            if has_bias:
                gb = g.sum(axis=0)
                grads += [gb[:m], gb[m:]]
            return grads

        inputs = [z.re, z.im, w.re, w.im]
        if b is not None:
            inputs += [b.re, b.im]
        outs = tape.record("clinear_block", inputs, (yr, yi), bwd,
                           (u, a, b is not None))
        return CVar(*outs)

    def manual_backward(self, z: CTensor, incoming: GradPair):
        """Reference gradients from the transposed block matrix, written out
        explicitly: ``g_x = Wr^T g_r + Wi^T g_i``, ``g_y = -Wi^T g_r + Wr^T g_i``.

        Returns (input GradPair, weight GradPair, bias GradPair or None).
        ``z`` is the forward input, [batch, in]; ``incoming`` is [batch, out].
        """
        wr, wi = self.w.value.re, self.w.value.im
        gr, gi = incoming.g_r, incoming.g_i
        gx = gr @ wr + gi @ wi
        gy = -gr @ wi + gi @ wr
        gwr = gr.T @ z.re + gi.T @ z.im
        gwi = gi.T @ z.re - gr.T @ z.im
        gb = GradPair(gr.sum(axis=0), gi.sum(axis=0)) if self.b is not None else None
        return GradPair(gx, gy), GradPair(gwr, gwi), gb


class _ComplexConvNd:
    """Shared machinery for complex 1-D and 2-D cross-correlation."""

    _count = 0
    ndim = 1

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 dilation=1, groups=1, bias=True, backend=Backend.BLOCK,
                 rng=None, name=None):
        rng = rng if rng is not None else np.random.default_rng()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(
                f"groups={groups} must divide channels {in_channels}->{out_channels}"
            )
        if name is None:
            name = f"cconv{self.ndim}d_{_ComplexConvNd._count}"
            _ComplexConvNd._count += 1
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.groups = groups
        self.backend = backend
        self.name = name
        ktaps = kernel_size ** self.ndim
        kshape = (out_channels, in_channels // groups) + (kernel_size,) * self.ndim
        fan_in = (in_channels // groups) * ktaps
        fan_out = (out_channels // groups) * ktaps
        self.w = Parameter(f"{name}.w", glorot_complex(rng, kshape, fan_in, fan_out))
        self.b = Parameter(f"{name}.b", CTensor.zeros(out_channels)) if bias else None

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])

    def _fwd(self, x, w):
        if self.ndim == 1:
            return cv.conv1d_forward(x, w, self.stride, self.padding,
                                     self.dilation, self.groups)
        return cv.conv2d_forward(x, w, self.stride, self.padding,
                                 self.dilation, self.groups)

    def _bwd(self, g, x, w, col):
        if self.ndim == 1:
            return cv.conv1d_backward(g, x, w, col, self.stride, self.padding,
                                      self.dilation, self.groups)
        return cv.conv2d_backward(g, x, w, col, self.stride, self.padding,
                                  self.dilation, self.groups)

    def _conv_op(self, tape: Tape, x: Var, w: Var) -> Var:
        """One real convolution as a single tape node."""
        y, col = self._fwd(x.value, w.value)

        def bwd(ctx, gs):
            xv, wv, colv = ctx
            gx, gw = self._bwd(gs[0], xv, wv, colv)
            return gx, gw

        return tape.record(f"conv{self.ndim}d", (x, w), (y,), bwd,
                           (x.value, w.value, col))[0]

    def _add_channel_bias(self, tape: Tape, out: CVar, b: CVar) -> CVar:
        shape = (1, self.out_channels) + (1,) * self.ndim
        from .autograd import reshape as _reshape

        br = _reshape(b.re, shape)
        bi = _reshape(b.im, shape)
        return CVar(add(out.re, br), add(out.im, bi))

    def forward(self, tape: Tape, z: CVar) -> CVar:
        if z.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: input has {z.shape[1]} channels, expected {self.in_channels}"
            )
        w = tape.register(self.w)
        b = tape.register(self.b) if self.b is not None else None
        if self.backend is Backend.BLOCK:
            return self._forward_block(tape, z, w, b)
        if self.backend is Backend.GAUSS:
            k1 = self._conv_op(tape, add(z.re, z.im), w.re)
            k2 = self._conv_op(tape, z.im, add(w.re, w.im))
            k3 = self._conv_op(tape, z.re, sub(w.im, w.re))
            re, im = _gauss_combine(k1, k2, k3)
            out = CVar(re, im)
        else:
            rr = self._conv_op(tape, z.re, w.re)
            ii = self._conv_op(tape, z.im, w.im)
            ri = self._conv_op(tape, z.re, w.im)
            ir = self._conv_op(tape, z.im, w.re)
            out = CVar(sub(rr, ii), add(ri, ir))
        if b is not None:
            out = self._add_channel_bias(tape, out, b)
        return out

    def _forward_block(self, tape: Tape, z: CVar, w: CVar, b: CVar | None) -> CVar:
        g = self.groups
        cout = self.out_channels
        cing = self.in_channels // g
        xs = cv.stack_planes(z.re.value, z.im.value, g)
        wb = cv.block_kernel(w.re.value, w.im.value, g)
        if self.ndim == 1:
            ys, col = cv.conv1d_forward(xs, wb, self.stride, self.padding,
                                        self.dilation, g)
        else:
            ys, col = cv.conv2d_forward(xs, wb, self.stride, self.padding,
                                        self.dilation, g)
        yr, yi = cv.unstack_planes(ys, g)
        if b is not None:
            bshape = (1, cout) + (1,) * self.ndim
            yr = yr + b.re.value.reshape(bshape)
            yi = yi + b.im.value.reshape(bshape)

        def bwd(ctx, gs):
            xsv, wbv, colv, has_bias = ctx
            gys = cv.stack_planes(gs[0], gs[1], g)
            if self.ndim == 1:
                gxs, gwb = cv.conv1d_backward(gys, xsv, wbv, colv, self.stride,
                                              self.padding, self.dilation, g)
            else:
                gxs, gwb = cv.conv2d_backward(gys, xsv, wbv, colv, self.stride,
                                              self.padding, self.dilation, g)
            gx, gy = cv.unstack_planes(gxs, g)
            ga, gb_k = cv.unblock_kernel_grad(gwb, cout, cing, g)
            grads = [gx, gy, ga, gb_k]
            if has_bias:
                axes = (0,) + tuple(range(2, 2 + self.ndim))
                grads += [gs[0].sum(axis=axes), gs[1].sum(axis=axes)]
            return grads

        inputs = [z.re, z.im, w.re, w.im]
        if b is not None:
            inputs += [b.re, b.im]
        outs = tape.record(f"cconv{self.ndim}d_block", inputs, (yr, yi), bwd,
                           (xs, wb, col, b is not None))
        return CVar(*outs)


class ComplexConv1d(_ComplexConvNd):
    ndim = 1


class ComplexConv2d(_ComplexConvNd):
    ndim = 2


# ---------------------------------------------------------------------------
# activations


def split_activation(z: CVar, f: Callable[[Var], Var]) -> CVar:
    """Apply a real nonlinearity independently to both planes."""
    return CVar(f(z.re), f(z.im))


def split_gelu(z: CVar) -> CVar:
    return split_activation(z, gelu)


def split_leaky_relu(z: CVar, slope: float = 0.2) -> CVar:
    return split_activation(z, lambda v: leaky_relu(v, slope))


def split_relu(z: CVar) -> CVar:
    return split_activation(z, relu)


def mag_activation(z: CVar, f_mag: Callable[[Var], Var]) -> CVar:
    """Transform the magnitude with ``f_mag`` and keep the phase untouched.

    ``f_mag`` must map nonnegative reals to nonnegative reals; entries with
    zero magnitude stay zero.
    """
    r = magnitude(z.re, z.im)
    fr = f_mag(r)
    if np.any(fr.value < 0.0):
        raise DomainError("magnitude activation produced a negative magnitude")
    safe = np.maximum(r.value, 1e-300)
    ratio = div(fr, z.tape.leaf(safe))
    return CVar(mul(ratio, z.re), mul(ratio, z.im))


# ---------------------------------------------------------------------------
# normalization


class ComplexLayerNorm:
    """Per-sample whitening of the (real, imag) pair over the feature axis.

    The 2x2 covariance of the planes is inverted through its closed-form
    symmetric square root, then a learnable complex affine is applied:
    ``z' = gamma * z_norm + beta``.
    """

    _count = 0

    def __init__(self, features: int, eps: float = 1e-5, name: str | None = None):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if name is None:
            name = f"cnorm{ComplexLayerNorm._count}"
            ComplexLayerNorm._count += 1
        self.features = features
        self.eps = eps
        self.name = name
        self.gamma = Parameter(f"{name}.gamma",
                               CTensor(np.ones(features), np.zeros(features)))
        self.beta = Parameter(f"{name}.beta", CTensor.zeros(features))

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, tape: Tape, z: CVar) -> CVar:
        if len(z.shape) != 2 or z.shape[1] < 2:
            raise ShapeError(
                f"{self.name}: expected [batch, features>=2], got {z.shape}"
            )
        mu_x = mean(z.re, axis=1, keepdims=True)
        mu_y = mean(z.im, axis=1, keepdims=True)
        xc = sub(z.re, mu_x)
        yc = sub(z.im, mu_y)
        sxx = add(mean(mul(xc, xc), axis=1, keepdims=True), self.eps)
        syy = add(mean(mul(yc, yc), axis=1, keepdims=True), self.eps)
        sxy = mean(mul(xc, yc), axis=1, keepdims=True)
        if not (np.isfinite(sxx.value).all() and np.isfinite(syy.value).all()
                and np.isfinite(sxy.value).all()):
            raise DomainError(f"{self.name}: non-finite covariance")
        # inverse square root of [[sxx, sxy], [sxy, syy]] in closed form
        s = sqrt(sub(mul(sxx, syy), mul(sxy, sxy)))
        t = sqrt(add(add(sxx, syy), mul(s, 2.0)))
        den = mul(s, t)
        xn = div(sub(mul(add(syy, s), xc), mul(sxy, yc)), den)
        yn = div(sub(mul(add(sxx, s), yc), mul(sxy, xc)), den)
        gamma = tape.register(self.gamma)
        beta = tape.register(self.beta)
        return cadd(cmul_t(gamma, CVar(xn, yn)), beta)


# ---------------------------------------------------------------------------
# phase quantization


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize_phase(z: CTensor, levels: int) -> CTensor:
    """Snap each phase to the nearest of ``levels`` uniform angles, keeping
    the magnitude. ``levels == 0`` is the identity. Rounding ties go half
    away from zero; the output phase is re-wrapped into (-pi, pi]."""
    if levels < 0:
        raise ValueError("quantization level count must be >= 0")
    if levels == 0:
        return z
    r, theta = polar_decompose(z)
    k = _round_half_away(levels * theta / TWO_PI)
    theta_q = (TWO_PI / levels) * k
    theta_q = np.where(theta_q <= -math.pi, theta_q + TWO_PI, theta_q)
    return polar_compose(r, theta_q)


class PhaseQuantizer:
    """Phase quantization layer with a straight-through gradient."""

    def __init__(self, levels: int):
        if levels < 0:
            raise ValueError("quantization level count must be >= 0")
        self.levels = levels

    def apply(self, z: CTensor) -> CTensor:
        return quantize_phase(z, self.levels)

    def forward(self, tape: Tape, z: CVar) -> CVar:
        if self.levels == 0:
            return z
        q = quantize_phase(CTensor(z.re.value, z.im.value), self.levels)
        return ste_identity(z, q)


def phase_quantize(pq: PhaseQuantizer, z: CTensor) -> CTensor:
    return pq.apply(z)


# ---------------------------------------------------------------------------
# real-valued counterparts (for the doubled-width twin networks)


class RealLinear:
    _count = 0

    def __init__(self, in_features, out_features, bias=True, rng=None, name=None):
        rng = rng if rng is not None else np.random.default_rng()
        if name is None:
            name = f"rlinear{RealLinear._count}"
            RealLinear._count += 1
        limit = math.sqrt(6.0 / (in_features + out_features))
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.w = RealParameter(
            f"{name}.w", rng.uniform(-limit, limit, (out_features, in_features))
        )
        self.b = RealParameter(f"{name}.b", np.zeros(out_features)) if bias else None

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])

    def forward(self, tape: Tape, x: Var) -> Var:
        w = tape.register(self.w)
        out = linear_mm(x, w)
        if self.b is not None:
            out = add(out, tape.register(self.b))
        return out
