"""Reverse-mode autodiff tape over real numpy arrays.

The tape is rebuilt on every forward pass (define-by-run) so that
``node_count`` always reflects the graph that actually executed; the count
of recorded operation nodes is a first-class deliverable of the backend
comparison, not a debugging aid.

Complex values ride on top of the real engine as plane pairs (:class:`CVar`).
Gradients for a complex quantity are stored as the real pair
``(dL/dx, dL/dy)``. For a real loss this equals twice the conjugate
Wirtinger derivative ``dL/dz̄ = ½(dL/dx + i dL/dy)``; the constant ½ is
absorbed into the learning rate, so the descent update is simply
``(x, y) -= lr * (g_r, g_i)``.

Multi-output nodes are supported so that a fused kernel (one forward, one
hand-written backward) records exactly one node, the same way a custom
autograd function does in mainstream frameworks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .ctensor import CTensor, ShapeError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Node:
    """One recorded operation: op tag, input/output variable ids, and the
    saved forward context its backward function needs."""

    __slots__ = ("op", "in_vids", "out_vids", "out_shapes", "ctx", "bwd")

    def __init__(self, op, in_vids, out_vids, out_shapes, ctx, bwd):
        self.op = op
        self.in_vids = in_vids
        self.out_vids = out_vids
        self.out_shapes = out_shapes
        self.ctx = ctx
        self.bwd = bwd


class Var:
    """Handle to a tape value. Leaves have no producing node."""

    __slots__ = ("tape", "vid", "value")

    def __init__(self, tape: "Tape", vid: int, value: Array):
        self.tape = tape
        self.vid = vid
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)


class CVar:
    """Complex tape value: a (real plane, imaginary plane) pair of Vars."""

    __slots__ = ("re", "im")

    def __init__(self, re: Var, im: Var):
        if re.value.shape != im.value.shape:
            raise ShapeError("complex planes differ in shape")
        self.re = re
        self.im = im

    @property
    def shape(self):
        return self.re.value.shape

    @property
    def tape(self):
        return self.re.tape

    def snapshot(self) -> CTensor:
        return CTensor(self.re.value.copy(), self.im.value.copy())


@dataclass
class GradPair:
    """Real gradient pair (dL/dx, dL/dy) for a complex quantity."""

    g_r: Array
    g_i: Array


@dataclass
class Parameter:
    """Trainable complex tensor with its most recent gradient pair."""

    name: str
    value: CTensor
    grad: GradPair | None = None

    def planes(self):
        return (self.value.re, self.value.im)

    def grad_planes(self):
        return (self.grad.g_r, self.grad.g_i)

    def assign(self, re: Array, im: Array):
        self.value = CTensor(re, im)

    def nbytes(self) -> int:
        return self.value.re.nbytes + self.value.im.nbytes


@dataclass
class RealParameter:
    """Trainable real tensor (used by the real-valued twin networks)."""

    name: str
    value: Array
    grad: Array | None = None

    def planes(self):
        return (self.value,)

    def grad_planes(self):
        return (self.grad,)

    def nbytes(self) -> int:
        return self.value.nbytes


class Tape:
    """Ordered list of operation nodes plus a registry of parameters that
    took part in the recorded forward pass.

    A tape is confined to a single thread; make a fresh one per step.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._next_vid = 0
        self._params: list[tuple[object, tuple[int, ...]]] = []
        self._param_vars: dict[int, object] = {}

    def _new_vid(self) -> int:
        vid = self._next_vid
        self._next_vid += 1
        return vid

    def leaf(self, value) -> Var:
        """New leaf variable. Leaves are not operation nodes."""
        value = np.asarray(value, dtype=np.float64)
        return Var(self, self._new_vid(), value)

    def constant(self, value) -> Var:
        return self.leaf(value)

    def complex_leaf(self, z: CTensor) -> CVar:
        return CVar(self.leaf(z.re), self.leaf(z.im))

    def register(self, param) -> Var | CVar:
        """Bind a parameter to this tape as leaf variable(s).

        Repeated registration of the same parameter returns the same
        leaves, so shared weights accumulate gradients correctly.
        """
        cached = self._param_vars.get(id(param))
        if cached is not None:
            return cached
        if isinstance(param, Parameter):
            out = CVar(self.leaf(param.value.re), self.leaf(param.value.im))
            vids = (out.re.vid, out.im.vid)
        else:
            out = self.leaf(param.value)
            vids = (out.vid,)
        self._params.append((param, vids))
        self._param_vars[id(param)] = out
        return out

    def record(
        self,
        op: str,
        inputs: Sequence[Var],
        out_values: Sequence[Array],
        bwd: Callable,
        ctx=None,
    ) -> tuple[Var, ...]:
        """Append one operation node.

        ``bwd(ctx, out_grads) -> in_grads`` receives one gradient array per
        output (zeros substituted for unused outputs) and must return one
        array (or None) per input.
        """
        outs = tuple(Var(self, self._new_vid(), np.asarray(v, dtype=np.float64))
                     for v in out_values)
        node = Node(
            op,
            tuple(v.vid for v in inputs),
            tuple(v.vid for v in outs),
            tuple(v.value.shape for v in outs),
            ctx,
            bwd,
        )
        self.nodes.append(node)
        return outs

    def node_count(self) -> int:
        """Number of operation nodes recorded by the last forward pass."""
        return len(self.nodes)

    def parameters(self):
        return [p for p, _ in self._params]


def node_count(tape: Tape) -> int:
    return tape.node_count()


def backward(tape: Tape, loss: Var | CVar) -> dict[int, Array]:
    """Reverse sweep from a real scalar loss.

    Fills ``param.grad`` for every parameter registered on the tape
    (zeros when a parameter did not influence the loss) and returns the
    full vid -> gradient map for callers that need input gradients.
    """
    if isinstance(loss, CVar):
        if np.max(np.abs(loss.im.value)) > 1e-12:
            raise ValueError("loss has a nonzero imaginary part")
        loss = loss.re
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")

    grads: dict[int, Array] = {loss.vid: np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        outs = [grads.get(v) for v in node.out_vids]
        if all(g is None for g in outs):
            continue
        outs = [
            g if g is not None else np.zeros(shape)
            for g, shape in zip(outs, node.out_shapes)
        ]
        ins = node.bwd(node.ctx, outs)
        for vid, g in zip(node.in_vids, ins):
            if g is None:
                continue
            have = grads.get(vid)
            grads[vid] = g if have is None else have + g

    for param, vids in tape._params:
        planes = [grads.get(v) for v in vids]
        planes = [
            g if g is not None else np.zeros_like(p)
            for g, p in zip(planes, param.planes())
        ]
        if isinstance(param, Parameter):
            param.grad = GradPair(planes[0], planes[1])
        else:
            param.grad = planes[0]
    return grads


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(g: Array, shape) -> Array:
    """Sum a gradient down to the shape its operand had before broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape.leaf(np.asarray(x, dtype=np.float64))


def _pair(a, b) -> tuple[Var, Var]:
    if isinstance(a, Var):
        return a, _lift(a.tape, b)
    return _lift(b.tape, a), b


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Var:
    a, b = _pair(a, b)

    def bwd(ctx, gs):
        (g,) = gs
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return a.tape.record("add", (a, b), (a.value + b.value,), bwd,
                         (a.value.shape, b.value.shape))[0]


def sub(a, b) -> Var:
    a, b = _pair(a, b)

    def bwd(ctx, gs):
        (g,) = gs
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return a.tape.record("sub", (a, b), (a.value - b.value,), bwd,
                         (a.value.shape, b.value.shape))[0]


def mul(a, b) -> Var:
    a, b = _pair(a, b)

    def bwd(ctx, gs):
        (g,) = gs
        av, bv = ctx
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return a.tape.record("mul", (a, b), (a.value * b.value,), bwd,
                         (a.value, b.value))[0]


def div(a, b) -> Var:
    a, b = _pair(a, b)

    def bwd(ctx, gs):
        (g,) = gs
        av, bv = ctx
        return (_unbroadcast(g / bv, av.shape),
                _unbroadcast(-g * av / (bv * bv), bv.shape))

    return a.tape.record("div", (a, b), (a.value / b.value,), bwd,
                         (a.value, b.value))[0]


def neg(a: Var) -> Var:
    def bwd(ctx, gs):
        return (-gs[0],)

    return a.tape.record("neg", (a,), (-a.value,), bwd)[0]


def square(a: Var) -> Var:
    def bwd(ctx, gs):
        return (2.0 * ctx * gs[0],)

    return a.tape.record("square", (a,), (a.value * a.value,), bwd, a.value)[0]


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)

    def bwd(ctx, gs):
        return (gs[0] / (2.0 * np.maximum(ctx, 1e-300)),)

    return a.tape.record("sqrt", (a,), (out,), bwd, out)[0]


def log(a: Var) -> Var:
    def bwd(ctx, gs):
        return (gs[0] / ctx,)

    return a.tape.record("log", (a,), (np.log(a.value),), bwd, a.value)[0]


def absolute(a: Var) -> Var:
    """|a| with sign subgradient (0 at 0)."""

    def bwd(ctx, gs):
        return (gs[0] * np.sign(ctx),)

    return a.tape.record("abs", (a,), (np.abs(a.value),), bwd, a.value)[0]


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)

    def bwd(ctx, gs):
        return (gs[0] * (1.0 - ctx * ctx),)

    return a.tape.record("tanh", (a,), (out,), bwd, out)[0]


def relu(a: Var) -> Var:
    def bwd(ctx, gs):
        return (gs[0] * (ctx > 0.0),)

    return a.tape.record("relu", (a,), (np.maximum(a.value, 0.0),), bwd, a.value)[0]


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    def bwd(ctx, gs):
        v, s = ctx
        return (gs[0] * np.where(v > 0.0, 1.0, s),)

    out = np.where(a.value > 0.0, a.value, slope * a.value)
    return a.tape.record("leaky_relu", (a,), (out,), bwd, (a.value, slope))[0]


def gelu(a: Var) -> Var:
    """Exact (erf-based) GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bwd(ctx, gs):
        xv, cdfv = ctx
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xv * xv)
        return (gs[0] * (cdfv + xv * pdf),)

    return a.tape.record("gelu", (a,), (x * cdf,), bwd, (x, cdf))[0]


def softplus(a: Var) -> Var:
    """log(1 + exp(x)), computed stably."""
    x = a.value
    out = np.logaddexp(0.0, x)

    def bwd(ctx, gs):
        # derivative is the logistic sigmoid
        sig = np.where(ctx >= 0, 1.0 / (1.0 + np.exp(-ctx)),
                       np.exp(ctx) / (1.0 + np.exp(np.minimum(ctx, 0.0))))
        return (gs[0] * sig,)

    return a.tape.record("softplus", (a,), (out,), bwd, x)[0]


def magnitude(re: Var, im: Var) -> Var:
    """hypot(re, im) as one node; gradient is radial, guarded at 0."""
    out = np.hypot(re.value, im.value)

    def bwd(ctx, gs):
        x, y, r = ctx
        safe = np.maximum(r, 1e-300)
        return gs[0] * x / safe, gs[0] * y / safe

    return re.tape.record("magnitude", (re, im), (out,), bwd,
                          (re.value, im.value, out))[0]


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    def bwd(ctx, gs):
        shape, ax, keep = ctx
        g = gs[0]
        if ax is not None and not keep:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    out = a.value.sum(axis=axis, keepdims=keepdims)
    return a.tape.record("sum", (a,), (out,), bwd, (a.value.shape, axis, keepdims))[0]


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    def bwd(ctx, gs):
        shape, ax, keep, n = ctx
        g = gs[0]
        if ax is not None and not keep:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy() / n,)

    out = a.value.mean(axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]
    return a.tape.record("mean", (a,), (out,), bwd,
                         (a.value.shape, axis, keepdims, n))[0]


def reshape(a: Var, shape) -> Var:
    def bwd(ctx, gs):
        return (gs[0].reshape(ctx),)

    return a.tape.record("reshape", (a,), (a.value.reshape(shape),), bwd,
                         a.value.shape)[0]


def transpose(a: Var, axes) -> Var:
    inv = np.argsort(axes)

    def bwd(ctx, gs):
        return (gs[0].transpose(ctx),)

    return a.tape.record("transpose", (a,), (a.value.transpose(axes),), bwd, inv)[0]


def linear_mm(x: Var, w: Var) -> Var:
    """x @ w.T as a single node (the shape convention of a dense layer)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise ShapeError(
            f"linear_mm expects [b,n] @ [m,n].T, got {x.value.shape} and {w.value.shape}"
        )

    def bwd(ctx, gs):
        xv, wv = ctx
        (g,) = gs
        return g @ wv, g.T @ xv

    return x.tape.record("linear_mm", (x, w), (x.value @ w.value.T,), bwd,
                         (x.value, w.value))[0]


# ---------------------------------------------------------------------------
# complex helpers over CVar


def cadd(a: CVar, b: CVar) -> CVar:
    return CVar(add(a.re, b.re), add(a.im, b.im))


def csub(a: CVar, b: CVar) -> CVar:
    return CVar(sub(a.re, b.re), sub(a.im, b.im))


def cmul_t(a: CVar, b: CVar) -> CVar:
    """Elementwise complex product recorded as real primitive ops."""
    re = sub(mul(a.re, b.re), mul(a.im, b.im))
    im = add(mul(a.re, b.im), mul(a.im, b.re))
    return CVar(re, im)


def cmag_sq(z: CVar) -> Var:
    return add(mul(z.re, z.re), mul(z.im, z.im))


def ste_identity(z: CVar, forward_value: CTensor) -> CVar:
    """Straight-through node: forward emits ``forward_value``, backward
    passes the incoming gradient pair to ``z`` unchanged."""
    if forward_value.shape != z.shape:
        raise ShapeError(
            f"STE forward value shape {forward_value.shape} != input {z.shape}"
        )

    def bwd(ctx, gs):
        return gs[0], gs[1]

    re, im = z.tape.record(
        "ste", (z.re, z.im), (forward_value.re, forward_value.im), bwd
    )
    return CVar(re, im)


def detach(z: CVar) -> CVar:
    """Cut the graph: reintroduce the current value as fresh leaves."""
    return CVar(z.tape.leaf(z.re.value), z.tape.leaf(z.im.value))


# ---------------------------------------------------------------------------
# optimizers


def sgd_step(params: Sequence[Parameter | RealParameter], lr: float) -> None:
    """Plain descent: (x, y) <- (x - lr*g_r, y - lr*g_i).

    With the gradient-pair convention this is the conjugate-gradient update
    ``z <- z - lr * dL/dz̄`` with the Wirtinger ½ folded into ``lr``.
    """
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
        if isinstance(p, Parameter):
            p.assign(p.value.re - lr * p.grad.g_r, p.value.im - lr * p.grad.g_i)
        else:
            p.value = p.value - lr * p.grad


class Adam:
    """Adam over the real planes of each parameter.

    Every complex parameter is treated as a real pair with a shared step
    counter; the default betas follow the training recipe used throughout
    this library, (0.8, 0.9).
    """

    def __init__(self, params, lr: float = 2e-4, betas=(0.8, 0.9), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m: dict[int, list[Array]] = {}
        self._v: dict[int, list[Array]] = {}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {p.name!r} has no gradient")
            planes = p.planes()
            gplanes = p.grad_planes()
            key = id(p)
            if key not in self._m:
                self._m[key] = [np.zeros_like(x) for x in planes]
                self._v[key] = [np.zeros_like(x) for x in planes]
            new = []
            for x, g, m, v in zip(planes, gplanes, self._m[key], self._v[key]):
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                new.append(x - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
            if isinstance(p, Parameter):
                p.assign(new[0], new[1])
            else:
                p.value = new[0]
