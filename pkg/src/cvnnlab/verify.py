"""Numerical consistency suites: backend equivalence on random layer
configurations, and finite-difference gradient checks.

These back the ``verify`` CLI command; the report rows carry the same
metric names for every layer type (forward output, input gradient, weight
gradient, bias gradient) plus the worst finite-difference relative error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import CVar, GradPair, Parameter, Tape, Var, backward, mean, mul, sum_
from .autograd import add as t_add
from .autograd import cmag_sq
from .ctensor import CTensor
from .layers import (
    Backend,
    ComplexConv1d,
    ComplexConv2d,
    ComplexLayerNorm,
    ComplexLinear,
    PhaseQuantizer,
    quantize_phase,
)

FORWARD_TOL = 1e-10
GRAD_TOL = 1e-8
GRADCHECK_TOL = 1e-5
FD_STEP = 1e-5

LAYER_TYPES = ("linear", "conv1d", "conv2d", "layernorm", "pq")
_BACKENDS = (Backend.NAIVE, Backend.GAUSS, Backend.BLOCK)


@dataclass
class VerifyRow:
    layer: str
    forward_output: float = 0.0
    input_gradient: float = 0.0
    weight_gradient: float = 0.0
    bias_gradient: float = 0.0
    gradcheck: float = 0.0

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "forward_output": self.forward_output,
            "input_gradient": self.input_gradient,
            "weight_gradient": self.weight_gradient,
            "bias_gradient": self.bias_gradient,
            "gradcheck": self.gradcheck,
        }


@dataclass
class VerifyReport:
    seed: int
    trials: int
    rows: list[VerifyRow] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "passed": self.passed(),
            "rows": [r.to_dict() for r in self.rows],
            "failures": list(self.failures),
        }


def finite_difference(f, arrays, h: float = FD_STEP):
    """Central-difference gradients of scalar ``f()`` w.r.t. each array,
    perturbing entries in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f()
            flat[i] = keep - h
            fm = f()
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _projection_loss(tape: Tape, out: CVar, proj: CTensor) -> Var:
    """Deterministic scalar that mixes both output planes.

    mean(|out|^2) + sum(proj_r * out_r + proj_i * out_i) exercises every
    entry with distinct weights so gradient errors cannot cancel.
    """
    quad = mean(cmag_sq(out))
    lin = t_add(sum_(mul(out.re, tape.leaf(proj.re))),
                sum_(mul(out.im, tape.leaf(proj.im))))
    return t_add(quad, lin)


def _clone_layer_with(layer_ctor, backend, src):
    layer = layer_ctor(backend)
    layer.w.value = CTensor(src.w.value.re.copy(), src.w.value.im.copy())
    if layer.b is not None:
        layer.b.value = CTensor(src.b.value.re.copy(), src.b.value.im.copy())
    return layer


def _run_once(layer, zin: CTensor, proj: CTensor):
    tape = Tape()
    z = tape.complex_leaf(zin)
    out = layer.forward(tape, z)
    loss = _projection_loss(tape, out, proj)
    return tape, z, out, loss


def _backend_sweep(ctor, zin, proj):
    """Forward/gradient agreement across all backend pairs for one config."""
    results = {}
    base = ctor(Backend.NAIVE)
    for bk in _BACKENDS:
        layer = _clone_layer_with(ctor, bk, base) if bk is not Backend.NAIVE else base
        tape, z, out, loss = _run_once(layer, zin, proj)
        grads = backward(tape, loss)
        results[bk] = {
            "out": (out.re.value, out.im.value),
            "gin": (grads.get(z.re.vid), grads.get(z.im.vid)),
            "gw": (layer.w.grad.g_r, layer.w.grad.g_i),
            "gb": (layer.b.grad.g_r, layer.b.grad.g_i) if layer.b is not None else None,
        }
    diffs = {"forward_output": 0.0, "input_gradient": 0.0,
             "weight_gradient": 0.0, "bias_gradient": 0.0}
    pair_msgs = []
    pairs = [(a, b) for i, a in enumerate(_BACKENDS) for b in _BACKENDS[i + 1:]]
    for a, b in pairs:
        checks = [
            ("forward_output", results[a]["out"], results[b]["out"], FORWARD_TOL),
            ("input_gradient", results[a]["gin"], results[b]["gin"], GRAD_TOL),
            ("weight_gradient", results[a]["gw"], results[b]["gw"], GRAD_TOL),
        ]
        if results[a]["gb"] is not None:
            checks.append(("bias_gradient", results[a]["gb"], results[b]["gb"], GRAD_TOL))
        for metric, va, vb, tol in checks:
            d = max(float(np.max(np.abs(x - y))) for x, y in zip(va, vb))
            diffs[metric] = max(diffs[metric], d)
            if d > tol:
                pair_msgs.append(
                    f"{metric} diff {d:.3e} between {a.value} and {b.value} (tol {tol:g})"
                )
    return diffs, pair_msgs


def _gradcheck(layer_fn, param_arrays, loss_fn) -> float:
    """FD check of ``loss_fn`` w.r.t. the given parameter arrays; the tape
    gradient comes from a single backward call of the same graph."""
    tape, analytic = layer_fn()
    numeric = finite_difference(loss_fn, param_arrays)
    return max_relative_error(analytic, numeric, floor=1e-3)


def _random_linear_cfg(rng):
    n_in = int(rng.integers(1, 6))
    n_out = int(rng.integers(1, 6))
    batch = int(rng.integers(1, 5))
    return n_in, n_out, batch


def _verify_linear(rng, row, failures):
    n_in, n_out, batch = _random_linear_cfg(rng)
    zin = CTensor(rng.normal(size=(batch, n_in)), rng.normal(size=(batch, n_in)))
    proj = CTensor(rng.normal(size=(batch, n_out)), rng.normal(size=(batch, n_out)))
    # one deterministic weight draw shared by all backends
    base_rng_seed = int(rng.integers(0, 2**31))

    def ctor(bk):
        return ComplexLinear(n_in, n_out, backend=bk,
                             rng=np.random.default_rng(base_rng_seed))

    diffs, msgs = _backend_sweep(ctor, zin, proj)
    _accumulate(row, diffs)
    failures.extend(f"linear: {m}" for m in msgs)
    for bk in _BACKENDS:
        layer = ctor(bk)

        def run():
            tape, z, out, loss = _run_once(layer, zin, proj)
            backward(tape, loss)
            return tape, [layer.w.grad.g_r, layer.w.grad.g_i,
                          layer.b.grad.g_r, layer.b.grad.g_i]

        def loss_eval():
            _, _, _, loss = _run_once(layer, zin, proj)
            return float(loss.value)

        arrays = [layer.w.value.re, layer.w.value.im,
                  layer.b.value.re, layer.b.value.im]
        err = _gradcheck(run, arrays, loss_eval)
        row.gradcheck = max(row.gradcheck, err)
        if err > GRADCHECK_TOL:
            failures.append(f"linear: gradcheck {err:.3e} on {bk.value} (tol {GRADCHECK_TOL:g})")


def _random_conv_cfg(rng, ndim):
    for _ in range(50):
        groups = int(rng.choice([1, 1, 2]))
        cin = groups * int(rng.integers(1, 3))
        cout = groups * int(rng.integers(1, 3))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 3))
        dil = int(rng.integers(1, 3))
        span = 4 if ndim == 2 else 6
        length = int(rng.integers(k * dil, k * dil + span))
        if (length + 2 * pad - dil * (k - 1) - 1) // stride + 1 > 0:
            return cin, cout, k, stride, pad, dil, groups, length
    raise RuntimeError("could not draw a valid conv configuration")


def _verify_conv(rng, row, failures, ndim):
    cin, cout, k, stride, pad, dil, groups, length = _random_conv_cfg(rng, ndim)
    batch = int(rng.integers(1, 3))
    cls = ComplexConv1d if ndim == 1 else ComplexConv2d
    spatial = (length,) * ndim
    zin = CTensor(rng.normal(size=(batch, cin) + spatial),
                  rng.normal(size=(batch, cin) + spatial))
    base_rng_seed = int(rng.integers(0, 2**31))

    def ctor(bk):
        return cls(cin, cout, k, stride=stride, padding=pad, dilation=dil,
                   groups=groups, backend=bk, rng=np.random.default_rng(base_rng_seed))

    probe = ctor(Backend.NAIVE)
    t0 = Tape()
    out0 = probe.forward(t0, t0.complex_leaf(zin))
    proj = CTensor(rng.normal(size=out0.shape), rng.normal(size=out0.shape))

    diffs, msgs = _backend_sweep(ctor, zin, proj)
    _accumulate(row, diffs)
    name = f"conv{ndim}d"
    failures.extend(f"{name}: {m}" for m in msgs)
    for bk in _BACKENDS:
        layer = ctor(bk)

        def run():
            tape, z, out, loss = _run_once(layer, zin, proj)
            backward(tape, loss)
            return tape, [layer.w.grad.g_r, layer.w.grad.g_i,
                          layer.b.grad.g_r, layer.b.grad.g_i]

        def loss_eval():
            _, _, _, loss = _run_once(layer, zin, proj)
            return float(loss.value)

        arrays = [layer.w.value.re, layer.w.value.im,
                  layer.b.value.re, layer.b.value.im]
        err = _gradcheck(run, arrays, loss_eval)
        row.gradcheck = max(row.gradcheck, err)
        if err > GRADCHECK_TOL:
            failures.append(f"{name}: gradcheck {err:.3e} on {bk.value} (tol {GRADCHECK_TOL:g})")


def _verify_layernorm(rng, row, failures):
    features = int(rng.integers(2, 12))
    batch = int(rng.integers(1, 4))
    zin = CTensor(rng.normal(size=(batch, features)),
                  rng.normal(size=(batch, features)))
    proj = CTensor(rng.normal(size=(batch, features)),
                   rng.normal(size=(batch, features)))
    norm = ComplexLayerNorm(features)
    norm.gamma.value = CTensor(rng.normal(size=features), rng.normal(size=features))
    norm.beta.value = CTensor(rng.normal(size=features), rng.normal(size=features))

    def run():
        tape = Tape()
        z = tape.complex_leaf(zin)
        out = norm.forward(tape, z)
        loss = _projection_loss(tape, out, proj)
        backward(tape, loss)
        return tape, [norm.gamma.grad.g_r, norm.gamma.grad.g_i,
                      norm.beta.grad.g_r, norm.beta.grad.g_i,
                      zin.re, zin.im]

    def loss_eval():
        tape = Tape()
        z = tape.complex_leaf(zin)
        out = norm.forward(tape, z)
        return float(_projection_loss(tape, out, proj).value)

    tape = Tape()
    z = tape.complex_leaf(zin)
    out = norm.forward(tape, z)
    loss = _projection_loss(tape, out, proj)
    grads = backward(tape, loss)
    analytic = [norm.gamma.grad.g_r, norm.gamma.grad.g_i,
                norm.beta.grad.g_r, norm.beta.grad.g_i,
                grads[z.re.vid], grads[z.im.vid]]
    arrays = [norm.gamma.value.re, norm.gamma.value.im,
              norm.beta.value.re, norm.beta.value.im, zin.re, zin.im]
    numeric = finite_difference(loss_eval, arrays)
    err = max_relative_error(analytic, numeric, floor=1e-3)
    row.gradcheck = max(row.gradcheck, err)
    row.bias_gradient = 0.0
    if err > GRADCHECK_TOL:
        failures.append(f"layernorm: gradcheck {err:.3e} (tol {GRADCHECK_TOL:g})")


def _verify_pq(rng, row, failures):
    levels = int(rng.choice([1, 4, 128]))
    n = int(rng.integers(3, 12))
    # The straight-through estimate only coincides with the true derivative
    # for magnitude-type losses at lattice-aligned inputs (where the
    # quantizer is the identity), so that is what the FD check uses.
    ks = rng.integers(-levels // 2 + 1, levels // 2 + 1, size=n) if levels > 1 else np.zeros(n, dtype=int)
    theta = 2.0 * math.pi * ks / levels
    r = rng.uniform(0.5, 2.0, size=n)
    zin = CTensor(r * np.cos(theta), r * np.sin(theta))
    proj = CTensor(rng.normal(size=n), rng.normal(size=n))
    pq = PhaseQuantizer(levels)

    # structural STE check: incoming gradients pass through untouched
    tape = Tape()
    z = tape.complex_leaf(zin)
    out = pq.forward(tape, z)
    loss = _projection_loss(tape, out, proj)
    grads = backward(tape, loss)
    tape2 = Tape()
    z2 = tape2.complex_leaf(CTensor(out.re.value, out.im.value))
    loss2 = _projection_loss(tape2, CVar(z2.re, z2.im), proj)
    ref = backward(tape2, loss2)
    d = max(float(np.max(np.abs(grads[z.re.vid] - ref[z2.re.vid]))),
            float(np.max(np.abs(grads[z.im.vid] - ref[z2.im.vid]))))
    row.input_gradient = max(row.input_gradient, d)
    if d > GRAD_TOL:
        failures.append(f"pq: straight-through gradient deviates by {d:.3e}")

    q1 = quantize_phase(zin, levels)
    q2 = quantize_phase(q1, levels)
    idem = max(float(np.max(np.abs(q1.re - q2.re))), float(np.max(np.abs(q1.im - q2.im))))
    magd = float(np.max(np.abs(q1.abs() - zin.abs())))
    row.forward_output = max(row.forward_output, idem, magd)
    if idem > 1e-12 or magd > 1e-12:
        failures.append(f"pq: idempotence/magnitude drift {max(idem, magd):.3e}")

    def mag_loss():
        t = Tape()
        zv = t.complex_leaf(zin)
        o = pq.forward(t, zv)
        return t, zv, mean(cmag_sq(o))

    t3, z3, loss3 = mag_loss()
    g3 = backward(t3, loss3)
    analytic = [g3[z3.re.vid], g3[z3.im.vid]]

    def loss_eval():
        _, _, l = mag_loss()
        return float(l.value)

    numeric = finite_difference(loss_eval, [zin.re, zin.im])
    err = max_relative_error(analytic, numeric, floor=1e-3)
    row.gradcheck = max(row.gradcheck, err)
    if err > GRADCHECK_TOL:
        failures.append(f"pq: lattice gradcheck {err:.3e} (tol {GRADCHECK_TOL:g})")


def _accumulate(row: VerifyRow, diffs: dict):
    row.forward_output = max(row.forward_output, diffs["forward_output"])
    row.input_gradient = max(row.input_gradient, diffs["input_gradient"])
    row.weight_gradient = max(row.weight_gradient, diffs["weight_gradient"])
    row.bias_gradient = max(row.bias_gradient, diffs["bias_gradient"])


def run_verify(seed: int = 0, trials: int = 20) -> VerifyReport:
    """Backend-equivalence and finite-difference suites over ``trials``
    random configurations per layer type."""
    report = VerifyReport(seed=seed, trials=trials)
    if trials == 0:
        return report
    handlers = {
        "linear": _verify_linear,
        "conv1d": lambda r, row, f: _verify_conv(r, row, f, 1),
        "conv2d": lambda r, row, f: _verify_conv(r, row, f, 2),
        "layernorm": _verify_layernorm,
        "pq": _verify_pq,
    }
    for index, (layer_name, handler) in enumerate(handlers.items()):
        rng = np.random.default_rng([seed, index])
        row = VerifyRow(layer=layer_name)
        for _ in range(trials):
            handler(rng, row, report.failures)
        report.rows.append(row)
    return report
