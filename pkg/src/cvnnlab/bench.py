"""Backward-graph size and wall-time comparison across execution backends.

Two reference stacks are timed: an 8-layer linear+conv1d stack shaped like
a frame-level generator, and a 3-scale conv2d stack shaped like a
multi-resolution spectrogram discriminator. Only orderings and node ratios
are meaningful on CPU; absolute times are reported but never asserted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .autograd import CVar, Tape, add, backward, cmag_sq, mean, reshape
from .ctensor import CTensor
from .layers import Backend, ComplexConv1d, ComplexConv2d, ComplexLinear, split_gelu, split_leaky_relu

BACKENDS = (Backend.NAIVE, Backend.GAUSS, Backend.BLOCK)


class GeneratorStack:
    """4 dense + 4 conv1d complex layers with split GELU between them."""

    def __init__(self, backend: Backend, seed: int = 0,
                 features: int = 48, channels: int = 6, length: int = 24,
                 batch: int = 4):
        rng = np.random.default_rng(seed)
        assert features == channels * (features // channels)
        self.features = features
        self.channels = channels
        self.length = features // channels
        self.batch = batch
        self.linears = [
            ComplexLinear(features, features, backend=backend, rng=rng,
                          name=f"gen.l{i}")
            for i in range(4)
        ]
        self.convs = [
            ComplexConv1d(channels, channels, 3, padding=1, backend=backend,
                          rng=rng, name=f"gen.c{i}")
            for i in range(4)
        ]

    def make_input(self, seed: int = 1) -> CTensor:
        rng = np.random.default_rng(seed)
        shape = (self.batch, self.features)
        return CTensor(rng.normal(size=shape), rng.normal(size=shape))

    def forward(self, tape: Tape, zin: CTensor):
        z = tape.complex_leaf(zin)
        for layer in self.linears:
            z = split_gelu(layer.forward(tape, z))
        shape3 = (self.batch, self.channels, self.length)
        z = CVar(reshape(z.re, shape3), reshape(z.im, shape3))
        for layer in self.convs:
            z = split_gelu(layer.forward(tape, z))
        return mean(cmag_sq(z))


class DiscriminatorStack:
    """Three conv2d pyramids over inputs of decreasing resolution."""

    def __init__(self, backend: Backend, seed: int = 0,
                 sizes=(24, 16, 12), width: int = 4, batch: int = 2):
        rng = np.random.default_rng(seed)
        self.sizes = sizes
        self.batch = batch
        self.scales = []
        for s, size in enumerate(sizes):
            self.scales.append([
                ComplexConv2d(1, width, 3, stride=2, padding=1, backend=backend,
                              rng=rng, name=f"disc.s{s}.c0"),
                ComplexConv2d(width, width, 3, stride=2, padding=1, backend=backend,
                              rng=rng, name=f"disc.s{s}.c1"),
                ComplexConv2d(width, 1, 3, padding=1, backend=backend,
                              rng=rng, name=f"disc.s{s}.c2"),
            ])

    def make_input(self, seed: int = 1):
        rng = np.random.default_rng(seed)
        return [
            CTensor(rng.normal(size=(self.batch, 1, size, size)),
                    rng.normal(size=(self.batch, 1, size, size)))
            for size in self.sizes
        ]

    def forward(self, tape: Tape, inputs):
        total = None
        for convs, zin in zip(self.scales, inputs):
            z = tape.complex_leaf(zin)
            z = split_leaky_relu(convs[0].forward(tape, z))
            z = split_leaky_relu(convs[1].forward(tape, z))
            z = convs[2].forward(tape, z)
            score = mean(cmag_sq(z))
            total = score if total is None else add(total, score)
        return total


@dataclass
class StackResult:
    backend: str
    forward_ms: float
    backward_ms: float
    nodes: int

    def to_dict(self):
        return {"backend": self.backend, "forward_ms": self.forward_ms,
                "backward_ms": self.backward_ms, "nodes": self.nodes}


@dataclass
class BenchReport:
    seed: int
    repeats: int
    deterministic: bool
    generator: list[StackResult] = field(default_factory=list)
    discriminator: list[StackResult] = field(default_factory=list)

    def _stack(self, name) -> dict[str, StackResult]:
        return {r.backend: r for r in getattr(self, name)}

    def node_ratio(self, stack: str, num: str = "block", den: str = "naive") -> float:
        rows = self._stack(stack)
        return rows[num].nodes / rows[den].nodes

    def to_dict(self):
        return {
            "seed": self.seed,
            "repeats": self.repeats,
            "deterministic": self.deterministic,
            "generator": [r.to_dict() for r in self.generator],
            "discriminator": [r.to_dict() for r in self.discriminator],
            "node_ratio_generator": self.node_ratio("generator"),
            "node_ratio_discriminator": self.node_ratio("discriminator"),
        }


def _time_stack(stack, zin, repeats: int, warmup: int = 2):
    fwd_times, bwd_times = [], []
    nodes = None
    for i in range(warmup + repeats):
        t0 = time.perf_counter()
        tape = Tape()
        loss = stack.forward(tape, zin)
        t1 = time.perf_counter()
        backward(tape, loss)
        t2 = time.perf_counter()
        if i >= warmup:
            fwd_times.append((t1 - t0) * 1e3)
            bwd_times.append((t2 - t1) * 1e3)
        nodes = tape.node_count()
    return median(fwd_times), median(bwd_times), nodes


def run_bench(seed: int = 0, repeats: int = 10, deterministic: bool = False) -> BenchReport:
    """Time forward/backward per backend on both stacks; medians over
    ``repeats`` after warmup. In deterministic mode wall times are omitted
    (set to zero) so reports are bitwise reproducible."""
    if repeats < 3:
        raise ValueError("need at least 3 repeats")
    report = BenchReport(seed=seed, repeats=repeats, deterministic=deterministic)
    for backend in BACKENDS:
        gen = GeneratorStack(backend, seed=seed)
        fwd, bwd, nodes = _time_stack(gen, gen.make_input(seed + 1), repeats)
        if deterministic:
            fwd = bwd = 0.0
        report.generator.append(StackResult(backend.value, fwd, bwd, nodes))
    for backend in BACKENDS:
        disc = DiscriminatorStack(backend, seed=seed)
        fwd, bwd, nodes = _time_stack(disc, disc.make_input(seed + 1), repeats)
        if deterministic:
            fwd = bwd = 0.0
        report.discriminator.append(StackResult(backend.value, fwd, bwd, nodes))
    return report
