"""Dense complex tensors stored as paired float64 real/imaginary planes.

The split-plane layout (separate ``re`` and ``im`` arrays instead of an
interleaved complex dtype) is deliberate: the fused block-matrix execution
path consumes stacked ``[x; y]`` planes directly, so keeping the planes
separate makes that path copy-free.

Real-valued tensors are plain ``numpy.float64`` arrays throughout the
library; ``RTensor`` is an alias kept for signatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Shape = tuple[int, ...]
RTensor = np.ndarray


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class DomainError(ValueError):
    """A value is outside the mathematically valid domain (e.g. r < 0)."""


def _as_plane(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


@dataclass(frozen=True)
class CTensor:
    """Immutable complex tensor ``z = re + i*im`` with float64 planes."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "re", _as_plane(self.re))
        object.__setattr__(self, "im", _as_plane(self.im))
        if self.re.shape != self.im.shape:
            raise ShapeError(
                f"real/imaginary planes differ: {self.re.shape} vs {self.im.shape}"
            )
        if not (np.isfinite(self.re).all() and np.isfinite(self.im).all()):
            raise DomainError("non-finite entries in complex tensor")

    @property
    def shape(self) -> Shape:
        return self.re.shape

    @property
    def size(self) -> int:
        return self.re.size

    @classmethod
    def zeros(cls, shape: Shape | int) -> "CTensor":
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_complex(cls, z) -> "CTensor":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def conj(self) -> "CTensor":
        return CTensor(self.re, -self.im)

    def abs(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    def phase(self) -> np.ndarray:
        """Principal phase in (-pi, pi]; zero entries get phase 0."""
        # `im + 0.0` normalizes -0.0 so that -1 + 0j maps to +pi, not -pi.
        theta = np.arctan2(self.im + 0.0, self.re)
        return np.where(np.hypot(self.re, self.im) == 0.0, 0.0, theta)

    def reshape(self, shape: Shape) -> "CTensor":
        return CTensor(self.re.reshape(shape), self.im.reshape(shape))

    def __add__(self, other: "CTensor") -> "CTensor":
        return CTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "CTensor") -> "CTensor":
        return CTensor(self.re - other.re, self.im - other.im)

    def __neg__(self) -> "CTensor":
        return CTensor(-self.re, -self.im)

    def __mul__(self, other) -> "CTensor":
        if isinstance(other, CTensor):
            return cmul(self, other)
        return CTensor(self.re * other, self.im * other)

    __rmul__ = __mul__


def polar_decompose(z: CTensor) -> tuple[RTensor, RTensor]:
    """Split ``z`` into magnitude ``r >= 0`` and principal phase in (-pi, pi].

    The phase of an exactly-zero entry is defined as 0, since atan2(0, 0)
    is platform-defined.
    """
    return z.abs(), z.phase()


def polar_compose(r: RTensor, theta: RTensor) -> CTensor:
    """Rebuild ``r * exp(i*theta)``; raises if any magnitude is negative."""
    r = _as_plane(r)
    theta = _as_plane(theta)
    if r.shape != theta.shape:
        raise ShapeError(f"magnitude/phase shapes differ: {r.shape} vs {theta.shape}")
    if np.any(r < 0.0):
        raise DomainError("negative magnitude in polar_compose")
    return CTensor(r * np.cos(theta), r * np.sin(theta))


def cmul(a: CTensor, b: CTensor) -> CTensor:
    """Elementwise complex product with numpy broadcasting."""
    try:
        re = a.re * b.re - a.im * b.im
        im = a.re * b.im + a.im * b.re
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return CTensor(re, im)


def matmul_oracle(w: CTensor, z: CTensor) -> CTensor:
    """Reference complex matrix product via four independent real products.

    Computes ``W z`` as ``(Wr x - Wi y) + i (Wi x + Wr y)``. This is the
    ground-truth oracle every execution backend is checked against; it is
    kept free of any backend-specific fusion on purpose.

    ``w`` is [m, n]; ``z`` is [n] or [n, k].
    """
    if w.re.ndim != 2:
        raise ShapeError(f"weight must be a matrix, got shape {w.shape}")
    if z.re.ndim not in (1, 2) or z.shape[0] != w.shape[1]:
        raise ShapeError(f"cannot multiply {w.shape} by {z.shape}")
    re = w.re @ z.re - w.im @ z.im
    im = w.im @ z.re + w.re @ z.im
    return CTensor(re, im)
