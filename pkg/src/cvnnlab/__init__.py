"""Complex-valued neural network layers on a Wirtinger-mode autodiff tape,
with interchangeable execution backends and iSTFT synthesis tools."""

from .ctensor import (
    CTensor,
    DomainError,
    RTensor,
    Shape,
    ShapeError,
    cmul,
    matmul_oracle,
    polar_compose,
    polar_decompose,
)
from .autograd import (
    Adam,
    CVar,
    GradPair,
    Parameter,
    RealParameter,
    Tape,
    Var,
    backward,
    node_count,
    sgd_step,
    ste_identity,
)
from .layers import (
    Backend,
    ComplexConv1d,
    ComplexConv2d,
    ComplexLayerNorm,
    ComplexLinear,
    PhaseQuantizer,
    RealLinear,
    mag_activation,
    phase_quantize,
    quantize_phase,
    split_activation,
    split_gelu,
    split_leaky_relu,
)

__version__ = "0.1.0"
