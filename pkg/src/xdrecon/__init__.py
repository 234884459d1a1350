"""Cross-domain deep-cascade MRI reconstruction.

Train an unrolled CNN cascade on phase-synthesised images, score it across
imaging domains, and measure how well one domain's patches cover another's.
"""

from .kernels import BACKEND as KERNEL_BACKEND
from .kspace import (
    ComplexImage,
    ConfigError,
    SamplingMask,
    data_consistency,
    fft2c,
    generate_mask,
    ifft2c,
    undersample,
)
from .phase import PhaseParams, synthesize_phase

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "ComplexImage",
    "ConfigError",
    "PhaseParams",
    "SamplingMask",
    "data_consistency",
    "fft2c",
    "generate_mask",
    "ifft2c",
    "synthesize_phase",
    "undersample",
]
