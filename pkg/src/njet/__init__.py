"""Learnable-scale convolution filters from Gaussian derivative bases."""

from njet.basis import (BasisSpec, BasisStack, FilterSizeError, filter_size, gauss_deriv_1d,
                        hermite, sample_basis)
from njet.synthesis import SynthesizedFilters, grad_alpha, grad_sigma, synthesize

__version__ = "0.1.0"
