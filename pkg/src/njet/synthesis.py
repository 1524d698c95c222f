"""Effective filters as alpha-weighted sums of a basis stack, and their adjoints."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from njet.basis import BasisStack


class SynthesizedFilters(NamedTuple):
    filters: np.ndarray          # [C_out, C_in, s, s]
    dfilters_dsigma: np.ndarray  # [C_out, C_in, s, s]


def _check_alphas(alphas: np.ndarray, basis: BasisStack):
    if alphas.ndim != 3:
        raise ValueError(f"alphas must be [C_out, C_in, M], got shape {alphas.shape}")
    if alphas.shape[2] != basis.count:
        raise ValueError(
            f"alphas carry {alphas.shape[2]} coefficients per filter but the basis has {basis.count}")
    if not np.all(np.isfinite(alphas)):
        raise ValueError("alphas contain non-finite values")


def _check_upstream(upstream: np.ndarray, size: int):
    if upstream.ndim != 4 or upstream.shape[2:] != (size, size):
        raise ValueError(f"upstream must be [C_out, C_in, {size}, {size}], got {upstream.shape}")


def synthesize(alphas: np.ndarray, basis: BasisStack) -> SynthesizedFilters:
    """F[o, c] = sum_m alphas[o, c, m] * basis.filters[m], likewise for dF/dsigma."""
    alphas = np.asarray(alphas, dtype=np.float64)
    _check_alphas(alphas, basis)
    filters = np.tensordot(alphas, basis.filters, axes=([2], [0]))
    dfilters = np.tensordot(alphas, basis.dsigma, axes=([2], [0]))
    return SynthesizedFilters(filters, dfilters)


def grad_alpha(upstream: np.ndarray, basis: BasisStack) -> np.ndarray:
    """Adjoint of :func:`synthesize` with respect to alphas."""
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_upstream(upstream, basis.size)
    return np.tensordot(upstream, basis.filters, axes=([2, 3], [1, 2]))


def grad_sigma(upstream: np.ndarray, synthesized: SynthesizedFilters) -> float:
    """Scalar dL/dsigma; sigma is shared by every filter of the layer."""
    upstream = np.asarray(upstream, dtype=np.float64)
    d = synthesized.dfilters_dsigma
    if upstream.shape != d.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match filters {d.shape}")
    # fixed summation order for reproducibility
    return float(np.sum(upstream.ravel() * d.ravel()))
