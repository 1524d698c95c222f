"""Least-squares fitting of basis coefficients to image patches.

Each channel of a patch is projected onto the span of the sampled
basis, ignoring a border of ``border_ignore`` pixels, by solving the
normal equations of the basis Gram matrix.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

from njet.basis import BasisSpec, sample_basis
from njet.synthesis import synthesize

COND_LIMIT = 1e12


class SingularGramError(np.linalg.LinAlgError):
    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class PatchFit(NamedTuple):
    alphas: np.ndarray  # [C, M]
    residual: float     # RMSE over evaluated pixels


def _as_chw(patch):
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        return patch[None]
    if patch.ndim != 3:
        raise ValueError(f"patch must be [s, s] or [C, s, s], got shape {patch.shape}")
    return patch


def design_matrix(sigma, order, extent_k, size=None, border_ignore=0):
    """Basis filters flattened over the evaluated (non-border) pixels: [P, M]."""
    stack = sample_basis(BasisSpec(order, sigma, extent_k), size=size)
    s = stack.size
    if 2 * border_ignore >= s:
        raise ValueError(f"border of {border_ignore} leaves nothing of a {s}x{s} patch")
    b = border_ignore
    inner = stack.filters[:, b:s - b, b:s - b]
    return inner.reshape(stack.count, -1).T, stack


def solve_normal(A, y):
    """Solve min ||A x - y|| via the Gram matrix, with a ridge fallback for bad conditioning."""
    gram = A.T @ A
    rhs = A.T @ y
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond):
        raise SingularGramError(f"basis Gram matrix is singular (condition {cond:.3g})", cond)
    if cond > COND_LIMIT:
        gram = gram + 1e-10 * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    try:
        return scipy.linalg.solve(gram, rhs, assume_a="pos")
    except np.linalg.LinAlgError as e:
        raise SingularGramError(f"basis Gram matrix is singular (condition {cond:.3g})", cond) from e


def fit_patch(patch, sigma, order, extent_k=2.0, border_ignore=1, size=None) -> PatchFit:
    """Fit one set of alphas per channel; ``size`` defaults to the patch size.

    The patch must match the sigma-derived filter size unless ``size``
    is given explicitly.
    """
    patch = _as_chw(patch)
    s = patch.shape[-1]
    if patch.shape[-2] != s:
        raise ValueError(f"patch must be square, got {patch.shape[-2:]}")
    derived = BasisSpec(order, sigma, extent_k).size
    if size is None and s != derived:
        raise ValueError(f"patch size {s} does not match filter size {derived} for "
                         f"sigma={sigma}, k={extent_k}; pass size= to override")
    if size is not None and size != s:
        raise ValueError(f"size override {size} does not match patch size {s}")
    A, _ = design_matrix(sigma, order, extent_k, s, border_ignore)
    b = border_ignore
    Y = patch[:, b:s - b, b:s - b].reshape(patch.shape[0], -1).T
    alphas = solve_normal(A, Y).T
    resid = Y - A @ alphas.T
    return PatchFit(alphas, float(np.sqrt(np.mean(resid ** 2))))


def reconstruct(alphas, sigma, order, extent_k=2.0, size=None) -> np.ndarray:
    """Synthesize the [C, s, s] patch described by per-channel alphas [C, M]."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim == 1:
        alphas = alphas[None]
    stack = sample_basis(BasisSpec(order, sigma, extent_k), size=size)
    return synthesize(alphas[:, None, :], stack).filters[:, 0]
