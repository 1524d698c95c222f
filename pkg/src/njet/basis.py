"""Sampled, scale-normalized 2-D Gaussian derivative bases.

A basis of order N holds every separable derivative G^{i,j} with
i + j <= N, sampled on an integer grid of odd size s = 2*ceil(k*sigma) + 1
and multiplied by sigma**(i + j) so that all orders have comparable
magnitude. The exact derivative of every sampled value with respect to
sigma is stored alongside, which is what makes sigma learnable.

The sigma derivative uses the heat-equation identity
dG/dsigma = sigma * d2G/dx2, so for the m-th derivative

    d G^m(x; sigma) / d sigma = sigma * G^{m+2}(x; sigma)

and no numerical differentiation is involved anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_FILTER_SIZE = 63


class FilterSizeError(ValueError):
    """Raised when sigma implies a filter larger than the allowed cap."""


def hermite(m: int, x):
    """Physicists' Hermite polynomial H_m evaluated by upward recursion.

    Works for scalars and arrays alike.

    >>> hermite(3, 1.0)
    -4.0
    """
    if m < 0:
        raise ValueError(f"Hermite order must be non-negative, got {m}")
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.ones_like(x)
    if m == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for i in range(2, m + 1):
        h, h_prev = 2.0 * x * h - 2.0 * (i - 1) * h_prev, h
    return h if h.ndim else float(h)


def gaussian_1d(x, sigma: float):
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-x * x / (2.0 * sigma * sigma)) / (sigma * math.sqrt(2.0 * math.pi))
    return out if out.ndim else float(out)


def gauss_deriv_1d(m: int, x, sigma: float):
    """m-th derivative of the 1-D Gaussian with standard deviation ``sigma``.

    G^m(x; s) = (-1 / (s sqrt 2))^m H_m(x / (s sqrt 2)) G(x; s)
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c = sigma * math.sqrt(2.0)
    x = np.asarray(x, dtype=np.float64)
    out = (-1.0 / c) ** m * hermite(m, x / c) * gaussian_1d(x, sigma)
    return out if np.ndim(out) else float(out)


def filter_size(sigma: float, extent_k: float) -> int:
    """Odd filter size 2*ceil(k*sigma) + 1 tied to the Gaussian scale."""
    if sigma <= 0 or extent_k <= 0:
        raise ValueError(f"sigma and extent_k must be positive, got {sigma}, {extent_k}")
    return 2 * math.ceil(extent_k * sigma) + 1


def basis_count(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def index_map(order: int) -> list[tuple[int, int]]:
    """(i, j) derivative orders, by ascending total order then ascending i."""
    return [(i, n - i) for n in range(order + 1) for i in range(n + 1)]


@dataclass(frozen=True)
class BasisSpec:
    order: int
    sigma: float
    extent_k: float = 2.0

    def __post_init__(self):
        if self.order < 0:
            raise ValueError(f"order must be >= 0, got {self.order}")
        if not self.sigma > 0 or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not self.extent_k > 0:
            raise ValueError(f"extent_k must be positive, got {self.extent_k}")

    @property
    def size(self) -> int:
        return filter_size(self.sigma, self.extent_k)

    @property
    def count(self) -> int:
        return basis_count(self.order)


@dataclass(frozen=True)
class BasisStack:
    """Discretized basis filters ``[M, s, s]`` indexed ``[m, y, x]``.

    ``filters[m]`` for ``index_map[m] == (i, j)`` is the derivative of
    order i along x (columns) and j along y (rows).
    """

    spec: BasisSpec
    filters: np.ndarray
    dsigma: np.ndarray
    index_map: list = field(default_factory=list)
    normalized: bool = True

    @property
    def size(self) -> int:
        return self.filters.shape[-1]

    @property
    def count(self) -> int:
        return self.filters.shape[0]


def _sampled_1d(order: int, grid: np.ndarray, sigma: float, normalize: bool):
    """Rows m = 0..order of sampled 1-D derivatives and their sigma derivatives."""
    # G^{m+2} is needed for the sigma derivative of G^m
    raw = np.stack([gauss_deriv_1d(m, grid, sigma) for m in range(order + 3)])
    vals = np.empty((order + 1, grid.size))
    dvals = np.empty((order + 1, grid.size))
    for m in range(order + 1):
        d_raw = sigma * raw[m + 2]
        if normalize:
            scale = sigma ** m
            vals[m] = scale * raw[m]
            dvals[m] = scale * d_raw
            if m:
                dvals[m] += m * sigma ** (m - 1) * raw[m]
        else:
            vals[m] = raw[m]
            dvals[m] = d_raw
    return vals, dvals


def sample_basis(spec: BasisSpec, *, normalize: bool = True, size: int | None = None,
                 max_size: int = MAX_FILTER_SIZE) -> BasisStack:
    """Sample the order-``spec.order`` basis on an integer grid centred at 0.

    ``size`` overrides the sigma-derived size (must be odd). The grid is
    held fixed when differentiating with respect to sigma.
    """
    s = spec.size if size is None else int(size)
    if s % 2 != 1 or s < 1:
        raise ValueError(f"filter size must be odd and positive, got {s}")
    if s > max_size:
        raise FilterSizeError(
            f"sigma={spec.sigma:.4g} with k={spec.extent_k} gives filter size {s} "
            f"> cap {max_size}; sigma is probably diverging")
    half = (s - 1) // 2
    grid = np.arange(-half, half + 1, dtype=np.float64)
    vals, dvals = _sampled_1d(spec.order, grid, spec.sigma, normalize)

    pairs = index_map(spec.order)
    filters = np.empty((len(pairs), s, s))
    dsigma = np.empty((len(pairs), s, s))
    for m, (i, j) in enumerate(pairs):
        filters[m] = np.outer(vals[j], vals[i])
        dsigma[m] = np.outer(dvals[j], vals[i]) + np.outer(vals[j], dvals[i])
    filters.setflags(write=False)
    dsigma.setflags(write=False)
    return BasisStack(spec=spec, filters=filters, dsigma=dsigma,
                      index_map=pairs, normalized=normalize)
