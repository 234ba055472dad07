"""Smoothing kernels normalized to integrate to one over R^d.

Radial families (``spherical``, ``epanechnikov``, ``gaussian``) depend on
``||t||`` only. ``product-epanechnikov`` multiplies 1-D Epanechnikov profiles
along each axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "DimensionError",
    "ParameterError",
    "unit_ball_volume",
    "kernel_value",
    "default_kernel",
]

FAMILIES = ("spherical", "epanechnikov", "gaussian", "product-epanechnikov")


class ParameterError(ValueError):
    """Invalid parameter value (bandwidth, level, probability content...)."""


class DimensionError(ValueError):
    """Points or query vectors do not match the expected dimension."""


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d."""
    return float(np.pi ** (d / 2.0) / _gamma(d / 2.0 + 1.0))


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family in a fixed dimension.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    dim : int
        Ambient dimension d >= 1.
    """

    family: str = "epanechnikov"
    dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"kernel dimension must be a positive integer, got {self.dim!r}")

    @property
    def compact(self) -> bool:
        return self.family != "gaussian"

    @property
    def support_radius(self) -> float:
        """Radius (in units of h) outside which the kernel is negligible.

        Exact for compact kernels. For the Gaussian, 6 standard deviations.
        The product kernel's support is the cube [-1, 1]^d, whose
        circumscribed radius is sqrt(d).
        """
        if self.family == "gaussian":
            return 6.0
        if self.family == "product-epanechnikov":
            return float(np.sqrt(self.dim))
        return 1.0

    @property
    def axis_radius(self) -> float:
        """Half-width of the kernel support along a single axis (units of h)."""
        return 6.0 if self.family == "gaussian" else 1.0

    def profile(self, t: np.ndarray) -> np.ndarray:
        """Evaluate K on an array of offsets with trailing axis of length d."""
        t = np.asarray(t, dtype=float)
        if t.shape[-1] != self.dim:
            raise DimensionError(f"expected vectors of dimension {self.dim}, got {t.shape[-1]}")
        d = self.dim
        if self.family == "product-epanechnikov":
            return np.prod(0.75 * np.clip(1.0 - t * t, 0.0, None), axis=-1)
        r2 = np.einsum("...i,...i->...", t, t)
        return self.radial(r2)

    def radial(self, r2: np.ndarray) -> np.ndarray:
        """Evaluate a radial kernel as a function of the squared norm."""
        d = self.dim
        r2 = np.asarray(r2, dtype=float)
        if self.family == "spherical":
            return np.where(r2 <= 1.0, 1.0 / unit_ball_volume(d), 0.0)
        if self.family == "epanechnikov":
            c = (d + 2.0) / (2.0 * unit_ball_volume(d))
            return c * np.clip(1.0 - r2, 0.0, None)
        if self.family == "gaussian":
            return np.exp(-0.5 * r2) / (2.0 * np.pi) ** (d / 2.0)
        raise ParameterError(f"{self.family} is not a radial kernel")

    def first_moment(self) -> float:
        """D = integral of ||z|| K(z) dz, in closed form."""
        d = self.dim
        if self.family == "spherical":
            return d / (d + 1.0)
        if self.family == "epanechnikov":
            # c * S_{d-1} * int_0^1 r^d (1 - r^2) dr with c * v_d = (d+2)/2
            return (d + 2.0) / 2.0 * d * (1.0 / (d + 1.0) - 1.0 / (d + 3.0))
        if self.family == "gaussian":
            return float(np.sqrt(2.0) * _gamma((d + 1) / 2.0) / _gamma(d / 2.0))
        if d == 1:
            return 0.375
        from scipy import integrate

        if d == 2:
            val, _ = integrate.dblquad(
                lambda y, x: np.hypot(x, y) * 0.5625 * (1 - x * x) * (1 - y * y), -1, 1, -1, 1,
                epsabs=1e-11,
            )
            return float(val)
        raise ParameterError("first moment of the product kernel is only tabulated for d <= 2")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. vectors W ~ K, shape (size, d)."""
        d = self.dim
        if self.family == "gaussian":
            return rng.standard_normal((size, d))
        if self.family == "product-epanechnikov":
            return 2.0 * rng.beta(2.0, 2.0, size=(size, d)) - 1.0
        # radial compact kernels: direction uniform on the sphere, radius via r^2 ~ Beta(d/2, b)
        b = 1.0 if self.family == "spherical" else 2.0
        direction = rng.standard_normal((size, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = np.sqrt(rng.beta(d / 2.0, b, size=size))
        return direction * radius[:, None]


def kernel_value(kernel: KernelSpec, t) -> float:
    """Normalized kernel value K(t) at a single d-vector ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.ndim != 1 or t.shape[0] != kernel.dim:
        raise DimensionError(f"expected a vector of dimension {kernel.dim}, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ParameterError("kernel argument must be finite")
    return float(kernel.profile(t))


def default_kernel(dim: int) -> KernelSpec:
    """Epanechnikov in 1-D, the product Epanechnikov kernel for d >= 2."""
    return KernelSpec("epanechnikov" if dim == 1 else "product-epanechnikov", dim)
