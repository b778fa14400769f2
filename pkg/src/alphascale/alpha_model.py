"""Closed-form translucency value A for isotropic reference materials.

    A(sa, ss) = (1 - exp(-c * (p*sa + ss))) ** q

``p`` weights absorption against scattering, ``q`` is a Stevens-type
exponent, and ``c`` (cm) makes the exponent dimensionless. Rescaling an
object by ``k`` and dividing its coefficients by ``k`` keeps its optical
thickness; :func:`rescale_alpha` applies that directly to A.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

REFRACTIVE_INDEX = 1.3
ALPHA_CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class ReferenceMaterial:
    sigma_a: float  # cm^-1
    sigma_s: float  # cm^-1

    def __post_init__(self):
        if not (self.sigma_a >= 0 and self.sigma_s >= 0):
            raise DomainError(f"coefficients must be non-negative, got ({self.sigma_a}, {self.sigma_s})")

    @property
    def sigma_t(self) -> float:
        return self.sigma_a + self.sigma_s

    @property
    def mean_free_path(self) -> float:
        """1/sigma_t in cm; infinite for the transparent material."""
        return math.inf if self.sigma_t == 0 else 1.0 / self.sigma_t

    def optical_thickness(self, length_cm: float) -> float:
        """Number of mean free paths across ``length_cm``."""
        return self.sigma_t * length_cm

    def scaled(self, k: float) -> "ReferenceMaterial":
        """Coefficients divided by ``k`` (object scaled by ``k``)."""
        return ReferenceMaterial(self.sigma_a / k, self.sigma_s / k)


@dataclass(frozen=True)
class AlphaParams:
    p: float = 0.4
    q: float = 0.6
    c: float = 0.0153  # cm

    def __post_init__(self):
        if not (self.p >= 0 and self.q > 0 and self.c > 0):
            raise DomainError(f"need p >= 0, q > 0, c > 0; got {self}")


DEFAULT_PARAMS = AlphaParams()
UNMODIFIED_PARAMS = AlphaParams(p=1.0, q=1.0)


@dataclass(frozen=True)
class AlphaValue:
    a: float

    def __post_init__(self):
        if not (0.0 <= self.a < 1.0):
            raise DomainError(f"A must lie in [0, 1), got {self.a}")

    def a_hat(self, q: float) -> float:
        """Intermediate value before the power law, A ** (1/q)."""
        return self.a ** (1.0 / q)

    def __float__(self):
        return float(self.a)


def _coeffs(m):
    if isinstance(m, ReferenceMaterial):
        return m.sigma_a, m.sigma_s
    return m


def modified_attenuation(m, params: AlphaParams = DEFAULT_PARAMS):
    """p*sigma_a + sigma_s. ``m`` may be a material or an (sa, ss) pair of arrays."""
    sa, ss = _coeffs(m)
    return params.p * sa + ss


def alpha_hat(attenuation, c: float = DEFAULT_PARAMS.c):
    return -np.expm1(-c * np.asarray(attenuation, dtype=float))


def alpha_from_attenuation(attenuation, params: AlphaParams = DEFAULT_PARAMS):
    out = alpha_hat(attenuation, params.c) ** params.q
    return float(out) if np.ndim(out) == 0 else out


def alpha_from_coefficients(m, params: AlphaParams = DEFAULT_PARAMS):
    """A for a material; vectorizes over array-valued (sa, ss)."""
    return alpha_from_attenuation(modified_attenuation(m, params), params)


def _check_alpha(a, allow_clamp: bool):
    a = np.asarray(float(a) if isinstance(a, AlphaValue) else a, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise DomainError("A must be non-negative")
    if np.any(a >= 1.0):
        if not allow_clamp:
            raise DomainError("A >= 1 corresponds to infinite attenuation")
    over = a > ALPHA_CLAMP
    if np.any(over):
        warnings.warn(f"{int(np.sum(over))} A value(s) clamped to {ALPHA_CLAMP!r}", RuntimeWarning, stacklevel=3)
        a = np.minimum(a, ALPHA_CLAMP)
    return a


def attenuation_from_alpha(a, params: AlphaParams = DEFAULT_PARAMS, clamp: bool = False):
    """Inverse of :func:`alpha_from_attenuation`: -ln(1 - A**(1/q)) / c.

    A >= 1 raises unless ``clamp`` is set; values above 1 - 1e-12 are
    clamped with a RuntimeWarning either way.
    """
    a = _check_alpha(a, clamp)
    out = -np.log1p(-(a ** (1.0 / params.q))) / params.c
    return float(out) if out.ndim == 0 else out


def rescale_alpha(a, k: float, q: float = DEFAULT_PARAMS.q):
    """A of the same reference material after scaling the object by ``k``.

    Equivalent to dividing both coefficients by ``k``; ``c`` and ``p``
    cancel out, only ``q`` is needed.
    """
    if not k > 0:
        raise DomainError("scale factor must be positive")
    a = _check_alpha(a, allow_clamp=False)
    # 1 - (1 - a^(1/q))^(1/k), computed through log1p/expm1 to keep precision near 0 and 1
    a_hat = a ** (1.0 / q)
    out = (-np.expm1(np.log1p(-a_hat) / k)) ** q
    return float(out) if out.ndim == 0 else out


def quantize_alpha(a, bits: int = 8) -> int:
    """Round-to-nearest integer code used at RGBA file boundaries."""
    levels = (1 << bits) - 1
    return int(np.clip(np.rint(float(a) * levels), 0, levels))


def dequantize_alpha(code: int, bits: int = 8) -> float:
    return code / ((1 << bits) - 1)
