"""CIE colorimetry on the 380-730 nm / 10 nm lattice.

Measurement-path lightness uses the CIE 1931 2-degree observer and the
D50 illuminant. sRGB is D65-referenced; the two white points are bridged
with a Bradford chromatic adaptation.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, DomainError, ParseError

WAVELENGTHS = np.arange(380, 731, 10)
N_BANDS = WAVELENGTHS.size  # 36

# CIELAB constants (exact rational forms)
_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

SRGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

_BRADFORD = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])


class ColorXYZ(NamedTuple):
    X: float
    Y: float
    Z: float


class ColorLab(NamedTuple):
    L: float
    a: float
    b: float


class ColorRGB(NamedTuple):
    r: float
    g: float
    b: float


class Spectrum:
    """36 non-negative factors sampled 380-730 nm in 10 nm steps."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        if v.shape != (N_BANDS,):
            raise DimensionError(f"spectrum needs {N_BANDS} samples, got shape {v.shape}")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise DomainError("spectrum values must be finite and non-negative")
        v.setflags(write=False)
        self.values = v

    @classmethod
    def flat(cls, value: float) -> "Spectrum":
        return cls(np.full(N_BANDS, float(value)))

    def __eq__(self, other):
        return isinstance(other, Spectrum) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Spectrum({self.values.tolist()!r})"


@lru_cache(maxsize=1)
def _cie_tables():
    text = resources.files(__package__).joinpath("data/cie_10nm.csv").read_text()
    rows = [r for r in csv.reader(l for l in text.splitlines() if not l.startswith("#"))]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    if not np.array_equal(data[:, 0], WAVELENGTHS):
        raise DimensionError("embedded CIE table is not on the 10 nm lattice")
    data.setflags(write=False)
    return data


def cie1931_observer() -> np.ndarray:
    """Colour-matching functions as a (36, 3) array (xbar, ybar, zbar)."""
    return _cie_tables()[:, 1:4]


def illuminant(name: str = "D50") -> Spectrum:
    col = {"D50": 4, "D65": 5}.get(name.upper())
    if col is None:
        raise DomainError(f"unknown illuminant {name!r}")
    return Spectrum(_cie_tables()[:, col])


def spectrum_to_xyz(s, illum=None, observer=None) -> ColorXYZ:
    """Weighted CIE summation, normalized so a unit spectrum gives Y = 100."""
    s_vals = s.values if isinstance(s, Spectrum) else np.asarray(s, dtype=float)
    ill = illuminant("D50") if illum is None else illum
    ill_vals = ill.values if isinstance(ill, Spectrum) else np.asarray(ill, dtype=float)
    cmf = cie1931_observer() if observer is None else np.asarray(observer, dtype=float)
    if s_vals.shape != (N_BANDS,) or ill_vals.shape != (N_BANDS,) or cmf.shape != (N_BANDS, 3):
        raise DimensionError("spectrum, illuminant and observer must share the 380-730/10 nm lattice")
    weights = ill_vals[:, None] * cmf
    k = 100.0 / weights[:, 1].sum()
    xyz = k * (s_vals @ weights)
    return ColorXYZ(*(float(v) for v in xyz))


def white_point(illum: str = "D50") -> ColorXYZ:
    return spectrum_to_xyz(Spectrum.flat(1.0), illuminant(illum))


def _lab_f(t):
    t = np.asarray(t, dtype=float)
    return np.where(t > _EPS, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)


def xyz_to_lab(c, white=None) -> ColorLab:
    w = white_point("D50") if white is None else white
    if w[1] <= 0 or w[0] <= 0 or w[2] <= 0:
        raise DomainError("white point must be positive")
    fx, fy, fz = (_lab_f(c[i] / w[i]) for i in range(3))
    return ColorLab(float(116.0 * fy - 16.0), float(500.0 * (fx - fy)), float(200.0 * (fy - fz)))


def factor_to_lightness(y):
    """CIELAB L* of a flat spectrum with reflectance/transmittance factor ``y``.

    Accepts scalars or arrays. Both CIELAB branches are used, so 0 maps to 0.
    """
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("factor must be non-negative")
    # the linear branch is evaluated directly so tiny factors keep their relative precision
    out = np.where(arr > _EPS, 116.0 * np.cbrt(arr) - 16.0, _KAPPA * arr)
    return float(out) if out.ndim == 0 else out


def lightness_to_factor(L):
    """Inverse of :func:`factor_to_lightness`."""
    L = np.asarray(L, dtype=float)
    fy = (L + 16.0) / 116.0
    out = np.where(fy ** 3 > _EPS, fy ** 3, L / _KAPPA)
    return float(out) if out.ndim == 0 else out


def lightness_slope(y):
    """dL*/dy, used to carry Monte-Carlo errors into lightness units."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(y > _EPS, (116.0 / 3.0) * np.cbrt(np.maximum(y, _EPS)) ** -2, _KAPPA)
    return float(out) if out.ndim == 0 else out


def _decode(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _encode(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.power(np.maximum(v, 0.0), 1 / 2.4) - 0.055)


def srgb_to_xyz_array(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    if np.any(rgb < 0) or np.any(rgb > 1):
        raise DomainError("sRGB channels must lie in [0, 1]")
    return 100.0 * _decode(rgb) @ SRGB_TO_XYZ.T


def xyz_to_srgb_array(xyz):
    """Returns ``(rgb, clipped_mask)`` for an (..., 3) array of XYZ (Y in 0..100)."""
    lin = (np.asarray(xyz, dtype=float) / 100.0) @ XYZ_TO_SRGB.T
    enc = _encode(lin)
    clipped = np.any((enc < 0) | (enc > 1), axis=-1)
    return np.clip(enc, 0.0, 1.0), clipped


def srgb_to_xyz(c) -> ColorXYZ:
    return ColorXYZ(*(float(v) for v in srgb_to_xyz_array(c)))


def xyz_to_srgb(c):
    """Returns ``(ColorRGB, clipped)``; out-of-gamut channels are clamped."""
    rgb, clipped = xyz_to_srgb_array(c)
    return ColorRGB(*(float(v) for v in rgb)), bool(clipped)


def bradford_matrix(src: ColorXYZ, dst: ColorXYZ) -> np.ndarray:
    cone_src = _BRADFORD @ np.asarray(src, dtype=float)
    cone_dst = _BRADFORD @ np.asarray(dst, dtype=float)
    return np.linalg.inv(_BRADFORD) @ np.diag(cone_dst / cone_src) @ _BRADFORD


@lru_cache(maxsize=1)
def _srgb_white():
    return ColorXYZ(*(100.0 * SRGB_TO_XYZ.sum(axis=1)))


@lru_cache(maxsize=1)
def _d65_to_d50():
    return bradford_matrix(_srgb_white(), white_point("D50"))


def srgb_to_lab_d50(c) -> ColorLab:
    """sRGB -> XYZ (D65) -> Bradford -> CIELAB relative to the D50 measurement white."""
    xyz = _d65_to_d50() @ srgb_to_xyz_array(c)
    return xyz_to_lab(xyz, white_point("D50"))


def srgb_lightness(c) -> float:
    return srgb_to_lab_d50(c).L


def lab_d50_to_srgb_array(lab):
    """Vectorized inverse of :func:`srgb_to_lab_d50`; returns ``(rgb, clipped_mask)``."""
    lab = np.asarray(lab, dtype=float)
    w = np.asarray(white_point("D50"))
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0

    def finv(f):
        return np.where(f ** 3 > _EPS, f ** 3, (116.0 * f - 16.0) / _KAPPA)

    xyz50 = np.stack([finv(fx), finv(fy), finv(fz)], axis=-1) * w
    xyz65 = xyz50 @ np.linalg.inv(_d65_to_d50()).T
    return xyz_to_srgb_array(xyz65)


def read_spectrum_csv(path) -> Spectrum:
    """Read ``wavelength_nm,value`` rows covering exactly 380, 390, ..., 730."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["wavelength_nm", "value"]:
        raise ParseError("expected header 'wavelength_nm,value'", path, 1)
    return Spectrum(_parse_spectrum_rows(rows[1:], path, first_line=2))


def _parse_spectrum_rows(rows, path, first_line):
    values = []
    for i, row in enumerate(rows):
        line = first_line + i
        if len(row) != 2:
            raise ParseError("expected 2 columns", path, line)
        try:
            wl, val = float(row[0]), float(row[1])
        except ValueError:
            raise ParseError(f"non-numeric value in {row!r}", path, line) from None
        if i >= N_BANDS or wl != WAVELENGTHS[i]:
            raise ParseError(f"unexpected wavelength {wl:g}", path, line)
        if val < 0:
            raise ParseError("negative spectral value", path, line)
        values.append(val)
    if len(values) != N_BANDS:
        raise ParseError(f"expected {N_BANDS} rows, got {len(values)}", path)
    return values


def spectrum_lightness(s: Spectrum, baseline: Spectrum | None = None) -> float:
    """L* of a measured factor spectrum under D50, optionally divided by a baseline."""
    vals = s.values
    if baseline is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(baseline.values > 0, vals / baseline.values, 0.0)
    return xyz_to_lab(spectrum_to_xyz(vals)).L
