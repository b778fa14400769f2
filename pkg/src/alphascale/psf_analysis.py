"""Gaussian point-spread functions, aperture measurements and blur discrimination.

A PSF p(x) = exp(-c |x|^2) (x in mm) stands for lateral light transport.
``psf_measurement`` gives the light collected by a detection disk when
a disk of diameter a_i is uniformly illuminated, ``device_discrimination``
asks whether two PSFs yield edge-loss lightness differences that a
spectrophotometer can tell apart, and ``hvs_blur_difference`` compares
two blurred disk images after filtering with a contrast-sensitivity
function.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._mc_kernel import disk_overlap
from .colorimetry import factor_to_lightness
from .errors import ConfigurationError, DomainError, ParseError

PIXEL_MM = 0.05
CANVAS = 512
VIEWING_DISTANCE_CM = 80.0


@dataclass(frozen=True)
class GaussianPsf:
    c: float  # mm^-2

    def __post_init__(self):
        if not (self.c >= 0 and math.isfinite(self.c)):
            raise DomainError("PSF decay c must be finite and >= 0")

    def __call__(self, r):
        return np.exp(-self.c * np.asarray(r, dtype=float) ** 2)


@dataclass(frozen=True)
class ApertureConfig:
    a_i: float          # illumination diameter, mm
    a_d: float = 2.0    # detection diameter, mm

    def __post_init__(self):
        if not (self.a_i > 0 and self.a_d > 0):
            raise DomainError("aperture diameters must be positive")


A0 = ApertureConfig(2.0)   # a_d / a_i = 1
A1 = ApertureConfig(8.0)   # a_d / a_i = 1/4


def cycles_per_mm(f_cpd: float, viewing_distance_cm: float = VIEWING_DISTANCE_CM) -> float:
    """Spatial frequency on the sample plane for an angular frequency in cycles/degree."""
    mm_per_degree = viewing_distance_cm * 10.0 * math.tan(math.radians(1.0))
    return f_cpd / mm_per_degree


def cpd_to_psf_param(f_cpd: float, viewing_distance_cm: float = VIEWING_DISTANCE_CM) -> GaussianPsf:
    """PSF whose normalized MTF drops to 0.5 at ``f_cpd`` for the given viewing distance.

    The MTF of exp(-c r^2) is exp(-pi^2 rho^2 / c), so MTF(rho) = 1/2 gives
    c = pi^2 rho^2 / ln 2.
    """
    if f_cpd < 0 or not viewing_distance_cm > 0:
        raise DomainError("need f >= 0 and a positive viewing distance")
    rho = cycles_per_mm(f_cpd, viewing_distance_cm)
    return GaussianPsf(math.pi ** 2 * rho ** 2 / math.log(2.0))


def psf_family(n: int = 50, viewing_distance_cm: float = VIEWING_DISTANCE_CM):
    """PSFs with a 50 % MTF at 1, 2, ..., n cycles/degree."""
    return [cpd_to_psf_param(f, viewing_distance_cm) for f in range(1, n + 1)]


def psf_measurement(ap: ApertureConfig, psf: GaussianPsf) -> float:
    """m = (1/pi) * integral over the detection disk of (illumination disk * PSF).

    Swapping the order of integration leaves a single radial integral over
    the offset d between an illuminated and a detecting point,

        m = 2 * integral_0^{R_i + R_d} exp(-c d^2) * overlap(d) * d dd,

    where overlap(d) is the intersection area of the two disks with
    centers d apart.
    """
    r_i, r_d = ap.a_i / 2.0, ap.a_d / 2.0
    c = psf.c
    lo, hi = abs(r_i - r_d), r_i + r_d
    full = math.pi * min(r_i, r_d) ** 2
    # inner part (one disk inside the other): closed form
    if c == 0.0:
        inner = full * lo * lo
    else:
        inner = full * (-math.expm1(-c * lo * lo)) / c
    # beyond exp(-c d^2) < exp(-c lo^2 - 60) the integrand no longer matters; cutting there
    # keeps quad from stepping over a narrow peak
    top = hi if c == 0.0 else min(hi, math.sqrt(lo * lo + 60.0 / c))
    outer, _ = integrate.quad(lambda d: math.exp(-c * d * d) * disk_overlap(d, r_i, r_d) * d, lo, top,
                              epsabs=0.0, epsrel=1e-12, limit=200)
    return inner + 2.0 * outer


def edge_loss_factor(ap: ApertureConfig, psf: GaussianPsf) -> float:
    """Collected light relative to a sample without lateral transport.

    The PSF is normalized to unit energy (divided by pi/c) and compared
    with a perfect diffuser seen through the same apertures, so the
    factor is 1 for c -> infinity and falls toward 0 as the PSF widens.
    """
    if psf.c == 0.0:
        return 0.0
    ref = math.pi * min(ap.a_i, ap.a_d) ** 2 / 4.0 / math.pi
    # the exact value never exceeds 1; clip the last-bit rounding of very narrow PSFs
    return min(1.0, psf_measurement(ap, psf) * psf.c / math.pi / ref)


def edge_loss_lightness(psf: GaussianPsf, ap0: ApertureConfig = A0, ap1: ApertureConfig = A1) -> float:
    """|L*(a0) - L*(a1)| for one PSF."""
    return abs(factor_to_lightness(edge_loss_factor(ap0, psf)) - factor_to_lightness(edge_loss_factor(ap1, psf)))


def device_discrimination(psfs, ap0: ApertureConfig = A0, ap1: ApertureConfig = A1, threshold: float = 0.5):
    """Boolean matrix: True where two PSFs' edge-loss differences differ by more than ``threshold``."""
    if len(psfs) < 2:
        raise DomainError("need at least two PSFs")
    dl = np.array([edge_loss_lightness(p, ap0, ap1) for p in psfs])
    return np.abs(dl[:, None] - dl[None, :]) > threshold


# -- visual comparison ----------------------------------------------------

def read_csf_csv(path):
    """``cycles_per_degree,response`` rows with increasing frequencies."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["cycles_per_degree", "response"]:
        raise ParseError("expected header 'cycles_per_degree,response'", path, 1)
    f, r = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            a, b = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad row {row!r}", path, line) from None
        if b < 0 or (f and a <= f[-1]):
            raise ParseError("frequencies must increase and responses be >= 0", path, line)
        f.append(a)
        r.append(b)
    if len(f) < 2:
        raise ParseError("a CSF needs at least two rows", path)
    return np.array(f), np.array(r)


def _blur_image(psf: GaussianPsf, image: np.ndarray, pixel_mm: float) -> np.ndarray:
    if psf.c == 0.0:
        return np.full_like(image, image.mean())
    n = image.shape[0]
    fy = np.fft.fftfreq(n, d=pixel_mm)
    rho2 = fy[:, None] ** 2 + fy[None, :] ** 2
    mtf = np.exp(-math.pi ** 2 * rho2 / psf.c)  # unit-energy Gaussian
    return np.real(np.fft.ifft2(np.fft.fft2(image) * mtf))


def _csf_filter(image, csf, pixel_mm, viewing_distance_cm):
    f_tab, r_tab = csf
    n = image.shape[0]
    fy = np.fft.fftfreq(n, d=pixel_mm)
    rho = np.sqrt(fy[:, None] ** 2 + fy[None, :] ** 2)                # cycles/mm
    cpd = rho * viewing_distance_cm * 10.0 * math.tan(math.radians(1.0))
    h = np.interp(cpd, f_tab, r_tab, right=r_tab[-1]) / np.max(r_tab)
    h[0, 0] = 1.0  # keep the mean luminance
    return np.real(np.fft.ifft2(np.fft.fft2(image) * h))


def disk_image(diameter_mm: float = 8.0, pixel_mm: float = PIXEL_MM, size: int = CANVAS) -> np.ndarray:
    c = (np.arange(size) - size / 2 + 0.5) * pixel_mm
    return (c[:, None] ** 2 + c[None, :] ** 2 <= (diameter_mm / 2.0) ** 2).astype(float)


def hvs_blur_difference(psf_a: GaussianPsf, psf_b: GaussianPsf, csf=None, stimulus_mm: float = 8.0,
                        viewing_distance_cm: float = VIEWING_DISTANCE_CM, pixel_mm: float = PIXEL_MM,
                        size: int = CANVAS, floor: float = 1e-3) -> float:
    """Mean |Delta L*| between the two filtered disk images.

    The uniformly lit disk is blurred by each PSF (unit energy), filtered
    by the CSF (a ``(frequencies, responses)`` pair scaled to unit peak,
    zero-frequency gain forced to 1), clipped at 0 and converted to L*.
    The mean runs over pixels where either image exceeds ``floor`` L*.
    The canvas is zero-padded to twice its size to avoid wrap-around.
    """
    if csf is None:
        raise ConfigurationError("a contrast-sensitivity table is required (cycles_per_degree,response)")
    img = disk_image(stimulus_mm, pixel_mm, size)
    pad = np.zeros((2 * size, 2 * size))
    o = size // 2
    pad[o:o + size, o:o + size] = img
    out = []
    for psf in (psf_a, psf_b):
        y = _csf_filter(_blur_image(psf, pad, pixel_mm), csf, pixel_mm, viewing_distance_cm)
        out.append(factor_to_lightness(np.clip(y[o:o + size, o:o + size], 0.0, None)))
    la, lb = out
    mask = (la > floor) | (lb > floor)
    if not np.any(mask):
        return 0.0
    return float(np.mean(np.abs(la - lb)[mask]))


def hvs_discrimination(psfs, csf, threshold: float = 1.0, **kw):
    """Boolean matrix: True where the mean lightness difference reaches ``threshold``."""
    n = len(psfs)
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = hvs_blur_difference(psfs[i], psfs[j], csf, **kw) >= threshold
    return out


def write_matrix_csv(path_or_file, matrix, labels):
    """Square matrix with a label header row and label column."""
    m = np.asarray(matrix)
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + [str(x) for x in labels])
        for lab, row in zip(labels, m):
            w.writerow([str(lab)] + [str(int(v)) if m.dtype == bool else repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()
