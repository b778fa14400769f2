"""Assigning A to measured materials and retrieving reference materials from RGBA.

Measuring: find the reference material on the 0.1 cm^-1 lattice whose
interpolated transmittance lightness and edge-loss difference are
closest to the measurement, among those whose reflectance lightness is
within ``d`` of it.

Retrieval: for a requested A and reflectance lightness, return a
reference material with that A whose reflectance lightness is closest
to the requested one. A precomputed table makes this a constant-time
lookup.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba
import numpy as np
from numba import njit, prange

from .alpha_model import (
    ALPHA_CLAMP, DEFAULT_PARAMS, AlphaParams, AlphaValue, ReferenceMaterial, alpha_from_coefficients,
    attenuation_from_alpha,
)
from .colorimetry import N_BANDS, Spectrum, _parse_spectrum_rows, spectrum_lightness, srgb_lightness
from .errors import DomainError, InfeasibleError, ParseError
from .material_tables import MaterialTable, _require_complete, bilerp, cell_index

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe, which warns on older TBB installs
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

LATTICE_STEP = 0.1
LATTICE_MAX = 2500.0
BLOCKS = ("reflectance_white", "reflectance_a0_black", "reflectance_a1_black", "transmittance")


@dataclass(frozen=True)
class MeasuredSample:
    L_R_m: float
    L_T_m: float
    dL01_m: float
    spectra: Optional[dict] = None

    def __post_init__(self):
        if not (0 <= self.L_R_m <= 100 and 0 <= self.L_T_m <= 100):
            raise DomainError("measured lightnesses must lie in [0, 100]")
        if not self.dL01_m >= 0:
            raise DomainError("edge-loss difference must be non-negative")

    @classmethod
    def from_triple(cls, t) -> "MeasuredSample":
        return cls(float(t.L_R), float(t.L_T), float(t.dL01))


@dataclass(frozen=True)
class MeasureResult:
    sigma_a_m: float
    sigma_s_m: float
    alpha: AlphaValue
    objective: float
    constraint_slack: float

    @property
    def material(self) -> ReferenceMaterial:
        return ReferenceMaterial(self.sigma_a_m, self.sigma_s_m)


# -- lattice scan ---------------------------------------------------------

def _lattice_axis(axis: np.ndarray, hi: float):
    top = min(float(axis[-1]), hi)
    n = int(math.floor(top / LATTICE_STEP + 1e-9)) + 1
    vals = np.arange(n) / 10.0  # k/10 is the correctly rounded lattice value
    idx = np.empty(n, dtype=np.int64)
    t = np.empty(n)
    for k, v in enumerate(vals):
        idx[k], t[k] = cell_index(axis, v)
    return vals, idx, t


@njit(cache=True, inline="always")
def _better(o1, s1, a1, o2, s2, a2):
    # lexicographic (objective, modified attenuation, sigma_a)
    if o1 != o2:
        return o1 < o2
    if s1 != s2:
        return s1 < s2
    return a1 < a2


@njit(cache=True, parallel=True)
def _scan(vals, a_vals, a_idx, a_t, s_vals, s_idx, s_t, lr_m, lt_m, d_m, tol, p):
    na = a_vals.shape[0]
    ns_grid = vals.shape[1]
    # per-row winners; reduced serially below so ties resolve the same way for any thread count
    row_obj = np.full(na, np.inf)
    row_l = np.full(na, -1, dtype=np.int64)
    row_slack = np.full(na, np.inf)
    row_sl = np.full(na, -1, dtype=np.int64)
    for k in prange(na):
        i = a_idx[k]
        ta = a_t[k]
        rr = np.empty(ns_grid)
        rt = np.empty(ns_grid)
        rd = np.empty(ns_grid)
        for j in range(ns_grid):
            rr[j] = vals[i, j, 0] * (1.0 - ta) + vals[i + 1, j, 0] * ta
            rt[j] = vals[i, j, 1] * (1.0 - ta) + vals[i + 1, j, 1] * ta
            rd[j] = vals[i, j, 2] * (1.0 - ta) + vals[i + 1, j, 2] * ta
        sa = a_vals[k]
        best_o, best_s, best_l = np.inf, np.inf, -1
        slk_o, slk_s, slk_l = np.inf, np.inf, -1
        for l in range(s_vals.shape[0]):
            j = s_idx[l]
            ts = s_t[l]
            lr = rr[j] * (1.0 - ts) + rr[j + 1] * ts
            slack = abs(lr - lr_m)
            st = p * sa + s_vals[l]
            if _better(slack, st, sa, slk_o, slk_s, sa):
                slk_o, slk_s, slk_l = slack, st, l
            if slack > tol:
                continue
            lt = rt[j] * (1.0 - ts) + rt[j + 1] * ts
            dd = rd[j] * (1.0 - ts) + rd[j + 1] * ts
            obj = (lt - lt_m) ** 2 + (dd - d_m) ** 2
            if _better(obj, st, sa, best_o, best_s, sa):
                best_o, best_s, best_l = obj, st, l
        row_obj[k], row_l[k] = best_o, best_l
        row_slack[k], row_sl[k] = slk_o, slk_l
    return row_obj, row_l, row_slack, row_sl


def _reduce(row_val, row_l, a_vals, s_vals, p):
    best = None
    for k in range(a_vals.size):
        l = row_l[k]
        if l < 0:
            continue
        key = (row_val[k], p * a_vals[k] + s_vals[l], a_vals[k])
        if best is None or key < best[0]:
            best = (key, k, l)
    return best


def measure_alpha(m: MeasuredSample, table: MaterialTable, d: float = 2.0,
                  params: AlphaParams = DEFAULT_PARAMS, upper: float = LATTICE_MAX) -> MeasureResult:
    """Exhaustive search over the 0.1 cm^-1 lattice of [0, upper]^2 (clipped to the table).

    Minimizes (L_T - L_T_m)^2 + (dL01 - dL01_m)^2 subject to
    |L_R - L_R_m| <= d. Ties go to the smaller p*sa + ss, then the
    smaller sa. Raises :class:`InfeasibleError` carrying the point of
    smallest slack when nothing satisfies the constraint.
    """
    if not d > 0:
        raise DomainError("lightness tolerance d must be positive")
    _require_complete(table)
    a_vals, a_idx, a_t = _lattice_axis(table.grid.sigma_a, upper)
    s_vals, s_idx, s_t = _lattice_axis(table.grid.sigma_s, upper)
    row_obj, row_l, row_slack, row_sl = _scan(table.values, a_vals, a_idx, a_t, s_vals, s_idx, s_t,
                                              float(m.L_R_m), float(m.L_T_m), float(m.dL01_m), float(d),
                                              float(params.p))
    best = _reduce(row_obj, row_l, a_vals, s_vals, params.p)
    if best is None:
        _, k, l = _reduce(row_slack, row_sl, a_vals, s_vals, params.p)
        sa, ss, slack = float(a_vals[k]), float(s_vals[l]), float(row_slack[k])
        raise InfeasibleError(f"no reference material has L_R within {d} of {m.L_R_m}; "
                              f"closest is ({sa}, {ss}) at {slack:.3f}", best=(sa, ss, slack))
    (obj, _, _), k, l = best
    sa, ss = float(a_vals[k]), float(s_vals[l])
    lr = bilerp(table.values[:, :, 0], a_idx[k], s_idx[l], a_t[k], s_t[l])
    a = min(float(alpha_from_coefficients((sa, ss), params)), ALPHA_CLAMP)
    return MeasureResult(sa, ss, AlphaValue(a), float(obj), float(abs(lr - m.L_R_m)))


# -- inverse lookup -------------------------------------------------------

class LutHit(NamedTuple):
    material: ReferenceMaterial
    alpha_level: int
    lightness: float        # reflectance lightness of the returned material
    distance: float         # |requested - returned| lightness
    exact_level: bool       # False when the requested A row was empty


@dataclass
class InverseLut:
    sigma_a: np.ndarray       # (a_levels, n_l)
    sigma_s: np.ndarray
    lightness: np.ndarray     # achieved L_R, NaN where unpopulated
    populated: np.ndarray     # bool
    nearest: np.ndarray       # (a_levels, n_l) column of the nearest populated entry in the row, -1 if none
    row_fallback: np.ndarray  # (a_levels,) nearest level with any populated entry
    alpha_targets: np.ndarray
    l_step: float
    params: AlphaParams

    @property
    def a_levels(self) -> int:
        return self.sigma_a.shape[0]

    def lookup(self, a: float, lightness: float) -> LutHit:
        """Constant-time: two index computations and three array reads."""
        n = self.a_levels - 1
        i = int(min(n, max(0, round(float(a) * n))))
        exact = True
        if self.nearest[i, 0] < 0:
            i = int(self.row_fallback[i])
            exact = False
        c = int(min(self.sigma_a.shape[1] - 1, max(0, round(float(lightness) / self.l_step))))
        c = int(self.nearest[i, c])
        got = float(self.lightness[i, c])
        return LutHit(ReferenceMaterial(float(self.sigma_a[i, c]), float(self.sigma_s[i, c])),
                      i, got, abs(got - float(lightness)), exact)


def _line_bounds(S, p, a_max, s_max):
    if p > 0:
        lo = max(0.0, (S - s_max) / p)
        hi = min(a_max, S / p)
    else:
        if S > s_max:
            return None
        lo, hi = 0.0, a_max
    return (lo, hi) if lo <= hi else None


def _eval_lr(table, sa, ss, i, j):
    ga, gs = table.grid.sigma_a, table.grid.sigma_s
    ta = (sa - ga[i]) / (ga[i + 1] - ga[i])
    ts = (ss - gs[j]) / (gs[j + 1] - gs[j])
    return bilerp(table.values[:, :, 0], i, j, ta, ts)


def _trace_row(table, S, p, levels, tol):
    """Points on the line p*sa + ss = S hitting each lightness level (or within ``tol`` of it)."""
    ga, gs = table.grid.sigma_a, table.grid.sigma_s
    bounds = _line_bounds(S, p, ga[-1], gs[-1])
    n_l = levels.size
    out_a = np.full(n_l, np.nan)
    out_s = np.full(n_l, np.nan)
    out_l = np.full(n_l, np.nan)
    if bounds is None:
        return out_a, out_s, out_l
    lo, hi = bounds

    def ss_of(t):
        return min(gs[-1], max(0.0, S - p * t))

    if hi - lo <= 0.0:
        segs = [(lo, lo)]
    else:
        brk = {lo, hi}
        brk.update(float(g) for g in ga if lo < g < hi)
        if p > 0:
            brk.update(float((S - g) / p) for g in gs if lo < (S - g) / p < hi)
        pts = sorted(brk)
        segs = list(zip(pts[:-1], pts[1:]))

    best_gap = np.full(n_l, np.inf)
    for t0, t1 in segs:
        tm = 0.5 * (t0 + t1)
        i, _ = cell_index(ga, tm)
        j, _ = cell_index(gs, ss_of(tm))
        L0 = _eval_lr(table, t0, ss_of(t0), i, j)
        Lm = _eval_lr(table, tm, ss_of(tm), i, j)
        L1 = _eval_lr(table, t1, ss_of(t1), i, j)
        # bilinear along a straight line is quadratic in the line parameter
        qa = 2.0 * (L0 - 2.0 * Lm + L1)
        qb = L1 - L0 - qa
        us = [0.0, 1.0]
        if qa != 0.0 and 0.0 < -qb / (2.0 * qa) < 1.0:
            us.append(-qb / (2.0 * qa))
        ext = [L0 + u * (qb + u * qa) for u in us]
        lmin, lmax = min(ext), max(ext)
        sel = np.nonzero((levels >= lmin - tol) & (levels <= lmax + tol))[0]
        for c in sel:
            target = levels[c]
            if best_gap[c] == 0.0:
                continue  # an earlier (smaller sa) segment already hits this level
            u = _solve_segment(qa, qb, L0, target, lmin, lmax, us, ext)
            t = t0 + u * (t1 - t0)
            sa, ss = t, ss_of(t)
            got = _eval_lr(table, sa, ss, i, j)
            gap = abs(got - target)
            if gap < best_gap[c]:
                best_gap[c] = 0.0 if lmin <= target <= lmax else gap
                out_a[c], out_s[c], out_l[c] = sa, ss, got
    return out_a, out_s, out_l


def _solve_segment(qa, qb, qc, target, lmin, lmax, us, ext):
    if target <= lmin or target >= lmax:
        # at or beyond an extreme: use the extreme point itself
        k = int(np.argmin(ext)) if target <= lmin else int(np.argmax(ext))
        return us[k]
    c = qc - target
    if abs(qa) < 1e-14 * max(1.0, abs(qb)):
        return min(1.0, max(0.0, -c / qb))
    disc = max(0.0, qb * qb - 4.0 * qa * c)
    r = math.sqrt(disc)
    q = -0.5 * (qb + math.copysign(r, qb))
    roots = [u for u in ((q / qa) if qa else np.inf, (c / q) if q else np.inf) if -1e-12 <= u <= 1 + 1e-12]
    return min(1.0, max(0.0, min(roots))) if roots else 0.0


def build_inverse_lut(table: MaterialTable, params: AlphaParams = DEFAULT_PARAMS, a_levels: int = 256,
                      l_step: float = 0.1) -> InverseLut:
    """Tabulate (A level, reflectance lightness level) -> (sigma_a, sigma_s).

    For A level i the iso-A line p*sa + ss = const is traced through
    the table cell by cell; along it the interpolated reflectance
    lightness is an exact quadratic per cell, so each lightness level is
    hit by solving that quadratic. An entry is populated when the point
    found lies within ``l_step`` of its level. The top level (A = 1) is
    unattainable and uses the lower edge of its quantization bin instead.
    """
    _require_complete(table)
    n_l = int(round(100.0 / l_step)) + 1
    levels = np.arange(n_l) * l_step
    top = a_levels - 1
    targets = np.arange(a_levels) / top
    targets[-1] = 1.0 - 0.5 / top
    sa = np.full((a_levels, n_l), np.nan)
    ss = np.full((a_levels, n_l), np.nan)
    ll = np.full((a_levels, n_l), np.nan)
    for i, a in enumerate(targets):
        S = float(attenuation_from_alpha(a, params))
        sa[i], ss[i], ll[i] = _trace_row(table, S, params.p, levels, l_step)
    populated = np.abs(ll - levels[None, :]) <= l_step + 1e-9
    sa[~populated] = ss[~populated] = ll[~populated] = np.nan
    nearest = np.full((a_levels, n_l), -1, dtype=np.int64)
    for i in range(a_levels):
        cols = np.nonzero(populated[i])[0]
        if cols.size:
            pos = np.searchsorted(cols, np.arange(n_l))
            left = cols[np.clip(pos - 1, 0, cols.size - 1)]
            right = cols[np.clip(pos, 0, cols.size - 1)]
            # ties go to the darker entry
            nearest[i] = np.where(np.abs(np.arange(n_l) - left) <= np.abs(right - np.arange(n_l)), left, right)
    has = np.nonzero(nearest[:, 0] >= 0)[0]
    if has.size == 0:
        raise DomainError("no A level intersects the table")
    fallback = has[np.argmin(np.abs(np.arange(a_levels)[:, None] - has[None, :]), axis=1)]
    return InverseLut(sa, ss, ll, populated, nearest, fallback, targets, l_step, params)


def retrieve(rgb, a, lut: InverseLut) -> LutHit:
    """Reference material for an RGBA color; only the D50 lightness of ``rgb`` matters."""
    return lut.lookup(float(a), srgb_lightness(rgb))


def retrieve_reference_material(rgb, a, lut: InverseLut) -> ReferenceMaterial:
    return retrieve(rgb, a, lut).material


# -- measurement files ----------------------------------------------------

def read_measurement_csv(path) -> dict:
    """Read the four measured spectra from a ``block,wavelength_nm,value`` CSV.

    Each block lists 36 factors on the 380-730 nm / 10 nm lattice in order.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["block", "wavelength_nm", "value"]:
        raise ParseError("expected header 'block,wavelength_nm,value'", path, 1)
    blocks, starts = {}, {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        name = row[0].strip()
        if name not in BLOCKS:
            raise ParseError(f"unknown block {name!r}", path, lineno)
        blocks.setdefault(name, []).append([c.strip() for c in row[1:]])
        starts.setdefault(name, lineno)
    spectra = {}
    for name in BLOCKS:
        if name not in blocks:
            raise ParseError(f"missing block {name!r}", path)
        if len(blocks[name]) != N_BANDS:
            raise ParseError(f"block {name!r} has {len(blocks[name])} rows, expected {N_BANDS}", path,
                             starts[name])
        spectra[name] = Spectrum(_parse_spectrum_rows(blocks[name], path, starts[name]))
    return spectra


def sample_from_spectra(spectra: dict) -> MeasuredSample:
    """Lightness triple from measured factor spectra (D50, 2-degree observer).

    Measured factors can exceed the reference slightly; lightnesses are
    capped at 100 for L_R and L_T, while the edge-loss difference uses
    the uncapped values.
    """
    L = {k: spectrum_lightness(spectra[k]) for k in BLOCKS}
    return MeasuredSample(min(L["reflectance_white"], 100.0), min(L["transmittance"], 100.0),
                          abs(L["reflectance_a0_black"] - L["reflectance_a1_black"]), spectra)


def write_result_csv(path_or_file, results):
    """``sigma_a,sigma_s,A,objective,slack`` with one row per result."""
    import os
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_a", "sigma_s", "A", "objective", "slack"])
        for r in results:
            w.writerow([repr(r.sigma_a_m), repr(r.sigma_s_m), repr(float(r.alpha)),
                        repr(r.objective), repr(r.constraint_slack)])
    finally:
        if own:
            fh.close()
