"""Constant-stimuli analysis and fitting of the (p, q) model parameters.

Each trial asks whether a test pair looks more different in translucency
than the anchor pair. Responses are filtered to be monotone in the
distance of the test sample from the center, a cumulative normal is
fitted by maximum likelihood, and its 50 % point (T50) is the distance
judged equal to the anchor difference. Pairs at T50 feed the fit of
(p, q), which equalizes Delta A across all such pairs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats

from .alpha_model import DEFAULT_PARAMS, AlphaParams, alpha_from_coefficients
from .errors import ConvergenceError, DomainError, NonIdentifiableError, ParseError

DIRECTIONS = ("increasing", "decreasing")
P_BOUNDS = (0.0, 5.0)
Q_BOUNDS = (0.0, 3.0)     # q = 0 itself is excluded
GRID_SIZE = 51


@dataclass(frozen=True)
class TrialSeries:
    """Binary responses of several observers at ordered distances from the center sample.

    ``responses[o, k]`` is 1 when observer ``o`` judged the test pair at
    ``levels[k]`` more different than the anchor pair.
    """

    direction: str
    levels: np.ndarray
    responses: np.ndarray
    observers: tuple = ()

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise DomainError(f"direction must be one of {DIRECTIONS}")
        lv = np.array(self.levels, dtype=float)
        r = np.array(self.responses)
        if r.ndim == 1:
            r = r[None, :]
        if lv.ndim != 1 or lv.size < 2:
            raise DomainError("a series needs at least two levels")
        d = np.diff(lv)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise DomainError("levels must be strictly ordered")
        if r.shape[1] != lv.size or not np.all(np.isin(r, (0, 1))):
            raise DomainError("responses must be 0/1 with one column per level")
        lv.setflags(write=False)
        r = r.astype(np.int8)
        r.setflags(write=False)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "responses", r)
        if not self.observers:
            object.__setattr__(self, "observers", tuple(str(i) for i in range(r.shape[0])))

    def counts(self):
        """(levels, yes counts, trial counts) pooled over observers."""
        return self.levels, self.responses.sum(axis=0).astype(float), np.full(self.levels.size, float(self.responses.shape[0]))


# -- monotone filter ------------------------------------------------------

def _monotone_projection(seq: np.ndarray, ascending: bool) -> np.ndarray:
    """Nearest step sequence (0 near the center, 1 far away) under Hamming distance.

    ``ascending`` tells whether positions run from near to far. Among
    equally near candidates the one agreeing with ``seq`` at the latest
    position where the candidates differ wins.
    """
    n = seq.size
    best, best_d = None, None
    for m in range(n + 1):
        # m zeros followed by ones in near -> far order
        cand = np.r_[np.zeros(m, np.int8), np.ones(n - m, np.int8)]
        if not ascending:
            cand = cand[::-1]
        d = int(np.sum(cand != seq))
        if best is None or d < best_d:
            best, best_d = cand, d
        elif d == best_d:
            diff = np.nonzero(cand != best)[0]
            last = diff[-1]
            if cand[last] == seq[last]:
                best = cand
    return best


def monotone_filter(series: TrialSeries) -> TrialSeries:
    """Replace each observer's responses by the nearest monotone sequence.

    Monotone means "larger" judgments never become more frequent as the
    test sample approaches the center.
    """
    ascending = bool(series.levels[-1] > series.levels[0])
    out = np.array([_monotone_projection(np.asarray(r), ascending) for r in series.responses])
    return TrialSeries(series.direction, series.levels, out, series.observers)


# -- probit ---------------------------------------------------------------

@dataclass(frozen=True)
class ProbitResult:
    mu: float
    sigma: float
    t50: float
    chi2: float
    dof: int
    passed: bool
    p_value: float = float("nan")


def probit_fit_counts(levels, k, n, alpha: float = 0.05) -> ProbitResult:
    """Maximum-likelihood fit of P(yes) = Phi((x - mu) / sigma) to pooled counts.

    Counts may be fractional (expected-count fixtures). The Pearson chi^2
    uses dof = levels - 2 and the fit passes when its p-value exceeds
    ``alpha``; with fewer than three levels there is nothing to test and
    the fit does not pass.
    """
    x = np.asarray(levels, dtype=float)
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise NonIdentifiableError("need at least two distinct levels")
    if k.sum() <= 0 or k.sum() >= n.sum():
        raise NonIdentifiableError("all responses identical; the psychometric function is not identifiable")

    def nll(theta):
        mu, log_s = theta
        z = (x - mu) / math.exp(log_s)
        return -np.sum(k * stats.norm.logcdf(z) + (n - k) * stats.norm.logsf(z))

    # start from a least-squares line through the probit-transformed proportions
    p = np.clip(k / n, 0.01, 0.99)
    slope, icpt = np.polyfit(x, stats.norm.ppf(p), 1)
    if slope <= 0:
        mu0, s0 = float(np.mean(x)), float(np.ptp(x)) or 1.0
    else:
        mu0, s0 = -icpt / slope, 1.0 / slope
    res = optimize.minimize(nll, [mu0, math.log(s0)], method="Nelder-Mead",
                            options=dict(xatol=1e-10, fatol=1e-12, maxiter=20000, maxfev=40000))
    mu, sigma = float(res.x[0]), float(math.exp(res.x[1]))
    span = float(np.ptp(x))
    if not res.success or not np.isfinite(mu) or sigma < 1e-6 * span or sigma > 1e6 * span:
        raise ConvergenceError(f"probit fit did not converge (mu={mu:.4g}, sigma={sigma:.4g}): {res.message}")
    expected = n * stats.norm.cdf((x - mu) / sigma)
    var = expected * (1.0 - expected / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(var > 0, (k - expected) ** 2 / var, 0.0)
    chi2 = float(np.sum(terms))
    dof = int(x.size - 2)
    if dof >= 1:
        pv = float(stats.chi2.sf(chi2, dof))
        passed = pv > alpha
    else:
        pv, passed = float("nan"), False
    return ProbitResult(mu, sigma, mu, chi2, dof, passed, pv)


def probit_fit(series: TrialSeries, alpha: float = 0.05) -> ProbitResult:
    return probit_fit_counts(*series.counts(), alpha=alpha)


# -- STRESS ---------------------------------------------------------------

def stress(dT, dV) -> float:
    """Standardized residual sum of squares between computed and visual differences.

    STRESS = 100 * sqrt(sum (dT - G dV)^2 / sum G^2 dV^2) with
    G = sum dT^2 / sum dT dV; 0 is perfect agreement.
    """
    t = np.asarray(dT, dtype=float)
    v = np.asarray(dV, dtype=float)
    if t.shape != v.shape or t.ndim != 1 or t.size < 1:
        raise DomainError("dT and dV need equal, non-zero lengths")
    tv = float(np.dot(t, v))
    tt = float(np.dot(t, t))
    if tv == 0.0 or tt == 0.0:
        raise DomainError("degenerate STRESS: sum dT*dV or sum dT^2 is zero")
    g = tt / tv
    den = float(np.sum((g * v) ** 2))
    num = float(np.sum((t - g * v) ** 2))
    return 100.0 * math.sqrt(min(1.0, num / den))


def f_critical(n: int, confidence: float = 0.95) -> float:
    """Lower critical value of the two-tailed F test with (n-1, n-1) dof."""
    return float(stats.f.ppf((1.0 - confidence) / 2.0, n - 1, n - 1))


def f_test_stress(stress_x: float, stress_y: float, n: int, confidence: float = 0.95) -> str:
    """'better' if X is significantly better than Y, 'poorer' if worse, else 'insignificant'."""
    if not (stress_x > 0 and stress_y > 0):
        raise DomainError("STRESS values must be positive")
    if n < 2:
        raise DomainError("need at least two pairs")
    f = (stress_x / stress_y) ** 2
    fc = f_critical(n, confidence)
    if f < fc:
        return "better"
    if f > 1.0 / fc:
        return "poorer"
    return "insignificant"


# -- model fit ------------------------------------------------------------

@dataclass(frozen=True)
class VisualPairSet:
    """Material pairs judged as different as the anchor pair.

    ``pairs`` is an (n, 4) array of (sa1, ss1, sa2, ss2); row ``anchor``
    is the anchor pair.
    """

    pairs: np.ndarray
    anchor: int = 0

    def __post_init__(self):
        p = np.array(self.pairs, dtype=float).reshape(-1, 4)
        if p.shape[0] < 1 or not (0 <= self.anchor < p.shape[0]):
            raise DomainError("pair set must contain its anchor")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("coefficients must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    def __len__(self):
        return self.pairs.shape[0]

    def without(self, k: int) -> "VisualPairSet":
        if k == self.anchor:
            raise DomainError("cannot drop the anchor pair")
        keep = np.delete(self.pairs, k, axis=0)
        return VisualPairSet(keep, self.anchor - (1 if k < self.anchor else 0))


def delta_alpha(pairs: np.ndarray, p: float, q: float, c: float = DEFAULT_PARAMS.c) -> np.ndarray:
    """|A(m1) - A(m2)| per pair under (p, q)."""
    prm = AlphaParams(p, q, c)
    a1 = alpha_from_coefficients((pairs[:, 0], pairs[:, 1]), prm)
    a2 = alpha_from_coefficients((pairs[:, 2], pairs[:, 3]), prm)
    return np.abs(np.asarray(a1) - np.asarray(a2))


def fit_objective(v: VisualPairSet, p: float, q: float, c: float = DEFAULT_PARAMS.c) -> float:
    d = delta_alpha(v.pairs, p, q, c)
    return float(np.sum((d - d[v.anchor]) ** 2))


@dataclass(frozen=True)
class FitResult:
    p: float
    q: float
    objective: float
    stress: float
    degenerate: bool = False
    grid_best: tuple = field(default=(), compare=False)

    @property
    def params(self) -> AlphaParams:
        return AlphaParams(self.p, self.q)


def model_stress(v: VisualPairSet, p: float, q: float, c: float = DEFAULT_PARAMS.c) -> float:
    """STRESS with the anchor's Delta A as the computed and each pair's Delta A as the visual difference."""
    d = delta_alpha(v.pairs, p, q, c)
    return stress(np.full(d.size, d[v.anchor]), d)


def fit_psychometric_params(v: VisualPairSet, params0: AlphaParams = DEFAULT_PARAMS) -> FitResult:
    """Minimize sum_t (Delta A(t) - Delta A(anchor))^2 over p in [0, 5], q in (0, 3].

    A 51 x 51 grid locates the basin, then a bounded Nelder-Mead simplex
    refines it. ``params0`` supplies c and an extra starting candidate. A
    set holding only the anchor is flat (objective 0 everywhere) and is
    returned as ``params0`` with ``degenerate`` set.
    """
    c = params0.c
    if len(v) < 2:
        return FitResult(params0.p, params0.q, 0.0, 0.0, degenerate=True)
    ps = np.linspace(*P_BOUNDS, GRID_SIZE)
    qs = np.linspace(*Q_BOUNDS, GRID_SIZE + 1)[1:]
    grid = np.array([[fit_objective(v, p, q, c) for q in qs] for p in ps])
    if not np.all(np.isfinite(grid)):
        raise DomainError("fit objective is not finite on the search grid")
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    start = np.array([ps[i], qs[j]])
    g_best = (float(ps[i]), float(qs[j]), float(grid[i, j]))
    if fit_objective(v, params0.p, params0.q, c) < grid[i, j]:
        start = np.array([params0.p, params0.q])
    q_lo = 1e-6

    def f(x):
        val = fit_objective(v, float(x[0]), float(x[1]), c)
        if not np.isfinite(val):
            raise DomainError(f"fit objective is not finite at p={x[0]}, q={x[1]}")
        return val

    res = optimize.minimize(f, start, method="Nelder-Mead", bounds=[P_BOUNDS, (q_lo, Q_BOUNDS[1])],
                            options=dict(xatol=1e-9, fatol=1e-16, maxiter=4000, maxfev=8000))
    p, q = float(res.x[0]), float(res.x[1])
    obj = float(res.fun)
    flat = bool(np.ptp(grid) == 0.0)
    try:
        s = model_stress(v, p, q, c)
    except DomainError:
        s = float("nan")
    return FitResult(p, q, obj, s, degenerate=flat, grid_best=g_best)


@dataclass(frozen=True)
class LooResult:
    disagreement: tuple   # (mean, std, max) of held-out |Delta A(t) - Delta A(anchor)|
    p_range: tuple        # (min, mean, max)
    q_range: tuple
    folds: tuple          # (held-out index, FitResult, disagreement) per fold


def loo_cross_validation(v: VisualPairSet, params0: AlphaParams = DEFAULT_PARAMS) -> LooResult:
    """Refit with each non-anchor pair held out and score the held-out pair."""
    if len(v) < 3:
        raise NonIdentifiableError("leave-one-out needs at least three pairs (anchor + two)")
    folds = []
    for k in range(len(v)):
        if k == v.anchor:
            continue
        fit = fit_psychometric_params(v.without(k), params0)
        d = delta_alpha(v.pairs, fit.p, fit.q, params0.c)
        folds.append((k, fit, float(abs(d[k] - d[v.anchor]))))
    dis = np.array([f[2] for f in folds])
    ps = np.array([f[1].p for f in folds])
    qs = np.array([f[1].q for f in folds])
    return LooResult((float(dis.mean()), float(dis.std()), float(dis.max())),
                     (float(ps.min()), float(ps.mean()), float(ps.max())),
                     (float(qs.min()), float(qs.mean()), float(qs.max())), tuple(folds))


# -- files ----------------------------------------------------------------

def _read_rows(path, header):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise ParseError(f"expected header {','.join(header)!r}", path, 1)
    return [(i, [c.strip() for c in r]) for i, r in enumerate(rows[1:], start=2) if r and "".join(r).strip()]


def read_trials_csv(path) -> dict:
    """``observer,direction,level,response`` -> {direction: TrialSeries}.

    Every observer must answer every level of a direction exactly once.
    """
    data = {}
    for line, r in _read_rows(path, ["observer", "direction", "level", "response"]):
        if len(r) != 4:
            raise ParseError("expected 4 columns", path, line)
        obs, direction = r[0], r[1]
        if direction not in DIRECTIONS:
            raise ParseError(f"unknown direction {direction!r}", path, line)
        try:
            level = float(r[2])
            resp = int(r[3])
        except ValueError:
            raise ParseError(f"bad level or response in {r!r}", path, line) from None
        if resp not in (0, 1):
            raise ParseError("response must be 0 or 1", path, line)
        cell = data.setdefault(direction, {}).setdefault(obs, {})
        if level in cell:
            raise ParseError(f"duplicate response for observer {obs!r} at level {level:g}", path, line)
        cell[level] = resp
    out = {}
    for direction, by_obs in data.items():
        levels = sorted({lv for d in by_obs.values() for lv in d})
        obs = sorted(by_obs)
        for o in obs:
            if sorted(by_obs[o]) != levels:
                raise ParseError(f"observer {o!r} ({direction}) does not cover every level", path)
        resp = np.array([[by_obs[o][lv] for lv in levels] for o in obs])
        out[direction] = TrialSeries(direction, np.array(levels), resp, tuple(obs))
    return out


def read_pairs_csv(path) -> VisualPairSet:
    """``sa1,ss1,sa2,ss2,is_anchor`` with exactly one anchor row."""
    pairs, anchor = [], None
    for line, r in _read_rows(path, ["sa1", "ss1", "sa2", "ss2", "is_anchor"]):
        if len(r) != 5:
            raise ParseError("expected 5 columns", path, line)
        try:
            vals = [float(x) for x in r[:4]]
            flag = int(r[4])
        except ValueError:
            raise ParseError(f"non-numeric value in {r!r}", path, line) from None
        if flag not in (0, 1):
            raise ParseError("is_anchor must be 0 or 1", path, line)
        if flag:
            if anchor is not None:
                raise ParseError("more than one anchor pair", path, line)
            anchor = len(pairs)
        pairs.append(vals)
    if anchor is None:
        raise ParseError("no anchor pair (is_anchor = 1)", path)
    return VisualPairSet(np.array(pairs), anchor)


def fit_report_text(fit: FitResult, baseline: Optional[FitResult] = None, n: Optional[int] = None) -> str:
    lines = [f"p = {fit.p:.4f}", f"q = {fit.q:.4f}", f"objective = {fit.objective:.6g}",
             f"STRESS = {fit.stress:.2f}"]
    if fit.degenerate:
        lines.append("degenerate: objective is flat (anchor only)")
    if baseline is not None and n is not None and fit.stress > 0 and baseline.stress > 0:
        verdict = f_test_stress(fit.stress, baseline.stress, n)
        lines.append(f"vs (p, q) = ({baseline.p:g}, {baseline.q:g}): STRESS {baseline.stress:.2f}, {verdict}")
    return "\n".join(lines) + "\n"


def write_fit_csv(path_or_file, fit: FitResult):
    import os
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "q", "objective", "stress", "degenerate"])
        w.writerow([repr(fit.p), repr(fit.q), repr(fit.objective), repr(fit.stress), int(fit.degenerate)])
    finally:
        if own:
            fh.close()
