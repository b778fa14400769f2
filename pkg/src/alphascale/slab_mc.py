"""Virtual spectrophotometer: Monte-Carlo transport through a slab sample.

Three measurements are reproduced on a laterally infinite slab:

* 45/0 reflectance with concentric circular illumination and detection
  disks and a black or white backing in optical contact with the rear face;
* d/0 transmittance relative to the empty (air) path.

Reflectance is scored with a next-event estimator toward a narrow cone
about the normal and normalized by a perfect diffuser measured with the
same apertures. Transmittance uses reciprocity: d/0 equals the total
transmittance of a collimated normal beam, which keeps the estimator
cheap and makes the air baseline exactly 1. A ``direct`` estimator
(diffuse illumination, next-event toward the normal) is kept as a
cross-check.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _mc_kernel as K
from .alpha_model import REFRACTIVE_INDEX, ReferenceMaterial
from .colorimetry import (
    Spectrum, cie1931_observer, factor_to_lightness, illuminant, lightness_slope,
)
from .errors import ConfigurationError, DomainError
from .kvconfig import parse_kv_file

REFLECTANCE_45_0 = "reflectance_45_0"
TRANSMITTANCE_D0 = "transmittance_d0"
MODES = (REFLECTANCE_45_0, TRANSMITTANCE_D0)
BACKINGS = ("black", "white", "none")

DEFAULT_CHUNK = 4096
MAX_EVENTS = 50_000_000


def fresnel_reflectance(n_in: float, n_out: float, cos_theta: float) -> float:
    """Unpolarized Fresnel reflectance; 1 beyond the critical angle."""
    if n_in < 1 or n_out < 1:
        raise DomainError("refractive indices must be >= 1")
    if not 0.0 <= cos_theta <= 1.0:
        raise DomainError("cos_theta must lie in [0, 1]")
    return float(K.fresnel(float(n_in), float(n_out), float(cos_theta)))


@dataclass(frozen=True)
class SlabSample:
    material: ReferenceMaterial
    thickness: float = 0.4  # cm
    refractive_index: float = REFRACTIVE_INDEX
    spectral_absorption: Optional[Spectrum] = None  # sigma_a per 10 nm band, cm^-1

    def __post_init__(self):
        if not self.thickness > 0:
            raise DomainError("thickness must be positive")
        if not self.refractive_index >= 1:
            raise DomainError("refractive index must be >= 1")


@dataclass(frozen=True)
class MeasurementGeometry:
    mode: str
    illumination_diameter: float = 2.0  # mm
    detection_diameter: float = 2.0     # mm
    backing: str = "black"
    detection_half_angle: float = 5.0   # degrees
    incidence_angle: float = 45.0       # degrees, reflectance only
    backing_white_factor: float = 0.92

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.backing not in BACKINGS:
            raise ConfigurationError(f"unknown backing {self.backing!r}")
        if not 0 < self.detection_half_angle < 90:
            raise ConfigurationError("detection half-angle must lie in (0, 90) degrees")
        if self.mode == REFLECTANCE_45_0:
            if not (self.illumination_diameter > 0 and self.detection_diameter > 0):
                raise ConfigurationError("aperture diameters must be positive")
            if self.backing == "none":
                raise ConfigurationError("reflectance needs a black or white backing")
            if not 0 <= self.incidence_angle < 90:
                raise ConfigurationError("incidence angle must lie in [0, 90)")
        elif self.backing != "none":
            raise ConfigurationError("transmittance is measured without backing")
        if not 0 <= self.backing_white_factor <= 1:
            raise ConfigurationError("white backing factor must lie in [0, 1]")

    @classmethod
    def reflectance(cls, a_i: float, a_d: float = 2.0, backing: str = "black", **kw):
        return cls(REFLECTANCE_45_0, a_i, a_d, backing, **kw)

    @classmethod
    def transmittance(cls, **kw):
        return cls(TRANSMITTANCE_D0, backing="none", **kw)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_photons: int
    seed: int
    bookkeeping: dict = field(default_factory=dict, compare=False, repr=False)

    def conservation_residual(self) -> float:
        """launched + roulette gain - (reflected + transmitted + absorbed + lost)."""
        b = self.bookkeeping
        return (b["launched"] + b["roulette_net"]
                - b["reflected"] - b["transmitted"] - b["absorbed"] - b["lost"])


def chunk_seeds(seed: int, n_chunks: int, stream=()) -> list:
    """Per-chunk generator states (4 x uint64), a stable function of (seed, stream, chunk index)."""
    out = []
    for i in range(n_chunks):
        st = np.random.SeedSequence(seed, spawn_key=tuple(stream) + (i,)).generate_state(4, dtype=np.uint64)
        if not st.any():  # xoshiro must not start from the all-zero state
            st[0] = 1
        out.append(st)
    return out


def _cone(sample: SlabSample, half_angle_deg: float):
    half = math.radians(half_angle_deg)
    return math.sqrt(1.0 - (math.sin(half) / sample.refractive_index) ** 2), math.cos(half), math.sin(half) ** 2


def _resolve_threads(threads):
    if threads is None:
        threads = int(os.environ.get("ALPHASCALE_THREADS", "0")) or (os.cpu_count() or 1)
    return max(1, int(threads))


@dataclass
class _RawRun:
    tallies: np.ndarray      # summed kernel tallies
    scores: np.ndarray       # (n_photons, n_scores) per-photon scores


def _run(sample: SlabSample, sigma_a: float, n_photons: int, seed: int, stream, threads, chunk_size,
         *, rear, rear_albedo, launch_diffuse, launch_sin_ext, launch_radius, score_mode,
         det_radius, radii, truncate, half_angle) -> _RawRun:
    if n_photons < 1:
        raise DomainError("n_photons must be >= 1")
    cos_int, cos_ext, _ = _cone(sample, half_angle)
    radii = np.asarray(radii, dtype=float)
    truncate = np.asarray(truncate, dtype=np.bool_)
    sizes = [chunk_size] * (n_photons // chunk_size)
    if n_photons % chunk_size:
        sizes.append(n_photons % chunk_size)
    seeds = chunk_seeds(seed, len(sizes), stream)

    def one(i):
        return K.run_chunk(seeds[i], sizes[i], float(sigma_a), float(sample.material.sigma_s),
                           float(sample.thickness), float(sample.refractive_index), rear, float(rear_albedo),
                           launch_diffuse, float(launch_sin_ext), float(launch_radius), score_mode,
                           float(det_radius), radii, truncate, cos_int, cos_ext, MAX_EVENTS)

    threads = _resolve_threads(threads)
    if threads == 1 or len(sizes) == 1:
        parts = [one(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    tallies = np.zeros(K.N_TALLIES)
    for t, _ in parts:      # fixed chunk order keeps sums thread-independent
        tallies += t
    return _RawRun(tallies, np.concatenate([sc for _, sc in parts], axis=0))


def _bookkeeping(t) -> dict:
    return dict(launched=t[K.T_LAUNCHED], reflected=t[K.T_REFLECTED], transmitted=t[K.T_TRANSMITTED],
                absorbed=t[K.T_ABSORBED] + t[K.T_BACKING], absorbed_medium=t[K.T_ABSORBED],
                absorbed_backing=t[K.T_BACKING], roulette_net=t[K.T_ROULETTE], lost=t[K.T_LOST],
                events=t[K.T_EVENTS])


def _estimate(x, norm, seed, book) -> McEstimate:
    n = x.size
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean / norm, se / norm, int(n), int(seed), book)


def _diffuser_norm(r_i, r_d, sin2):
    # perfect diffuser: fraction of the illuminated disk seen by the detector,
    # times the Lambertian flux fraction inside the acceptance cone
    return (min(r_d, r_i) / r_i) ** 2 * sin2


def simulate(sample: SlabSample, geom: MeasurementGeometry, n_photons: int, seed: int,
             estimator: str | None = None, threads: int | None = None,
             chunk_size: int = DEFAULT_CHUNK, stream=(), sigma_a: float | None = None) -> McEstimate:
    """Run one virtual measurement and return the factor relative to its reference.

    Photons are split into fixed-size chunks, each seeded from
    ``(seed, stream, chunk index)`` and reduced in chunk order, so results do
    not depend on ``threads``.

    Reflectance estimators: ``next_event`` (default) and ``analog``
    (photons launched over the illuminated disk, counted when they leave
    through the detection disk inside the cone). Transmittance estimators:
    ``reciprocal`` (default) and ``direct``.
    """
    if estimator is None:
        estimator = "next_event" if geom.mode == REFLECTANCE_45_0 else "reciprocal"
    sa = sample.material.sigma_a if sigma_a is None else sigma_a
    _, _, sin2 = _cone(sample, geom.detection_half_angle)
    common = dict(rear_albedo=geom.backing_white_factor, half_angle=geom.detection_half_angle)
    if geom.mode == REFLECTANCE_45_0:
        r_i = geom.illumination_diameter / 20.0  # mm diameter -> cm radius
        r_d = geom.detection_diameter / 20.0
        if estimator == "next_event":
            mode, launch_r = K.SCORE_NEXT_EVENT_FRONT, 0.0
        elif estimator == "analog":
            mode, launch_r = K.SCORE_ANALOG_FRONT, r_i
        else:
            raise ConfigurationError(f"reflectance estimator must be next_event or analog, got {estimator!r}")
        raw = _run(sample, sa, n_photons, seed, stream, threads, chunk_size,
                   rear=K.REAR_BLACK if geom.backing == "black" else K.REAR_WHITE,
                   launch_diffuse=False, launch_sin_ext=math.sin(math.radians(geom.incidence_angle)),
                   launch_radius=launch_r, score_mode=mode, det_radius=r_d, radii=[r_i], truncate=[False],
                   **common)
        norm = _diffuser_norm(r_i, r_d, sin2)
    else:
        if estimator == "reciprocal":
            mode, diffuse, norm = K.SCORE_TOTAL_REAR, False, 1.0
        elif estimator == "direct":
            mode, diffuse, norm = K.SCORE_NEXT_EVENT_REAR, True, sin2
        else:
            raise ConfigurationError(f"transmittance estimator must be reciprocal or direct, got {estimator!r}")
        raw = _run(sample, sa, n_photons, seed, stream, threads, chunk_size,
                   rear=K.REAR_AIR, launch_diffuse=diffuse, launch_sin_ext=0.0, launch_radius=0.0,
                   score_mode=mode, det_radius=math.inf, radii=[1.0], truncate=[False], **common)
    return _estimate(raw.scores[:, 0], norm, seed, _bookkeeping(raw.tallies))


@dataclass(frozen=True)
class TripleConfig:
    """Apertures (mm) and Monte-Carlo settings for a measurement triple."""

    n_photons: int = 100_000
    seed: int = 0
    detection_diameter: float = 2.0
    illumination_a0: float = 2.0
    illumination_a1: float = 8.0
    color_illumination: float = 8.0
    detection_half_angle: float = 5.0
    backing_white_factor: float = 0.92
    threads: Optional[int] = None

    def geometries(self):
        """The four virtual measurements as independent geometries."""
        kw = dict(detection_half_angle=self.detection_half_angle, backing_white_factor=self.backing_white_factor)
        return {
            "white": MeasurementGeometry.reflectance(self.color_illumination, self.detection_diameter, "white", **kw),
            "a0": MeasurementGeometry.reflectance(self.illumination_a0, self.detection_diameter, "black", **kw),
            "a1": MeasurementGeometry.reflectance(self.illumination_a1, self.detection_diameter, "black", **kw),
            "trans": MeasurementGeometry.transmittance(**kw),
        }


RUN_NAMES = ("white", "a0", "a1", "trans")


@dataclass(frozen=True)
class MeasurementTriple:
    L_R: float
    L_T: float
    dL01: float

    def as_array(self):
        return np.array([self.L_R, self.L_T, self.dL01])


@dataclass(frozen=True)
class TripleResult:
    triple: MeasurementTriple
    std_error: MeasurementTriple       # in lightness units
    factors: dict                      # run name -> McEstimate (gray) or factor spectrum (colored)
    lightness: dict                    # run name -> unclipped L*


def _band_moments(sample, config, sigma_a, stream):
    """Means and covariance of the mean for (white, a0, a1, trans) in one band.

    The three reflectance conditions share photon histories: the rear face
    carries the white backing, and the black-backed a0/a1 scores only count
    contributions made before a photon first reaches the rear face (a black
    backing in optical contact absorbs it there). The detector sees each
    condition through its own illuminated disk.
    """
    sin2 = _cone(sample, config.detection_half_angle)[2]
    r_d = config.detection_diameter / 20.0
    radii = np.array([config.color_illumination, config.illumination_a0, config.illumination_a1]) / 20.0
    refl = _run(sample, sigma_a, config.n_photons, config.seed, tuple(stream) + (0,), config.threads, DEFAULT_CHUNK,
                rear=K.REAR_WHITE, rear_albedo=config.backing_white_factor, launch_diffuse=False,
                launch_sin_ext=math.sin(math.radians(45.0)), launch_radius=0.0,
                score_mode=K.SCORE_NEXT_EVENT_FRONT, det_radius=r_d, radii=radii,
                truncate=[False, True, True], half_angle=config.detection_half_angle)
    trans = _run(sample, sigma_a, config.n_photons, config.seed, tuple(stream) + (1,), config.threads, DEFAULT_CHUNK,
                 rear=K.REAR_AIR, rear_albedo=0.0, launch_diffuse=False, launch_sin_ext=0.0, launch_radius=0.0,
                 score_mode=K.SCORE_TOTAL_REAR, det_radius=math.inf, radii=[1.0], truncate=[False],
                 half_angle=config.detection_half_angle)
    norms = np.array([_diffuser_norm(r, r_d, sin2) for r in radii])
    x = refl.scores / norms
    n = x.shape[0]
    mean = np.empty(4)
    cov = np.zeros((4, 4))
    mean[:3] = x.mean(axis=0)
    mean[3] = trans.scores[:, 0].mean()
    if n > 1:
        cov[:3, :3] = np.cov(x, rowvar=False) / n
        cov[3, 3] = np.var(trans.scores[:, 0], ddof=1) / n
    books = {"reflectance": _bookkeeping(refl.tallies), "trans": _bookkeeping(trans.tallies)}
    return mean, cov, books


def simulate_triple(sample: SlabSample, config: TripleConfig = TripleConfig(), stream=()) -> TripleResult:
    """(L_R*, L_T*, dL01) for a slab sample.

    L_R uses the white backing and the color aperture; dL01 = |L0 - L1|
    from the black-backed a0/a1 conditions; L_T is relative to air.
    Colored samples (``spectral_absorption``) are simulated band by band
    and reduced to lightness under D50. L_R and L_T are capped at 100
    (a forward-peaked sample can exceed the perfect diffuser by a few
    percent); dL01 is formed from the uncapped values.
    """
    if sample.spectral_absorption is None:
        mean, cov, books = _band_moments(sample, config, sample.material.sigma_a, stream)
        factors = {name: McEstimate(float(mean[k]), float(math.sqrt(cov[k, k])), config.n_photons, config.seed,
                                    books["trans" if name == "trans" else "reflectance"])
                   for k, name in enumerate(RUN_NAMES)}
    else:
        ill = illuminant("D50").values
        wy = ill * cie1931_observer()[:, 1]
        wy = wy / wy.sum()
        band = [_band_moments(sample, config, sa, tuple(stream) + (b,))
                for b, sa in enumerate(sample.spectral_absorption.values)]
        means = np.array([m for m, _, _ in band])
        mean = wy @ means
        cov = sum(w * w * c for w, (_, c, _) in zip(wy, band))
        factors = {name: means[:, k] for k, name in enumerate(RUN_NAMES)}
    mean = np.maximum(mean, 0.0)
    slope = np.array([lightness_slope(v) for v in mean])
    L = {name: factor_to_lightness(mean[k]) for k, name in enumerate(RUN_NAMES)}
    se = np.sqrt(np.maximum(np.diag(cov), 0.0)) * slope
    # a0 and a1 are correlated (shared histories): propagate the difference jointly
    g = np.array([0.0, slope[1], -slope[2], 0.0])
    se_d = float(math.sqrt(max(0.0, g @ cov @ g)))
    triple = MeasurementTriple(min(L["white"], 100.0), min(L["trans"], 100.0), abs(L["a0"] - L["a1"]))
    err = MeasurementTriple(float(se[0]), float(se[3]), se_d)
    return TripleResult(triple, err, factors, L)


RUN_CONFIG_KEYS = {
    "photons": int,
    "seed": int,
    "thickness_cm": float,
    "n": float,
    "detection_half_angle_deg": float,
    "backing_white_factor": float,
}


@dataclass(frozen=True)
class RunConfig:
    photons: int = 100_000
    seed: int = 0
    thickness_cm: float = 0.4
    n: float = REFRACTIVE_INDEX
    detection_half_angle_deg: float = 5.0
    backing_white_factor: float = 0.92

    def triple_config(self, threads=None) -> TripleConfig:
        return TripleConfig(n_photons=self.photons, seed=self.seed,
                            detection_half_angle=self.detection_half_angle_deg,
                            backing_white_factor=self.backing_white_factor, threads=threads)

    def sample(self, sigma_a, sigma_s, spectral_absorption=None) -> SlabSample:
        return SlabSample(ReferenceMaterial(sigma_a, sigma_s), self.thickness_cm, self.n, spectral_absorption)


def load_run_config(path) -> RunConfig:
    """Read a ``key=value`` run configuration; unknown keys are rejected."""
    values = parse_kv_file(path, RUN_CONFIG_KEYS)
    cfg = RunConfig(**values)
    if cfg.photons < 1:
        raise ConfigurationError("photons must be >= 1")
    SlabSample(ReferenceMaterial(0, 0), cfg.thickness_cm, cfg.n)
    MeasurementGeometry.transmittance(detection_half_angle=cfg.detection_half_angle_deg,
                                      backing_white_factor=cfg.backing_white_factor)
    return cfg


def write_estimates_csv(path_or_file, rows):
    """rows: iterable of (sigma_a, sigma_s, McEstimate) -> ``sigma_a,sigma_s,value,std_error``."""
    import csv
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_a", "sigma_s", "value", "std_error"])
        for sa, ss, est in rows:
            w.writerow([repr(float(sa)), repr(float(ss)), repr(est.value), repr(est.std_error)])
    finally:
        if own:
            fh.close()
