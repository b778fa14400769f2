"""Reference-material measurement tables.

A table stores the simulated triple (L_R*, L_T*, dL01) at every node of
a (sigma_a, sigma_s) grid and interpolates bilinearly in the raw
coefficients between nodes.

Binary ``.mtab`` layout (little-endian)::

    magic      4 bytes  b"MTAB"
    version    uint16
    reserved   uint16
    n_a, n_s   uint32, uint32
    meta_len   uint32
    metadata   meta_len bytes of UTF-8 JSON
    grid_a     n_a float64
    grid_s     n_s float64
    values     6 * n_a * n_s float64 (L_R, L_T, dL01 and their std errors)
    status     n_a * n_s uint8
    crc32      uint32 over every preceding byte
"""

from __future__ import annotations

import csv
import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .alpha_model import ReferenceMaterial
from .errors import (
    ChecksumError, DomainError, IncompleteTableError, RangeError, TableFormatError,
    TruncatedFileError, UnsupportedVersionError,
)
from .slab_mc import MeasurementTriple, SlabSample, TripleConfig, simulate_triple

MAGIC = b"MTAB"
FORMAT_VERSION = 2
_HEADER = struct.Struct("<4sHHIII")

STATUS_MISSING = 0
STATUS_OK = 1
STATUS_FAILED = 2

# how the elided ranges of the published coefficient list are read
GRID_READING = "0:0.05:0.8, 0.9:0.1:1.4, 1.6:0.2:2, 4:2:10, then 20 50 75 100 200 300 600 850 1000 1250 2500"


def default_axis() -> np.ndarray:
    vals = [round(0.05 * k, 10) for k in range(17)]             # 0 .. 0.8
    vals += [round(0.9 + 0.1 * k, 10) for k in range(6)]        # 0.9 .. 1.4
    vals += [1.6, 1.8, 2.0, 4.0, 6.0, 8.0, 10.0]
    vals += [20.0, 50.0, 75.0, 100.0, 200.0, 300.0, 600.0, 850.0, 1000.0, 1250.0, 2500.0]
    return np.array(vals)


@dataclass(frozen=True)
class CoefficientGrid:
    sigma_a: np.ndarray = field(default_factory=default_axis)
    sigma_s: np.ndarray = field(default_factory=default_axis)

    def __post_init__(self):
        for name in ("sigma_a", "sigma_s"):
            ax = np.array(getattr(self, name), dtype=float)
            if ax.ndim != 1 or ax.size < 2:
                raise DomainError(f"{name} axis needs at least two values")
            if ax[0] != 0.0 or np.any(np.diff(ax) <= 0) or not np.all(np.isfinite(ax)):
                raise DomainError(f"{name} axis must start at 0 and increase strictly")
            ax.setflags(write=False)
            object.__setattr__(self, name, ax)

    @property
    def shape(self):
        return self.sigma_a.size, self.sigma_s.size

    def __eq__(self, other):
        return (isinstance(other, CoefficientGrid) and np.array_equal(self.sigma_a, other.sigma_a)
                and np.array_equal(self.sigma_s, other.sigma_s))


@dataclass
class MaterialTable:
    grid: CoefficientGrid
    values: np.ndarray      # (n_a, n_s, 3): L_R, L_T, dL01
    std_error: np.ndarray   # (n_a, n_s, 3)
    status: np.ndarray      # (n_a, n_s) uint8
    metadata: dict

    def __post_init__(self):
        shape = self.grid.shape
        self.values = np.asarray(self.values, dtype=float)
        self.std_error = np.asarray(self.std_error, dtype=float)
        self.status = np.asarray(self.status, dtype=np.uint8)
        if self.values.shape != shape + (3,) or self.std_error.shape != shape + (3,) or self.status.shape != shape:
            raise DomainError("table arrays do not match the grid")

    @property
    def complete(self) -> bool:
        return bool(np.all(self.status == STATUS_OK))

    def triple(self, i: int, j: int) -> MeasurementTriple:
        return MeasurementTriple(*(float(v) for v in self.values[i, j]))

    def check_ranges(self):
        """Raise DomainError unless every finished node is finite and in range."""
        ok = self.status == STATUS_OK
        v = self.values[ok]
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite table value")
        if np.any(v[:, :2] < 0) or np.any(v[:, :2] > 100) or np.any(v[:, 2] < 0):
            raise DomainError("table lightness outside [0, 100] or negative dL01")

    def __eq__(self, other):
        return (isinstance(other, MaterialTable) and self.grid == other.grid
                and np.array_equal(self.values, other.values) and np.array_equal(self.std_error, other.std_error)
                and np.array_equal(self.status, other.status) and self.metadata == other.metadata)


# -- interpolation --------------------------------------------------------

@njit(cache=True)
def cell_index(axis, x):
    """Cell ``i`` with axis[i] <= x <= axis[i+1] and the fractional position in it.

    Nodes belong to the cell on their right, except the last node.
    """
    n = axis.shape[0]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if axis[mid] <= x:
            lo = mid
        else:
            hi = mid
    t = (x - axis[lo]) / (axis[lo + 1] - axis[lo])
    return lo, t


@njit(cache=True)
def bilerp(v, i, j, ta, ts):
    """Bilinear blend of v[i:i+2, j:j+2]; exact at nodes (t = 0 or 1).

    Every interpolation in the package goes through this expression so
    that the lattice scan and :func:`interpolate` agree bit for bit.
    """
    r0 = v[i, j] * (1.0 - ta) + v[i + 1, j] * ta
    r1 = v[i, j + 1] * (1.0 - ta) + v[i + 1, j + 1] * ta
    return r0 * (1.0 - ts) + r1 * ts


def _require_complete(table: MaterialTable):
    if not table.complete:
        bad = int(np.sum(table.status != STATUS_OK))
        raise IncompleteTableError(f"table has {bad} unfinished or failed node(s)")


def _check_range(table: MaterialTable, sa: float, ss: float):
    ga, gs = table.grid.sigma_a, table.grid.sigma_s
    if not (0.0 <= sa <= ga[-1] and 0.0 <= ss <= gs[-1]):
        raise RangeError(f"({sa}, {ss}) outside the table range [0, {ga[-1]:g}] x [0, {gs[-1]:g}]")


def interpolate_in_cell(table: MaterialTable, i: int, j: int, sigma_a: float, sigma_s: float) -> MeasurementTriple:
    """Bilinear value using cell (i, j) explicitly (for boundary checks)."""
    ga, gs = table.grid.sigma_a, table.grid.sigma_s
    ta = (sigma_a - ga[i]) / (ga[i + 1] - ga[i])
    ts = (sigma_s - gs[j]) / (gs[j + 1] - gs[j])
    return MeasurementTriple(*(float(bilerp(table.values[:, :, k], i, j, ta, ts)) for k in range(3)))


def interpolate(table: MaterialTable, sigma_a: float, sigma_s: float) -> MeasurementTriple:
    """Componentwise bilinear interpolation in raw coefficients; no extrapolation."""
    _require_complete(table)
    sa, ss = float(sigma_a), float(sigma_s)
    _check_range(table, sa, ss)
    i, ta = cell_index(table.grid.sigma_a, sa)
    j, ts = cell_index(table.grid.sigma_s, ss)
    return MeasurementTriple(*(float(bilerp(table.values[:, :, k], i, j, ta, ts)) for k in range(3)))


# -- building -------------------------------------------------------------

@dataclass(frozen=True)
class TableBuildConfig:
    triple: TripleConfig = TripleConfig()
    thickness: float = 0.4
    refractive_index: float = 1.3

    def metadata(self, grid: CoefficientGrid) -> dict:
        t = self.triple
        return {
            "format_version": FORMAT_VERSION,
            "thickness_cm": self.thickness,
            "refractive_index": self.refractive_index,
            "n_photons": t.n_photons,
            "seed": t.seed,
            "backing_white_factor": t.backing_white_factor,
            "detection_half_angle_deg": t.detection_half_angle,
            "detection_diameter_mm": t.detection_diameter,
            "illumination_a0_mm": t.illumination_a0,
            "illumination_a1_mm": t.illumination_a1,
            "color_illumination_mm": t.color_illumination,
            "illumination_profile": "uniform disk",
            "grid_reading": GRID_READING if grid == CoefficientGrid() else "custom",
        }


def _node_key(meta: dict, grid: CoefficientGrid) -> dict:
    return {"meta": meta, "sigma_a": grid.sigma_a.tolist(), "sigma_s": grid.sigma_s.tolist()}


def _read_checkpoint(path, key):
    done = {}
    if not os.path.exists(path):
        return done
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        return done
    if json.loads(lines[0]) != key:
        raise TableFormatError(f"{path}: checkpoint was written for a different grid or configuration")
    for line in lines[1:]:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            break  # a torn final line from an interrupted run
        done[(rec["i"], rec["j"])] = rec
    return done


def build_table(grid: CoefficientGrid = CoefficientGrid(), config: TableBuildConfig = TableBuildConfig(),
                checkpoint=None, workers: int = 1, progress=None) -> MaterialTable:
    """Simulate every grid node.

    Node (i, j) draws its photons from the stream ``(i, j)`` under the
    configured seed, so the table does not depend on evaluation order or
    worker count. With ``checkpoint`` set, each finished node is appended
    to that JSON-lines file and an interrupted build resumes from it. A
    node whose simulation raises is flagged as failed and the build
    carries on; the returned table is then incomplete.
    """
    meta = config.metadata(grid)
    na, ns = grid.shape
    values = np.zeros((na, ns, 3))
    se = np.zeros((na, ns, 3))
    status = np.zeros((na, ns), dtype=np.uint8)
    key = _node_key(meta, grid)
    done = _read_checkpoint(checkpoint, key) if checkpoint else {}
    for (i, j), rec in done.items():
        values[i, j], se[i, j], status[i, j] = rec["values"], rec["std_error"], rec["status"]
    todo = [(i, j) for i in range(na) for j in range(ns) if (i, j) not in done]

    inner = config.triple if workers == 1 else _with_threads(config.triple, 1)

    def node(ij):
        i, j = ij
        sample = SlabSample(ReferenceMaterial(float(grid.sigma_a[i]), float(grid.sigma_s[j])),
                            config.thickness, config.refractive_index)
        try:
            r = simulate_triple(sample, inner, stream=(i, j))
            v, e = r.triple.as_array(), r.std_error.as_array()
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(e))):
                raise FloatingPointError("non-finite estimate")
            return ij, v, e, STATUS_OK
        except (ArithmeticError, ValueError, OSError):
            return ij, np.full(3, np.nan), np.full(3, np.nan), STATUS_FAILED

    fh = None
    if checkpoint:
        fresh = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        fh = open(checkpoint, "a")
        if fresh:
            fh.write(json.dumps(key) + "\n")
            fh.flush()
    try:
        if workers > 1:
            pool = ThreadPoolExecutor(max_workers=workers)
            results = pool.map(node, todo)
        else:
            pool = None
            results = map(node, todo)
        for n_done, ((i, j), v, e, st) in enumerate(results, start=1):
            values[i, j], se[i, j], status[i, j] = v, e, st
            if fh:
                rec = {"i": i, "j": j, "values": v.tolist(), "std_error": e.tolist(), "status": st}
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if progress:
                progress(n_done, len(todo))
        if pool:
            pool.shutdown()
    finally:
        if fh:
            fh.close()
    meta["complete"] = bool(np.all(status == STATUS_OK))
    return MaterialTable(grid, values, se, status, meta)


def _with_threads(cfg: TripleConfig, threads):
    from dataclasses import replace
    return replace(cfg, threads=threads)


# -- persistence ----------------------------------------------------------

def table_to_bytes(table: MaterialTable) -> bytes:
    meta = json.dumps(table.metadata, sort_keys=True).encode()
    na, ns = table.grid.shape
    body = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, 0, na, ns, len(meta)),
        meta,
        table.grid.sigma_a.astype("<f8").tobytes(),
        table.grid.sigma_s.astype("<f8").tobytes(),
        np.moveaxis(table.values, 2, 0).astype("<f8").tobytes(),
        np.moveaxis(table.std_error, 2, 0).astype("<f8").tobytes(),
        table.status.astype(np.uint8).tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def table_from_bytes(data: bytes, path="<bytes>") -> MaterialTable:
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file too short for a table header")
    magic, version, _, na, ns, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TableFormatError(f"{path}: not a material table (bad magic)")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: table format version {version} is not supported "
                                      f"(expected {FORMAT_VERSION}); rebuild the table")
    expected = _HEADER.size + meta_len + 8 * (na + ns) + 8 * 6 * na * ns + na * ns + 4
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: truncated ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise TableFormatError(f"{path}: {len(data) - expected} trailing bytes")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[:expected - 4]) != crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    off = _HEADER.size
    meta = json.loads(data[off:off + meta_len].decode())
    off += meta_len

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += arr.nbytes
        return arr

    ga, gs = take(na, "<f8"), take(ns, "<f8")
    vals = np.moveaxis(take(3 * na * ns, "<f8").reshape(3, na, ns), 0, 2)
    errs = np.moveaxis(take(3 * na * ns, "<f8").reshape(3, na, ns), 0, 2)
    status = take(na * ns, np.uint8).reshape(na, ns)
    return MaterialTable(CoefficientGrid(ga, gs), vals.astype(float), errs.astype(float), status, meta)


def save_table(table: MaterialTable, path):
    data = table_to_bytes(table)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_table(path) -> MaterialTable:
    with open(path, "rb") as fh:
        return table_from_bytes(fh.read(), path)


def export_csv(table: MaterialTable, path_or_file):
    """One row per node: ``sigma_a,sigma_s,L_R,L_T,dL01``."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_a", "sigma_s", "L_R", "L_T", "dL01"])
        for i, sa in enumerate(table.grid.sigma_a):
            for j, ss in enumerate(table.grid.sigma_s):
                w.writerow([repr(float(sa)), repr(float(ss))] + [repr(float(v)) for v in table.values[i, j]])
    finally:
        if own:
            fh.close()
