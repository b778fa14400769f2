"""Command-line front end.

Every subcommand writes machine-readable CSV to standard output (or to
``--out``) and exits with 0 on success, 1 on usage or configuration
errors, 2 on malformed input files, 3 when no reference material
satisfies the reflectance constraint, 4 on numeric errors and 5 on I/O
errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError, ConvergenceError, DimensionError, DomainError, IncompleteTableError, InfeasibleError,
    NonIdentifiableError, ParseError, RangeError,
)
from .kvconfig import parse_kv_file

TABLE_ENV = "ALPHASCALE_TABLE"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

REDUCED_AXIS = (0.0, 0.5, 2.0, 6.0, 20.0, 75.0, 300.0, 1000.0, 2500.0)

CONFIG_KEYS = {
    "table": str,
    "p": float,
    "q": float,
    "c": float,
    "photons": int,
    "seed": int,
    "threads": int,
    "tolerance": float,
    "output_dir": str,
}


@dataclass(frozen=True)
class CliConfig:
    table: Optional[str] = None
    p: float = 0.4
    q: float = 0.6
    c: float = 0.0153
    photons: int = 100_000
    seed: int = 0
    threads: Optional[int] = None
    tolerance: float = 2.0     # lightness tolerance d for measuring
    output_dir: str = "."

    def params(self):
        from .alpha_model import AlphaParams
        return AlphaParams(self.p, self.q, self.c)


def validate_config(cfg: CliConfig) -> CliConfig:
    try:
        cfg.params()
    except DomainError as exc:
        raise ConfigurationError(str(exc)) from None
    if cfg.photons < 1:
        raise ConfigurationError("photons must be >= 1")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigurationError("threads must be >= 1")
    if not cfg.tolerance > 0:
        raise ConfigurationError("tolerance must be positive")
    return cfg


def parse_config(path) -> CliConfig:
    """Read a ``key=value`` file; missing keys keep their defaults."""
    return validate_config(CliConfig(**parse_kv_file(path, CONFIG_KEYS)))


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_params(p):
    p.add_argument("--p", type=float, help="absorption weight p (default 0.4)")
    p.add_argument("--q", type=float, help="power-law exponent q (default 0.6)")
    p.add_argument("--c", type=float, help="attenuation scale c in cm (default 0.0153)")


def _add_out(p, what="CSV output"):
    p.add_argument("--out", metavar="PATH", help=f"{what} (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="alphascale", description="Device-independent translucency A for RGBA.")
    top.add_argument("--config", metavar="PATH", help="key=value configuration file")
    top.add_argument("--threads", type=int, metavar="N", help="worker threads (results do not depend on N)")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("build-tables", help="simulate a material table")
    p.add_argument("--grid", choices=("default", "reduced"), default="default",
                   help="41x41 default grid or the 9x9 reduced grid")
    p.add_argument("--sigma-a", type=_float_list, metavar="LIST", help="custom absorption axis (cm^-1)")
    p.add_argument("--sigma-s", type=_float_list, metavar="LIST", help="custom scattering axis (cm^-1)")
    p.add_argument("--photons", type=int, metavar="N", help="photons per node and condition")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--table", metavar="PATH", help="binary table to write")
    p.add_argument("--checkpoint", metavar="PATH", help="JSON-lines checkpoint for resuming")
    p.add_argument("--quiet", action="store_true", help="no progress on standard error")
    _add_out(p, "CSV export of the table")

    p = sub.add_parser("eval", help="A for absorption and scattering coefficients")
    p.add_argument("--sa", type=float, help="absorption coefficient (cm^-1)")
    p.add_argument("--ss", type=float, help="scattering coefficient (cm^-1)")
    p.add_argument("--input", metavar="PATH", help="CSV with columns sigma_a,sigma_s")
    p.add_argument("--digits", type=int, default=4, help="decimals printed (default 4)")
    _add_params(p)
    _add_out(p)

    p = sub.add_parser("rescale", help="A after scaling the object by k")
    p.add_argument("--alpha", type=float, required=True, help="A at the original size")
    p.add_argument("--k", type=float, required=True, help="scale factor (new size / original size)")
    p.add_argument("--q", type=float, help="power-law exponent q (default 0.6)")
    p.add_argument("--digits", type=int, default=4, help="decimals printed (default 4)")
    _add_out(p)

    p = sub.add_parser("measure", help="A of a measured (or simulated) sample")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", metavar="PATH", help="measured spectra (block,wavelength_nm,value)")
    src.add_argument("--triple", type=float, nargs=3, metavar=("L_R", "L_T", "DL01"),
                     help="measured lightness triple")
    src.add_argument("--simulate", type=float, nargs=2, metavar=("SA", "SS"),
                     help="simulate a slab sample with these coefficients and measure it")
    p.add_argument("--table", metavar="PATH", help="material table (default: config or $ALPHASCALE_TABLE)")
    p.add_argument("--d", type=float, help="reflectance lightness tolerance (default 2)")
    p.add_argument("--photons", type=int, metavar="N", help="photons for --simulate (default: the table's)")
    p.add_argument("--seed", type=int, help="seed for --simulate (default 1)")
    p.add_argument("--triple-out", metavar="PATH", help="write the measured triple as CSV")
    _add_params(p)
    _add_out(p)

    p = sub.add_parser("retrieve", help="reference material for an RGBA color")
    p.add_argument("--rgb", type=float, nargs=3, required=True, metavar=("R", "G", "B"),
                   help="sRGB color in [0, 1]")
    p.add_argument("--alpha", type=float, required=True, help="A in [0, 1]")
    p.add_argument("--table", metavar="PATH", help="material table (default: config or $ALPHASCALE_TABLE)")
    _add_params(p)
    _add_out(p)

    p = sub.add_parser("fit-psycho", help="psychometric fits")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pairs", metavar="PATH", help="visual pairs (sa1,ss1,sa2,ss2,is_anchor)")
    src.add_argument("--trials", metavar="PATH", help="trial responses (observer,direction,level,response)")
    p.add_argument("--loo", action="store_true", help="also run leave-one-out cross-validation")
    p.add_argument("--report", metavar="PATH", help="write a text report")
    p.add_argument("--c", type=float, help="attenuation scale c in cm (default 0.0153)")
    _add_out(p)

    p = sub.add_parser("stress", help="STRESS index of paired differences")
    p.add_argument("--input", required=True, metavar="PATH", help="CSV with columns dT,dV")
    p.add_argument("--compare", metavar="PATH", help="second dT,dV file for an F-test")
    _add_out(p)

    p = sub.add_parser("psf-matrix", help="PSF discrimination matrices")
    p.add_argument("--n", type=int, default=50, help="PSFs with 50%% MTF at 1..n cycles/degree (default 50)")
    p.add_argument("--distance", type=float, default=80.0, help="viewing distance in cm (default 80)")
    p.add_argument("--threshold", type=float, default=0.5, help="instrument lightness threshold (default 0.5)")
    p.add_argument("--edge-loss", metavar="PATH", help="write per-PSF edge-loss lightness differences")
    p.add_argument("--csf", metavar="PATH", help="contrast sensitivity (cycles_per_degree,response)")
    p.add_argument("--hvs-out", metavar="PATH", help="visual discrimination matrix (needs --csf)")
    p.add_argument("--hvs-threshold", type=float, default=1.0, help="visual lightness threshold (default 1)")
    _add_out(p, "instrument discrimination matrix")

    p = sub.add_parser("color-transfer", help="transfer color between renderings")
    p.add_argument("--original", required=True, metavar="PATH", help="original-material rendering (L,a,b PFM)")
    p.add_argument("--reference", required=True, metavar="PATH", help="reference-material rendering (PFM)")
    p.add_argument("--mask", metavar="PATH", help="specular mask (PNG or PFM, nonzero = specular)")
    p.add_argument("--image-out", required=True, metavar="PATH", help="output PFM")
    p.add_argument("--png", metavar="PATH", help="also write an 8-bit sRGB PNG")
    _add_out(p, "CSV summary")
    return top


# -- helpers --------------------------------------------------------------

def _open_out(path, output_dir):
    if path is None:
        return sys.stdout, False
    if not os.path.isabs(path) and output_dir not in (None, "."):
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, path)
    return open(path, "w", newline=""), True


def _emit(args, cfg, header, rows):
    fh, own = _open_out(args.out, cfg.output_dir)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if own:
            fh.close()


def _num(x) -> str:
    return repr(float(x))


def _params(args, cfg):
    from .alpha_model import AlphaParams
    return AlphaParams(*(cfg_val if getattr(args, k, None) is None else getattr(args, k)
                         for k, cfg_val in (("p", cfg.p), ("q", cfg.q), ("c", cfg.c))))


def _table_path(args, cfg):
    path = getattr(args, "table", None) or cfg.table or os.environ.get(TABLE_ENV)
    if not path:
        raise ConfigurationError(f"no material table given (--table, config 'table' or ${TABLE_ENV})")
    return path


# -- subcommands ----------------------------------------------------------

def cmd_build_tables(args, cfg):
    from .material_tables import (
        CoefficientGrid, TableBuildConfig, build_table, export_csv, save_table,
    )
    from .slab_mc import TripleConfig
    if args.grid == "reduced":
        sa = ss = np.array(REDUCED_AXIS)
    else:
        grid0 = CoefficientGrid()
        sa, ss = grid0.sigma_a, grid0.sigma_s
    if args.sigma_a:
        sa = np.array(args.sigma_a)
    if args.sigma_s:
        ss = np.array(args.sigma_s)
    grid = CoefficientGrid(sa, ss)
    photons = args.photons if args.photons is not None else cfg.photons
    seed = args.seed if args.seed is not None else cfg.seed
    if photons < 1:
        raise ConfigurationError("photons must be >= 1")
    config = TableBuildConfig(TripleConfig(n_photons=photons, seed=seed, threads=cfg.threads))

    def progress(k, n):
        if not args.quiet:
            print(f"\rnode {k}/{n}", end="\n" if k == n else "", file=sys.stderr, flush=True)

    table = build_table(grid, config, checkpoint=args.checkpoint, progress=progress)
    path = args.table or cfg.table
    if path:
        save_table(table, path)
    fh, own = _open_out(args.out, cfg.output_dir)
    try:
        export_csv(table, fh)
    finally:
        if own:
            fh.close()
    if not table.complete:
        failed = int(np.count_nonzero(table.status != 1))
        raise IncompleteTableError(f"{failed} node(s) failed; the saved table is incomplete")
    return EXIT_OK


def _read_coefficients(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["sigma_a", "sigma_s"]:
        raise ParseError("expected header 'sigma_a,sigma_s'", path, 1)
    out = []
    for line, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            sa, ss = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad row {row!r}", path, line) from None
        out.append((sa, ss))
    return out


def cmd_eval(args, cfg):
    from .alpha_model import ReferenceMaterial, alpha_from_coefficients
    params = _params(args, cfg)
    if args.input:
        if args.sa is not None or args.ss is not None:
            raise _UsageError("eval: --input excludes --sa/--ss")
        pairs = _read_coefficients(args.input)
    else:
        if args.sa is None or args.ss is None:
            raise _UsageError("eval: need --sa and --ss, or --input")
        pairs = [(args.sa, args.ss)]
    rows = []
    for sa, ss in pairs:
        a = alpha_from_coefficients(ReferenceMaterial(sa, ss), params)
        rows.append([f"{sa:g}", f"{ss:g}", f"{a:.{args.digits}f}"])
    _emit(args, cfg, ["sigma_a", "sigma_s", "A"], rows)
    return EXIT_OK


def cmd_rescale(args, cfg):
    from .alpha_model import rescale_alpha
    q = args.q if args.q is not None else cfg.q
    a = rescale_alpha(args.alpha, args.k, q)
    _emit(args, cfg, ["A", "k", "A_scaled"], [[f"{args.alpha:g}", f"{args.k:g}", f"{a:.{args.digits}f}"]])
    return EXIT_OK


def cmd_measure(args, cfg):
    from .alpha_measure import MeasuredSample, measure_alpha, read_measurement_csv, sample_from_spectra
    from .alpha_model import ReferenceMaterial
    from .material_tables import load_table
    from .slab_mc import SlabSample, TripleConfig, simulate_triple
    table = load_table(_table_path(args, cfg))
    params = _params(args, cfg)
    d = args.d if args.d is not None else cfg.tolerance
    se = None
    if args.input:
        m = sample_from_spectra(read_measurement_csv(args.input))
    elif args.triple:
        m = MeasuredSample(*args.triple)
    else:
        meta = table.metadata
        photons = args.photons if args.photons is not None else int(meta.get("n_photons", cfg.photons))
        seed = args.seed if args.seed is not None else 1
        sample = SlabSample(ReferenceMaterial(*args.simulate), float(meta.get("thickness_cm", 0.4)),
                            float(meta.get("refractive_index", 1.3)))
        tc = TripleConfig(n_photons=photons, seed=seed, threads=cfg.threads)
        r = simulate_triple(sample, tc)
        m, se = MeasuredSample.from_triple(r.triple), r.std_error
    if args.triple_out:
        with open(args.triple_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["L_R", "L_T", "dL01", "se_L_R", "se_L_T", "se_dL01"])
            errs = [se.L_R, se.L_T, se.dL01] if se is not None else ["", "", ""]
            w.writerow([_num(m.L_R_m), _num(m.L_T_m), _num(m.dL01_m)] + [e if e == "" else _num(e) for e in errs])
    r = measure_alpha(m, table, d=d, params=params)
    _emit(args, cfg, ["sigma_a", "sigma_s", "A", "objective", "slack"],
          [[_num(r.sigma_a_m), _num(r.sigma_s_m), _num(r.alpha), _num(r.objective), _num(r.constraint_slack)]])
    return EXIT_OK


def cmd_retrieve(args, cfg):
    from .alpha_measure import build_inverse_lut, retrieve
    from .material_tables import load_table
    table = load_table(_table_path(args, cfg))
    lut = build_inverse_lut(table, _params(args, cfg))
    hit = retrieve(tuple(args.rgb), args.alpha, lut)
    _emit(args, cfg, ["sigma_a", "sigma_s", "alpha_level", "lightness", "distance", "exact_level"],
          [[_num(hit.material.sigma_a), _num(hit.material.sigma_s), hit.alpha_level, _num(hit.lightness),
            _num(hit.distance), int(hit.exact_level)]])
    return EXIT_OK


def cmd_fit_psycho(args, cfg):
    from .alpha_model import AlphaParams
    from . import psychometrics as ps
    c = args.c if args.c is not None else cfg.c
    if args.trials:
        series = ps.read_trials_csv(args.trials)
        rows = []
        for direction in ps.DIRECTIONS:
            if direction not in series:
                continue
            r = ps.probit_fit(ps.monotone_filter(series[direction]))
            rows.append([direction, _num(r.mu), _num(r.sigma), _num(r.t50), _num(r.chi2), r.dof,
                         _num(r.p_value), int(r.passed)])
        _emit(args, cfg, ["direction", "mu", "sigma", "t50", "chi2", "dof", "p_value", "passed"], rows)
        return EXIT_OK
    v = ps.read_pairs_csv(args.pairs)
    base = AlphaParams(cfg.p, cfg.q, c)
    fit = ps.fit_psychometric_params(v, base)
    fh, own = _open_out(args.out, cfg.output_dir)
    try:
        ps.write_fit_csv(fh, fit)
    finally:
        if own:
            fh.close()
    if args.report or args.loo:
        n = len(v.pairs) - 1
        baseline = None
        if n >= 1:
            s0 = ps.model_stress(v, 1.0, 1.0, c)
            baseline = replace(fit, p=1.0, q=1.0, stress=s0, objective=ps.fit_objective(v, 1.0, 1.0, c))
        text = ps.fit_report_text(fit, baseline, n)
        if args.loo:
            loo = ps.loo_cross_validation(v, base)
            text += (f"LOO disagreement: mean {loo.disagreement[0]:.4g}, std {loo.disagreement[1]:.4g}, "
                     f"max {loo.disagreement[2]:.4g}\n"
                     f"LOO p: min {loo.p_range[0]:.4f}, mean {loo.p_range[1]:.4f}, max {loo.p_range[2]:.4f}\n"
                     f"LOO q: min {loo.q_range[0]:.4f}, mean {loo.q_range[1]:.4f}, max {loo.q_range[2]:.4f}\n")
        if args.report:
            with open(args.report, "w") as fh:
                fh.write(text)
        else:
            sys.stderr.write(text)
    return EXIT_OK


def _read_pairs_dt_dv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["dT", "dV"]:
        raise ParseError("expected header 'dT,dV'", path, 1)
    dt, dv = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            a, b = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise ParseError(f"bad row {row!r}", path, line) from None
        dt.append(a)
        dv.append(b)
    return np.array(dt), np.array(dv)


def cmd_stress(args, cfg):
    from .psychometrics import f_test_stress, stress
    dt, dv = _read_pairs_dt_dv(args.input)
    s = stress(dt, dv)
    if not args.compare:
        _emit(args, cfg, ["n", "stress"], [[dt.size, _num(s)]])
        return EXIT_OK
    dt2, dv2 = _read_pairs_dt_dv(args.compare)
    if dt2.size != dt.size:
        raise DimensionError("both files must hold the same number of pairs")
    s2 = stress(dt2, dv2)
    _emit(args, cfg, ["n", "stress", "stress_compare", "verdict"],
          [[dt.size, _num(s), _num(s2), f_test_stress(s, s2, dt.size)]])
    return EXIT_OK


def cmd_psf_matrix(args, cfg):
    from . import psf_analysis as pa
    if args.n < 2:
        raise ConfigurationError("--n must be >= 2")
    psfs = pa.psf_family(args.n, args.distance)
    labels = list(range(1, args.n + 1))
    fh, own = _open_out(args.out, cfg.output_dir)
    try:
        pa.write_matrix_csv(fh, pa.device_discrimination(psfs, threshold=args.threshold), labels)
    finally:
        if own:
            fh.close()
    if args.edge_loss:
        with open(args.edge_loss, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycles_per_degree", "c", "dL01"])
            for f, psf in zip(labels, psfs):
                w.writerow([f, _num(psf.c), _num(pa.edge_loss_lightness(psf))])
    if args.hvs_out:
        if not args.csf:
            raise ConfigurationError("--hvs-out needs --csf")
        csf = pa.read_csf_csv(args.csf)
        m = pa.hvs_discrimination(psfs, csf, threshold=args.hvs_threshold, viewing_distance_cm=args.distance)
        pa.write_matrix_csv(args.hvs_out, m, labels)
    return EXIT_OK


def cmd_color_transfer(args, cfg):
    from . import image_tools as it
    orig = it.read_lab_image(args.original)
    ref = it.read_lab_image(args.reference)
    mask = it.read_mask(args.mask) if args.mask else None
    out, clamped = it.color_transfer_report(orig, ref, mask)
    it.write_lab_image(args.image_out, out)
    clipped = it.write_png(args.png, out) if args.png else 0
    _emit(args, cfg, ["width", "height", "clamped_pixels", "gamut_clipped_pixels"],
          [[out.width, out.height, clamped, clipped]])
    return EXIT_OK


COMMANDS = {
    "build-tables": cmd_build_tables,
    "eval": cmd_eval,
    "rescale": cmd_rescale,
    "measure": cmd_measure,
    "retrieve": cmd_retrieve,
    "fit-psycho": cmd_fit_psycho,
    "stress": cmd_stress,
    "psf-matrix": cmd_psf_matrix,
    "color-transfer": cmd_color_transfer,
}


def run(argv=None) -> int:
    """Parse ``argv``, dispatch, and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage().strip() + "\nalphascale: error: a command is required")
        cfg = parse_config(args.config) if args.config else CliConfig()
        if args.threads is not None:
            cfg = validate_config(replace(cfg, threads=args.threads))
        return COMMANDS[args.command](args, cfg)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"alphascale: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"alphascale: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"alphascale: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DomainError, RangeError, DimensionError, NonIdentifiableError, ConvergenceError,
            IncompleteTableError, ArithmeticError) as exc:
        print(f"alphascale: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"alphascale: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
