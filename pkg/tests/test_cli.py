import os
from pathlib import Path

import numpy as np
import pytest

from alphascale import cli
from alphascale.cli import CliConfig, build_parser, parse_config, run
from alphascale.errors import ConfigurationError
from alphascale.image_tools import LabImage, read_lab_image, write_lab_image, write_pfm
from alphascale.material_tables import STATUS_OK, CoefficientGrid, MaterialTable, interpolate, save_table

GOLDEN = Path(__file__).parent / "golden"


def smooth_table():
    g = CoefficientGrid(np.array([0.0, 1, 3, 8, 20, 50, 120]), np.array([0.0, 2, 6, 15, 40, 100, 300]))
    A, S = np.meshgrid(g.sigma_a, g.sigma_s, indexing="ij")
    v = np.stack([90 * (1 - np.exp(-S / 50)) * np.exp(-A / 200) + 5,
                  100 * np.exp(-(A + S) / 100),
                  20 * S / (S + 100) * np.exp(-A / 500)], axis=-1)
    return MaterialTable(g, v, np.zeros_like(v), np.full(g.shape, STATUS_OK, np.uint8), {"n_photons": 500})


@pytest.fixture(scope="module")
def table_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("tab") / "t.mtab"
    save_table(smooth_table(), path)
    return str(path)


def out_of(capsys, argv):
    code = run(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestOutputs:
    def test_eval(self, capsys):
        code, out, _ = out_of(capsys, ["eval", "--sa", "0", "--ss", "4.5"])
        assert code == 0
        assert out == "sigma_a,sigma_s,A\n0,4.5,0.1967\n"

    def test_eval_zero(self, capsys):
        assert out_of(capsys, ["eval", "--sa", "0", "--ss", "0"])[1].splitlines()[1] == "0,0,0.0000"

    def test_rescale(self, capsys):
        code, out, _ = out_of(capsys, ["rescale", "--alpha", "0.1967", "--k", "0.12846"])
        assert code == 0
        assert out.splitlines()[1].split(",")[2] == "0.5899"
        assert round(float(out.splitlines()[1].split(",")[2]), 2) == 0.59

    def test_eval_file_and_params(self, tmp_path, capsys):
        (tmp_path / "c.csv").write_text("sigma_a,sigma_s\n0,300\n8.2,10.1\n")
        code, out, _ = out_of(capsys, ["eval", "--input", str(tmp_path / "c.csv"), "--p", "1", "--q", "1",
                                       "--digits", "5"])
        assert code == 0
        assert out.splitlines()[1] == "0,300,0.98985"

    def test_out_file_and_output_dir(self, tmp_path, capsys):
        (tmp_path / "cfg").write_text(f"output_dir={tmp_path / 'o'}\n")
        assert run(["--config", str(tmp_path / "cfg"), "eval", "--sa", "1", "--ss", "1", "--out", "a.csv"]) == 0
        assert (tmp_path / "o" / "a.csv").read_text().startswith("sigma_a,sigma_s,A\n")

    def test_repeatable(self, capsys, table_path):
        argv = ["measure", "--table", table_path, "--simulate", "3", "20", "--photons", "2000", "--seed", "3"]
        first = out_of(capsys, argv)
        second = out_of(capsys, argv)
        assert first[0] == 0 and first[1] == second[1]


class TestConfig:
    def test_empty(self, tmp_path):
        (tmp_path / "c").write_text("")
        assert parse_config(tmp_path / "c") == CliConfig()

    def test_defaults_confirmed(self, tmp_path):
        (tmp_path / "c").write_text("p=0.4\nq=0.6\n")
        cfg = parse_config(tmp_path / "c")
        assert (cfg.p, cfg.q, cfg.c) == (0.4, 0.6, 0.0153)

    @pytest.mark.parametrize("text", ["q=0\n", "photons=0\n", "tolerance=-1\n"])
    def test_invalid(self, tmp_path, text):
        (tmp_path / "c").write_text(text)
        with pytest.raises(ConfigurationError):
            parse_config(tmp_path / "c")

    @pytest.mark.parametrize("text", ["colour=red\n", "p=0.4\np=0.5\n", "seed=abc\n"])
    def test_rejected(self, tmp_path, text):
        (tmp_path / "c").write_text(text)
        with pytest.raises(Exception) as e:
            parse_config(tmp_path / "c")
        assert type(e.value).__name__ in ("ParseError", "ConfigurationError")


class TestExitCodes:
    def test_usage(self, capsys):
        assert run([]) == 1
        assert run(["frobnicate"]) == 1
        assert run(["eval", "--sa", "1"]) == 1
        assert run(["eval", "--bogus"]) == 1

    def test_config_error(self, tmp_path, capsys):
        (tmp_path / "c").write_text("q=0\n")
        assert run(["--config", str(tmp_path / "c"), "eval", "--sa", "1", "--ss", "1"]) == 1

    def test_parse(self, tmp_path, capsys):
        (tmp_path / "c.csv").write_text("sigma_a,sigma_s\n1,2\nx,3\n")
        code, _, err = out_of(capsys, ["eval", "--input", str(tmp_path / "c.csv")])
        assert code == 2 and ":3:" in err

    def test_infeasible(self, table_path, capsys):
        assert run(["measure", "--table", table_path, "--triple", "100", "50", "1"]) == 3

    def test_numeric(self, capsys):
        assert run(["eval", "--sa", "-1", "--ss", "0"]) == 4
        assert run(["rescale", "--alpha", "0.5", "--k", "0"]) == 4

    def test_io(self, tmp_path, capsys):
        assert run(["eval", "--input", str(tmp_path / "missing.csv")]) == 5

    def test_no_table(self, monkeypatch, capsys):
        monkeypatch.delenv(cli.TABLE_ENV, raising=False)
        assert run(["measure", "--triple", "50", "50", "1"]) == 1

    def test_table_from_env(self, monkeypatch, table_path, capsys):
        monkeypatch.setenv(cli.TABLE_ENV, table_path)
        t = interpolate(smooth_table(), 8, 15)
        code, out, _ = out_of(capsys, ["measure", "--triple", repr(t.L_R), repr(t.L_T), repr(t.dL01)])
        assert code == 0
        assert out.splitlines()[1].startswith("8.0,15.0,")


HELP_TARGETS = [None] + sorted(cli.COMMANDS)


def help_text(command):
    parser = build_parser()
    if command is None:
        return parser.format_help()
    sub = next(a for a in parser._actions if a.dest == "command")
    return sub.choices[command].format_help()


@pytest.mark.parametrize("command", HELP_TARGETS, ids=[c or "top" for c in HELP_TARGETS])
def test_help_golden(command, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    text = help_text(command)
    path = GOLDEN / f"help_{command or 'top'}.txt"
    if os.environ.get("ALPHASCALE_UPDATE_GOLDEN"):
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("command", sorted(cli.COMMANDS))
def test_help_lists_every_flag(command):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[command]
    text = sub.format_help()
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


class TestSubcommands:
    def test_stress(self, tmp_path, capsys):
        (tmp_path / "a.csv").write_text("dT,dV\n1,2\n2,1\n")
        (tmp_path / "b.csv").write_text("dT,dV\n1,2\n2,3\n")
        code, out, _ = out_of(capsys, ["stress", "--input", str(tmp_path / "a.csv")])
        assert code == 0 and out == "n,stress\n2,60.0\n"
        code, out, _ = out_of(capsys, ["stress", "--input", str(tmp_path / "a.csv"),
                                       "--compare", str(tmp_path / "b.csv")])
        assert code == 0 and out.splitlines()[0] == "n,stress,stress_compare,verdict"

    def test_psf_matrix(self, tmp_path, capsys):
        code, out, _ = out_of(capsys, ["psf-matrix", "--n", "6", "--edge-loss", str(tmp_path / "e.csv")])
        assert code == 0
        rows = out.splitlines()
        assert rows[0] == ",1,2,3,4,5,6" and len(rows) == 7
        m = np.array([[int(x) for x in r.split(",")[1:]] for r in rows[1:]])
        assert (m == m.T).all() and not m.diagonal().any()
        assert len((tmp_path / "e.csv").read_text().splitlines()) == 7

    def test_psf_hvs_needs_csf(self, tmp_path, capsys):
        assert run(["psf-matrix", "--n", "3", "--hvs-out", str(tmp_path / "h.csv")]) == 1

    def test_color_transfer(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        orig = LabImage(rng.uniform(20, 80, (6, 5)), rng.uniform(-20, 20, (6, 5)), rng.uniform(-20, 20, (6, 5)))
        ref = LabImage(rng.uniform(30, 60, (6, 5)), np.zeros((6, 5)), np.zeros((6, 5)))
        write_lab_image(tmp_path / "o.pfm", orig)
        write_lab_image(tmp_path / "r.pfm", ref)
        mask = np.zeros((6, 5))
        mask[0, 0] = 1
        write_pfm(tmp_path / "m.pfm", mask)
        code, out, _ = out_of(capsys, ["color-transfer", "--original", str(tmp_path / "o.pfm"),
                                       "--reference", str(tmp_path / "r.pfm"), "--mask", str(tmp_path / "m.pfm"),
                                       "--image-out", str(tmp_path / "x.pfm"), "--png", str(tmp_path / "x.png")])
        assert code == 0
        assert out.splitlines()[1].startswith("5,6,")
        got = read_lab_image(tmp_path / "x.pfm")
        assert got.L[0, 0] == np.float32(orig.L[0, 0])
        assert (tmp_path / "x.png").stat().st_size > 0

    def test_fit_psycho_pairs(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        mats = rng.uniform(0, 200, (8, 4))
        lines = ["sa1,ss1,sa2,ss2,is_anchor"]
        lines += [",".join(repr(float(x)) for x in m) + f",{int(k == 0)}" for k, m in enumerate(mats)]
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        code, out, _ = out_of(capsys, ["fit-psycho", "--pairs", str(tmp_path / "p.csv"),
                                       "--report", str(tmp_path / "r.txt")])
        assert code == 0
        assert out.startswith("p,q,")
        assert "STRESS" in (tmp_path / "r.txt").read_text()

    def test_retrieve(self, table_path, capsys):
        code, out, _ = out_of(capsys, ["retrieve", "--table", table_path, "--rgb", "0.5", "0.5", "0.5",
                                       "--alpha", "0.5"])
        assert code == 0
        head, row = out.splitlines()
        assert head == "sigma_a,sigma_s,alpha_level,lightness,distance,exact_level"

    def test_build_tables(self, tmp_path, capsys):
        code, out, err = out_of(capsys, ["build-tables", "--sigma-a", "0,5", "--sigma-s", "0,10",
                                         "--photons", "300", "--seed", "2", "--table", str(tmp_path / "t.mtab")])
        assert code == 0
        assert len(out.splitlines()) == 5 and "node 4/4" in err
        assert (tmp_path / "t.mtab").exists()
