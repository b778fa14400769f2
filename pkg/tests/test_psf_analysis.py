import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphascale.errors import ConfigurationError, DomainError, ParseError
from alphascale.psf_analysis import (
    A0, A1, ApertureConfig, GaussianPsf, cpd_to_psf_param, cycles_per_mm, device_discrimination, disk_image,
    edge_loss_factor, edge_loss_lightness, hvs_blur_difference, psf_family, psf_measurement, read_csf_csv,
    write_matrix_csv,
)
from oracles import m_bessel, m_qmc


class TestCpd:
    def test_zero(self):
        assert cpd_to_psf_param(0).c == 0

    def test_25cpd(self):
        assert cycles_per_mm(25, 80) == pytest.approx(1.790, abs=5e-4)
        assert cpd_to_psf_param(25, 80).c == pytest.approx(45.6, abs=0.05)

    def test_mtf_half(self):
        psf = cpd_to_psf_param(12, 80)
        rho = cycles_per_mm(12, 80)
        assert math.exp(-math.pi ** 2 * rho ** 2 / psf.c) == pytest.approx(0.5, rel=1e-12)

    @settings(max_examples=100)
    @given(st.floats(0.1, 100), st.floats(10, 300))
    def test_quadratic(self, f, d):
        assert cpd_to_psf_param(2 * f, d).c == pytest.approx(4 * cpd_to_psf_param(f, d).c, rel=1e-12)

    def test_family(self):
        fam = psf_family(50)
        assert len(fam) == 50
        assert all(a.c < b.c for a, b in zip(fam, fam[1:]))

    def test_invalid(self):
        with pytest.raises(DomainError):
            GaussianPsf(-1)
        with pytest.raises(DomainError):
            ApertureConfig(0)


class TestMeasurement:
    def test_constant_psf_limit(self):
        assert psf_measurement(ApertureConfig(2, 2), GaussianPsf(1e-12)) == pytest.approx(math.pi, rel=1e-4)
        assert psf_measurement(ApertureConfig(2, 2), GaussianPsf(0.0)) == pytest.approx(math.pi, rel=1e-12)

    @pytest.mark.parametrize("c", [1.0, 3.0, 10.0])
    def test_wide_illumination_limit(self, c):
        assert psf_measurement(ApertureConfig(200, 2), GaussianPsf(c)) == pytest.approx(math.pi / c, rel=1e-4)

    def test_qmc_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a_i, c = rng.uniform(0.5, 10), rng.uniform(0.01, 3)
            got = psf_measurement(ApertureConfig(a_i, 2.0), GaussianPsf(c))
            assert got == pytest.approx(m_qmc(a_i, 2.0, c), rel=1e-3)

    @pytest.mark.parametrize("a_i,a_d,c", [(2, 2, 0.5), (8, 2, 3.0), (1, 4, 10.0), (8, 2, 45.6), (3, 3, 0.01)])
    def test_bessel_oracle(self, a_i, a_d, c):
        assert psf_measurement(ApertureConfig(a_i, a_d), GaussianPsf(c)) == pytest.approx(
            m_bessel(a_i, a_d, c), rel=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 10), st.floats(0.1, 5), st.floats(0.001, 50))
    def test_monotone_in_aperture(self, a, extra, c):
        psf = GaussianPsf(c)
        assert psf_measurement(ApertureConfig(a + extra), psf) >= psf_measurement(ApertureConfig(a), psf) * (1 - 1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 10), st.floats(0.01, 50), st.floats(1.01, 3))
    def test_decreasing_in_c(self, a, c, factor):
        ap = ApertureConfig(a)
        assert psf_measurement(ap, GaussianPsf(c * factor)) < psf_measurement(ap, GaussianPsf(c))

    def test_a1_collects_more(self):
        for psf in psf_family(10):
            assert psf_measurement(A1, psf) >= psf_measurement(A0, psf)


class TestDevice:
    def test_edge_loss_factor_range(self):
        for psf in psf_family(50):
            for ap in (A0, A1):
                assert 0 < edge_loss_factor(ap, psf) <= 1
        assert edge_loss_factor(A0, GaussianPsf(1e9)) == pytest.approx(1.0, abs=1e-3)

    def test_identical_not_discriminable(self):
        p = cpd_to_psf_param(10)
        assert not device_discrimination([p, p]).any()

    def test_threshold_zero(self):
        m = device_discrimination(psf_family(10), threshold=0.0)
        assert np.array_equal(m, ~np.eye(10, dtype=bool))

    def test_fifty_psf_pattern(self):
        m = device_discrimination(psf_family(50))
        assert np.array_equal(m, m.T)
        assert not m.diagonal().any()
        adjacent = np.array([m[k, k + 1] for k in range(49)])  # k -> (k+1, k+2) cpd
        # low frequencies: every PSF is told apart from its neighbours
        assert adjacent[:8].all()
        # high frequencies: neighbours merge into clusters
        assert not adjacent[30:].all()
        first = int(np.argmin(adjacent))
        assert first >= 8
        # once clusters appear they dominate: fewer discriminable neighbours above than below
        assert adjacent[first:].mean() < adjacent[:first].mean()
        dl = np.array([edge_loss_lightness(p) for p in psf_family(50)])
        assert np.all(np.diff(dl) < 0)

    def test_matrix_csv(self, tmp_path):
        m = device_discrimination(psf_family(3))
        write_matrix_csv(tmp_path / "m.csv", m, [1, 2, 3])
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == ",1,2,3"
        assert lines[1].startswith("1,0,")


def lowpass_csf(cutoff):
    f = np.linspace(0, 60, 121)
    return f, np.exp(-(f / cutoff) ** 2)


class TestHvs:
    def test_requires_csf(self):
        with pytest.raises(ConfigurationError):
            hvs_blur_difference(GaussianPsf(1), GaussianPsf(2))

    def test_same_psf(self):
        p = cpd_to_psf_param(10)
        assert hvs_blur_difference(p, p, lowpass_csf(10)) == 0.0

    def test_identity_csf_maximal_blur(self):
        flat = (np.array([0.0, 100.0]), np.array([1.0, 1.0]))
        assert hvs_blur_difference(GaussianPsf(0.0), GaussianPsf(1e4), flat) > 20

    def test_lower_cutoff_smaller_difference(self):
        a, b = cpd_to_psf_param(5), cpd_to_psf_param(20)
        hi = hvs_blur_difference(a, b, lowpass_csf(20))
        lo = hvs_blur_difference(a, b, lowpass_csf(4))
        assert 0 < lo < hi

    def test_disk_image(self):
        img = disk_image(8.0)
        area = img.sum() * 0.05 ** 2
        assert area == pytest.approx(math.pi * 16, rel=0.01)

    def test_read_csf(self, tmp_path):
        p = tmp_path / "csf.csv"
        p.write_text("cycles_per_degree,response\n0,0.5\n4,1\n30,0.1\n")
        f, r = read_csf_csv(p)
        assert f.tolist() == [0, 4, 30]
        p.write_text("cycles_per_degree,response\n0,0.5\n4,x\n")
        with pytest.raises(ParseError) as e:
            read_csf_csv(p)
        assert e.value.line == 3
