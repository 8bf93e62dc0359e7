import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from ipgp.kernels import (
    PAIRS,
    KernelSet,
    MaternParams,
    RadialKernel,
    constant_kernel,
    export_kernel_csv,
    matern32,
    matern32_with_grads,
    preset,
    truncate_singular,
    truncation_coefficients,
    truth_G,
)
from ipgp import kernels as kmod


def matern_bessel(s2, omega, nu, h):
    """General Matérn covariance written with the modified Bessel function."""
    h = np.asarray(h, dtype=float)
    x = np.sqrt(2 * nu) * h / omega
    with np.errstate(invalid="ignore"):
        val = s2 * 2 ** (1 - nu) / special.gamma(nu) * x**nu * special.kv(nu, x)
    return np.where(h == 0, s2, val)


class TestMatern:
    def test_diagonal_is_amplitude(self):
        p = MaternParams(2.5, 0.7)
        r = np.linspace(0, 3, 7)
        np.testing.assert_allclose(matern32(p, r, r), 2.5)

    def test_unit_distance_value(self):
        expected = (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
        assert matern32(MaternParams(1, 1), 0.0, 1.0) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.48335, abs=1e-5)

    def test_matches_bessel_form(self):
        h = np.linspace(0.01, 5, 40)
        for s2, om in [(1.0, 1.0), (0.3, 0.2), (4.0, 2.5)]:
            np.testing.assert_allclose(
                matern32(MaternParams(s2, om), 0.0, h), matern_bessel(s2, om, 1.5, h), rtol=1e-12
            )

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 5), st.floats(0.05, 5))
    def test_symmetric(self, a, b, s2, om):
        p = MaternParams(s2, om)
        assert matern32(p, a, b) == matern32(p, b, a)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=50, unique=True), st.floats(0.05, 5))
    def test_gram_psd(self, pts, om):
        r = np.array(pts)
        G = matern32(MaternParams(1.3, om), r[:, None], r[None, :])
        np.testing.assert_array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() > -1e-9 * 1.3

    def test_gradients_match_finite_differences(self):
        r, rp = np.array([0.1, 0.5, 2.0]), np.array([0.4, 0.45, 0.2])
        p = MaternParams(0.8, 0.6)
        k, dlog_s2, dlog_om = matern32_with_grads(p, r, rp)
        h = 1e-6
        kp = matern32(MaternParams(0.8, 0.6 * math.exp(h)), r, rp)
        km = matern32(MaternParams(0.8, 0.6 * math.exp(-h)), r, rp)
        np.testing.assert_allclose(dlog_s2, k)
        np.testing.assert_allclose(dlog_om, (kp - km) / (2 * h), rtol=1e-7)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            MaternParams(0.0, 1.0)
        with pytest.raises(ValueError):
            MaternParams(1.0, -1.0)
        with pytest.raises(ValueError):
            MaternParams(1.0, 1.0, nu=2.5)


class TestTruthG:
    def test_values_at_one(self):
        assert truth_G("G3", 1.0) == pytest.approx(1.0, abs=1e-15)
        assert truth_G("G5", 1.0) == pytest.approx(0.0, abs=1e-15)
        assert truth_G("G0", 1.0) == pytest.approx(1.0642203743, abs=1e-12)

    def test_G0_domain(self):
        with pytest.raises(ValueError):
            truth_G("G0", 0.0)
        with pytest.raises(ValueError):
            truth_G("G7", 1.0)

    @pytest.mark.parametrize("which", ["G0", "G3", "G5"])
    def test_derivatives(self, which):
        f, df = kmod._G[which]
        x = np.linspace(0.3, 3, 11)
        h = 1e-6
        np.testing.assert_allclose(df(x), (f(x + h) - f(x - h)) / (2 * h), rtol=1e-6, atol=1e-8)


class TestTruncation:
    def test_exponential_is_fixed_point(self):
        f = RadialKernel(lambda r: np.exp(-r), "exp", derivative=lambda r: -np.exp(-r))
        g = truncate_singular(f, 0.7)
        r = np.linspace(0, 3, 31)
        np.testing.assert_allclose(g(r), f(r), rtol=1e-14)

    @pytest.mark.parametrize("name", ["repulsive", "linear_repulsive", "predator_prey_ring"])
    def test_seam_is_C1(self, name):
        cut = 0.25 if name == "repulsive" else 0.5
        g = preset(name).phi11
        eps = 1e-4
        assert abs(g(cut - eps) - g(cut)) < 2 * eps * (1 + abs(g.deriv(cut)))
        # analytic one-sided derivatives agree at the seam
        assert float(g.deriv(cut - 1e-12)) == pytest.approx(float(g.deriv(cut)), rel=1e-9)
        h = 1e-7
        dl = (g(cut) - g(cut - h)) / h
        dr = (g(cut + h) - g(cut)) / h
        assert abs(dl - dr) / max(abs(dl), 1.0) < 1e-5

    def test_repulsive_coefficients_frozen(self):
        f = RadialKernel(
            lambda r: -kmod._G0(0.5 * r * r), "f", derivative=lambda r: -kmod._dG0(0.5 * r * r) * r
        )
        a, b = truncation_coefficients(f, 0.25)
        assert a == pytest.approx(-5.912788345242305, rel=1e-12)
        assert b == pytest.approx(1.2001522635500057, rel=1e-12)
        assert a * math.exp(-b * 0.25) == pytest.approx(float(f(0.25)), rel=1e-14)
        assert preset("repulsive").phi11(0.0) == pytest.approx(a, rel=1e-14)

    def test_zero_at_cut_is_error(self):
        f = RadialKernel(lambda r: r - 1.0, "r-1", derivative=lambda r: np.ones_like(r))
        with pytest.raises(ValueError):
            truncation_coefficients(f, 1.0)


class TestPresets:
    def test_repulsive_cross_is_half(self):
        P = preset("repulsive")
        r = np.linspace(0.25, 4, 50)
        np.testing.assert_allclose(P.phi12(r), 0.5 * P.phi11(r), rtol=1e-14)
        np.testing.assert_array_equal(P.phi12(np.linspace(0, 4, 50)), P.phi21(np.linspace(0, 4, 50)))

    def test_linear_repulsive_cross(self):
        # force convention x_k - x_i flips the sign of the tabulated -4r
        assert preset("linear_repulsive").phi12(2.0) == pytest.approx(8.0)

    @pytest.mark.parametrize("name", ["predator_prey_migratory", "predator_prey_ring"])
    def test_predators_do_not_interact(self, name):
        r = np.linspace(0, 5, 20)
        np.testing.assert_array_equal(preset(name).phi22(r), 0.0)

    @pytest.mark.parametrize("name", ["repulsive", "linear_repulsive", "predator_prey_migratory", "predator_prey_ring"])
    def test_finite_at_origin(self, name):
        for k in preset(name):
            assert np.all(np.isfinite(k(np.array([0.0, 1e-8, 0.3, 10.0]))))

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown preset"):
            preset("flocking")


class TestKernelSet:
    def test_indexing_and_swap(self):
        ks = KernelSet(*(constant_kernel(c) for c in (1.0, 2.0, 3.0, 4.0)))
        assert [float(ks[pq](0.5)) for pq in PAIRS] == [1.0, 2.0, 3.0, 4.0]
        sw = ks.swapped()
        assert [float(sw[pq](0.5)) for pq in PAIRS] == [4.0, 3.0, 2.0, 1.0]

    def test_export_csv(self, tmp_path):
        path = tmp_path / "k.csv"
        export_kernel_csv(preset("repulsive").phi11, [0.0, 0.5, 1.0], path)
        a = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(a[:, 1], preset("repulsive").phi11(a[:, 0]))
        assert path.read_text().splitlines()[0] == "r,value"
