import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from delaytrack.chebwave import (CoeffVector, ExpansionError, WaveletBasis, eval_psi, eval_vector, expand_scalar,
                                 expand_vector, reconstruct, theorem1_coefficient_bounds, to_piecewise_poly)

SQPI = np.sqrt(np.pi)
S2PI = np.sqrt(2 * np.pi)


def ref_ex1(t):
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0.5, 9 * t**2 - 6 * t + 1, 0.25)


class TestBasis:
    def test_dimensions(self):
        b = WaveletBasis(3, 6)
        assert b.n_sub == 4 and b.s == 24
        assert b.subinterval_width == 0.25

    @pytest.mark.parametrize("k,M", [(1, 5), (2, 2), (2.5, 5)])
    def test_rejects_bad_parameters(self, k, M):
        with pytest.raises(ValueError):
            WaveletBasis(k, M)

    def test_intervals_tile(self):
        b = WaveletBasis(4, 3)
        edges = [b.interval(n) for n in range(1, b.n_sub + 1)]
        assert edges[0][0] == 0.0 and edges[-1][1] == 1.0
        assert all(edges[i][1] == edges[i + 1][0] for i in range(len(edges) - 1))


class TestEvalPsi:
    def test_constant_wavelet(self):
        assert eval_psi(WaveletBasis(2, 5), 1, 0, 0.25) == pytest.approx(2 / SQPI)

    def test_outside_support(self):
        assert eval_psi(WaveletBasis(2, 5), 2, 0, 0.25) == 0.0

    def test_second_order_at_centre(self):
        assert eval_psi(WaveletBasis(2, 5), 1, 2, 0.25) == pytest.approx(-np.sqrt(8 / np.pi))

    @pytest.mark.parametrize("n,m", [(0, 0), (3, 0), (1, 5)])
    def test_index_errors(self, n, m):
        with pytest.raises(ValueError):
            eval_psi(WaveletBasis(2, 5), n, m, 0.1)

    def test_time_range(self):
        with pytest.raises(ValueError):
            eval_psi(WaveletBasis(2, 5), 1, 0, 1.5)

    def test_interface_convention(self):
        b = WaveletBasis(2, 4)
        assert eval_psi(b, 1, 1, 0.5) == pytest.approx(np.sqrt(8 / np.pi))
        assert eval_psi(b, 2, 1, 0.5) == 0.0
        assert eval_psi(b, 2, 1, 0.5, right_limit=True) == pytest.approx(-np.sqrt(8 / np.pi))


class TestEvalVector:
    def test_endpoint_outer_product(self):
        b = WaveletBasis(2, 5)
        v = eval_vector(b, 1.0)
        Y = np.outer(v, v)[5:, 5:]
        assert Y[0, 0] == pytest.approx(4 / np.pi)
        assert Y[0, 3] == pytest.approx(4 * np.sqrt(2) / np.pi)
        assert Y[2, 4] == pytest.approx(8 / np.pi)
        assert np.all(np.outer(v, v)[:5] == 0)

    def test_support_first_block(self):
        v = eval_vector(WaveletBasis(2, 5), 0.1)
        assert np.count_nonzero(v[5:]) == 0 and np.count_nonzero(v[:5]) == 5

    def test_support_last_block(self):
        v = eval_vector(WaveletBasis(3, 4), 0.9)
        assert np.flatnonzero(v).tolist() == list(range(12, 16))

    def test_matches_eval_psi(self):
        b = WaveletBasis(3, 5)
        t = np.linspace(0, 1, 37)
        V = eval_vector(b, t)
        for n in range(1, b.n_sub + 1):
            for m in range(b.M):
                assert np.allclose(V[:, b.index(n, m)], eval_psi(b, n, m, t))


class TestExpansion:
    def test_constant(self):
        b = WaveletBasis(3, 5)
        c = expand_scalar(b, lambda t: np.ones_like(t)).blocks[:, :, 0]
        assert np.allclose(c[:, 0], np.sqrt(np.pi / 2**3))
        assert np.allclose(c[:, 1:], 0, atol=1e-14)

    def test_example1_reference(self):
        G = expand_scalar(WaveletBasis(2, 5), ref_ex1).data
        want = [11 * SQPI / 64, -3 * S2PI / 32, 9 * S2PI / 128, 0, 0, SQPI / 8, 0, 0, 0, 0]
        assert np.allclose(G, want, atol=1e-12)

    def test_example1_history(self):
        F = expand_scalar(WaveletBasis(2, 5), lambda t: t**2 - t + 1.25).data[:5]
        assert np.allclose(F, [35 * SQPI / 64, -S2PI / 32, S2PI / 128, 0, 0], atol=1e-12)

    def test_constant_vector(self):
        X0 = expand_vector(WaveletBasis(2, 5), lambda t: np.ones(np.shape(t) + (1,)), 1).data
        assert np.allclose(X0, SQPI / 2 * np.array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0]), atol=1e-14)

    def test_zero(self):
        assert not np.any(expand_vector(WaveletBasis(2, 4), lambda t: np.zeros(np.shape(t) + (2,)), 2).data)

    def test_ramp_reference_interleaving(self):
        b = WaveletBasis(6, 8)
        G = expand_vector(b, lambda t: np.stack([3 * t, 0 * t], axis=-1), 2)
        assert G.data[0] == pytest.approx(3 * SQPI / 512)
        assert G.data[1] == 0.0
        assert G.data[2] == pytest.approx(3 * S2PI / 1024)
        n = np.arange(1, 33)
        assert np.allclose(G.blocks[:, 0, 0], 3 * (2 * n - 1) * SQPI / 512)
        assert np.allclose(G.blocks[:, :, 1], 0)

    def test_non_finite_is_reported(self):
        with pytest.raises(ExpansionError, match="t="), np.errstate(divide="ignore", invalid="ignore"):
            expand_scalar(WaveletBasis(2, 3), lambda t: 1.0 / (t - t))

    def test_wrong_channel_count(self):
        with pytest.raises(ExpansionError):
            expand_vector(WaveletBasis(2, 3), lambda t: np.zeros(np.shape(t) + (3,)), 2)


class TestReconstruct:
    def test_cubic(self):
        c = expand_scalar(WaveletBasis(3, 6), lambda t: t**3)
        assert reconstruct(c, 0.37)[0] == pytest.approx(0.050653, abs=1e-9)

    def test_zero(self):
        b = WaveletBasis(2, 4)
        assert reconstruct(CoeffVector(b, 2, np.zeros(2 * b.s)), 0.3).tolist() == [0.0, 0.0]

    def test_piecewise_reference(self):
        G = expand_scalar(WaveletBasis(2, 5), ref_ex1)
        assert reconstruct(G, 0.25)[0] == pytest.approx(0.0625, abs=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 4), st.integers(3, 7), st.integers(0, 2**31 - 1))
    def test_polynomial_round_trip(self, k, M, seed):
        b = WaveletBasis(k, M)
        coef = np.random.default_rng(seed).normal(size=(b.n_sub, M))

        def f(t):
            t = np.asarray(t)
            idx = np.minimum((t * b.n_sub).astype(int), b.n_sub - 1)
            return np.polynomial.polynomial.polyval(t, coef.T)[idx, np.arange(t.size)].reshape(t.shape) \
                if t.ndim else np.polynomial.polynomial.polyval(t, coef[idx])

        c = expand_scalar(b, lambda t: f(t.ravel()).reshape(t.shape))
        t = np.random.default_rng(seed + 1).uniform(0, 1, 50)
        assert np.abs(reconstruct(c, t)[:, 0] - f(t)).max() <= 1e-9 * max(1.0, np.abs(coef).max())


class TestPiecewisePoly:
    def test_constant(self):
        p = to_piecewise_poly(expand_scalar(WaveletBasis(3, 4), lambda t: np.ones_like(t)))
        assert np.allclose(p.coeffs[:, 0, 0], 1.0)
        assert np.allclose(p.coeffs[:, 0, 1:], 0.0, atol=1e-10)

    def test_example1_reference(self):
        p = to_piecewise_poly(expand_scalar(WaveletBasis(2, 5), ref_ex1))
        assert np.allclose(p.coeffs[0, 0, :3], [1, -6, 9], atol=1e-9)
        assert np.allclose(p.coeffs[1, 0], [0.25, 0, 0, 0, 0], atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 4), st.integers(3, 8), st.integers(1, 3), st.floats(0.5, 20),
           st.integers(0, 2**31 - 1))
    def test_agrees_with_reconstruction(self, k, M, ch, t_f, seed):
        b = WaveletBasis(k, M)
        rng = np.random.default_rng(seed)
        c = CoeffVector(b, ch, rng.normal(size=ch * b.s))
        p = to_piecewise_poly(c, t_f)
        tau = rng.uniform(0, 1, 100)
        t = tau * t_f
        # global monomials on late subintervals cancel heavily; allow for the rounding
        # of sum |c_p| t^p on top of the fixed tolerance
        idx = np.minimum((tau * b.n_sub).astype(int), b.n_sub - 1)
        mag = np.abs(p.coeffs[idx]) @ np.vander(t, M, increasing=True)[:, :, None]
        tol = 1e-10 + 1e-14 * mag[:, :, 0]
        assert np.all(np.abs(p(t) - reconstruct(c, tau)) <= tol)

    def test_agrees_at_small_size(self, rng):
        b = WaveletBasis(2, 5)
        c = CoeffVector(b, 1, rng.normal(size=b.s))
        tau = rng.uniform(0, 1, 100)
        assert np.allclose(to_piecewise_poly(c)(tau), reconstruct(c, tau), atol=1e-10, rtol=0)

    def test_format(self):
        p = to_piecewise_poly(expand_scalar(WaveletBasis(2, 3), lambda t: t))
        assert "[0, 0.5]" in p.format() and "+1.00000t" in p.format()


class TestOrthonormality:
    def test_weighted_inner_products(self):
        b = WaveletBasis(3, 6)
        # Gauss-Chebyshev per subinterval integrates the weight exactly
        nodes = 40
        x = np.cos((2 * np.arange(nodes) + 1) * np.pi / (2 * nodes))
        G = np.zeros((b.s, b.s))
        for n in range(1, b.n_sub + 1):
            t = (x + 2 * n - 1) / 2**b.k
            V = eval_vector(b, t)
            # weighted dt on subinterval n is dx / sqrt(1 - x^2) / 2^k
            G += V.T @ V * (np.pi / nodes) / 2**b.k
        assert np.abs(G - np.eye(b.s)).max() <= 1e-8

    def test_compact_support(self):
        b = WaveletBasis(4, 4)
        V = eval_vector(b, np.linspace(0, 1, 301))
        blocks = np.abs(V).reshape(V.shape[0], b.n_sub, b.M).sum(axis=2)
        assert np.all((blocks > 0).sum(axis=1) == 1)


class TestCoefficientBounds:
    def test_sine_respects_bounds(self):
        b = WaveletBasis(4, 8)
        c = np.abs(expand_scalar(b, lambda t: np.sin(2 * np.pi * t)).blocks[:, :, 0])
        bound = theorem1_coefficient_bounds(b, 1.0, 2 * np.pi, 4 * np.pi**2)
        assert np.all(c <= bound + 1e-15)

    def test_zero_norms(self):
        assert not np.any(theorem1_coefficient_bounds(WaveletBasis(3, 5), 0, 0, 0))

    def test_linear_first_order_bound(self):
        bound = theorem1_coefficient_bounds(WaveletBasis(2, 4), 1.0, 1.0, 0.0)
        assert bound[0, 1] == pytest.approx(np.sqrt(np.pi / 32))

    def test_negative_norm(self):
        with pytest.raises(ValueError):
            theorem1_coefficient_bounds(WaveletBasis(2, 4), -1, 0, 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 5), st.floats(0.5, 6.0), st.floats(-3, 3))
    def test_smooth_decay(self, k, w, phase):
        b = WaveletBasis(k, 8)
        c = np.abs(expand_scalar(b, lambda t: np.cos(w * t + phase)).blocks[:, :, 0])
        bound = theorem1_coefficient_bounds(b, 1.0, w, w * w)
        assert np.all(c[:, 2:] <= bound[:, 2:] * (1 + 1e-9) + 1e-15)


def test_expansion_matches_adaptive_quadrature():
    b = WaveletBasis(2, 5)
    f = np.exp
    c = expand_scalar(b, f).blocks[:, :, 0]
    for n in (1, 2):
        for m in range(b.M):
            wp = 1.0 if m == 0 else np.sqrt(2.0)
            val, _ = integrate.quad(lambda th: f((np.cos(th) + 2 * n - 1) / 4) * np.cos(m * th), 0, np.pi)
            assert c[n - 1, m] == pytest.approx(wp / np.sqrt(4 * np.pi) * val, abs=1e-13)
