import numpy as np
import numpy.testing as nptest
import pytest

from pptrend.basis import TrendSpec, eval_basis, make_bspline_basis, trend_matrix
from pptrend.covariance import (
    BlockMap,
    RankOneKernel,
    band_intensity,
    band_trend,
    empirical_V,
    normal_quantile,
    plug_in_W,
    sandwich,
    sandwich_parts,
    theoretical_VW,
    trend_averages,
)
from pptrend.errors import NotConvergedError, SingularInformationError
from pptrend.model import FitConfig, day_scores, fit, hessian
from pptrend.quadrature import basis_grid, moments
from pptrend.simulate import SimModel, sample_pattern, simulate_series

from helpers import THETA0, poisson_series

BASIS = make_bspline_basis((0, 24), 3, 2)
GRID = basis_grid(BASIS)


def _weekly(seed=0, n=84, d=7, q=2, r=14):
    rng = np.random.default_rng(seed)
    theta = THETA0 + 1.0 + 0.3 * rng.normal(size=(d, 6))
    return poisson_series(rng, BASIS, theta, [0.05, -0.003][:q], TrendSpec(q, "residue", r=r), n, d)


@pytest.fixture(scope="module")
def weekly_fit():
    s = _weekly()
    return s, fit(s, BASIS, GRID)


class TestBlockMap:
    def test_layout(self):
        bm = BlockMap(3, 6, 2)
        assert bm.dim == 20
        assert bm.season(2) == slice(6, 12)
        assert bm.trend == slice(18, 20)
        assert bm.block(4) == bm.trend and bm.name(4) == "eta" and bm.name(1) == "theta_1"
        assert bm.offsets() == [0, 6, 12, 18]
        with pytest.raises(IndexError):
            bm.season(4)


class TestPlugInW:
    def test_negative_definite_and_block_sparse(self, weekly_fit):
        s, res = weekly_fit
        W = plug_in_W(res, s)
        nptest.assert_array_equal(W, W.T)
        assert np.linalg.eigvalsh(W).max() < 0
        for j in range(7):
            for k in range(7):
                if j != k:
                    assert np.all(W[6 * j : 6 * j + 6, 6 * k : 6 * k + 6] == 0.0)

    def test_equals_average_hessian_on_complete_cycles(self, weekly_fit):
        s, res = weekly_fit
        W = plug_in_W(res, s, BASIS, GRID)
        H = hessian(s, res.params, GRID, BASIS)
        assert np.max(np.abs(W - H)) <= 1e-8 * np.max(np.abs(H))

    def test_single_season_closed_form(self):
        rng = np.random.default_rng(1)
        spec = TrendSpec(2, "normalized", n=60)
        s = poisson_series(rng, BASIS, THETA0 + 2, [0.4, -0.2], spec, 60)
        res = fit(s, BASIS, GRID)
        m = moments(BASIS, GRID, res.params.theta[0])
        b = trend_matrix(spec, np.arange(1, 61))
        w = np.exp(b @ res.params.eta)
        e0, s0, S0 = w.mean(), w @ b / 60, (b * w[:, None]).T @ b / 60
        want = -np.block([[e0 * m.Sigma, np.outer(m.sigma, s0)], [np.outer(s0, m.sigma), m.e * S0]])
        nptest.assert_allclose(plug_in_W(res, s), want, rtol=1e-14, atol=1e-14 * np.abs(want).max())

    def test_refuses_unconverged(self):
        s = _weekly(2)
        res = fit(s, BASIS, GRID, FitConfig(max_iter=1))
        with pytest.raises(NotConvergedError):
            plug_in_W(res, s)
        with pytest.raises(NotConvergedError):
            empirical_V(s, res)


class TestEmpiricalV:
    def test_psd_and_outer_product(self, weekly_fit):
        s, res = weekly_fit
        V = empirical_V(s, res)
        psi = day_scores(s, res.params, GRID, BASIS)
        nptest.assert_allclose(V, psi.T @ psi / s.n, rtol=1e-12, atol=1e-14)
        assert np.linalg.eigvalsh(V).min() > -1e-10 * np.abs(V).max()

    def test_working_model_information_equality(self):
        model = SimModel(basis=BASIS, theta0=THETA0, eta0=[9.38, -8.43], n=2000, seed=3)
        s = simulate_series(model)
        res = fit(s, BASIS, GRID)
        V, W = empirical_V(s, res), plug_in_W(res, s)
        assert np.linalg.norm(V + W) / np.linalg.norm(W) < 0.1

    @pytest.mark.slow
    def test_rank_one_model_matches_theory(self):
        # constant zeta: v0 = sigma^2 zeta^2 is an exact spline (tau0 constant)
        sigma, n = 2.0, 5000
        zeta = np.full(6, 1 / np.sqrt(24.0))
        tau0 = np.full(6, sigma**2 / 24.0)
        model = SimModel(
            basis=BASIS, theta0=THETA0, eta0=[1.5, -1.0], scenario="independent",
            sigma=sigma, zeta=zeta, tau0=tau0, n=n, seed=4,
        )
        s = simulate_series(model)
        res = fit(s, BASIS, GRID)
        psi = day_scores(s, res.params, GRID, BASIS)
        V_hat = psi.T @ psi / n
        # batch standard errors of the mean outer product
        batches = np.array([b.T @ b / b.shape[0] for b in np.array_split(psi, 50)])
        se = batches.std(axis=0, ddof=1) / np.sqrt(50)
        avg = trend_averages(model.eta0, model.trend_spec, 1, np.arange(1, n + 1))
        V, _ = theoretical_VW(THETA0[None], tau0, avg, BASIS, GRID, RankOneKernel(zeta, sigma**2))
        z = np.abs(V_hat - V) / se
        assert z.max() < 3


class TestSandwich:
    def test_identity(self):
        nptest.assert_allclose(sandwich(np.eye(4), -np.eye(4)), np.eye(4), atol=1e-15)

    def test_information_equality(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(7, 7))
        V = A @ A.T + 7 * np.eye(7)
        nptest.assert_allclose(sandwich(V, -V), np.linalg.inv(V), rtol=1e-10, atol=1e-12)

    def test_random_psd(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            A, B = rng.normal(size=(2, 9, 9))
            V, W = A @ A.T, -(B @ B.T + 0.1 * np.eye(9))
            Om = sandwich(V, W)
            nptest.assert_array_equal(Om, Om.T)
            assert np.linalg.eigvalsh(Om).min() >= -1e-10 * np.abs(Om).max()
            Wi = np.linalg.inv(W)
            nptest.assert_allclose(Om, Wi @ V @ Wi, rtol=1e-8, atol=1e-10 * np.abs(Om).max())

    def test_singular_names_block(self):
        bm = BlockMap(2, 2, 1)
        W = -np.eye(5)
        W[2:4, 2:4] = -np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularInformationError) as exc:
            sandwich(np.eye(5), W, bm)
        assert exc.value.block == "theta_2"
        W = -np.eye(5)
        W[4, 4] = 0.0
        with pytest.raises(SingularInformationError) as exc:
            sandwich(np.eye(5), W, bm)
        assert exc.value.block == "eta" and "eta" in str(exc.value)

    def test_parts_on_fit(self, weekly_fit):
        s, res = weekly_fit
        parts = sandwich_parts(s, res, GRID)
        Wi = np.linalg.inv(parts.W)
        nptest.assert_allclose(parts.Omega, Wi @ parts.V @ Wi, rtol=1e-8, atol=1e-10 * np.abs(parts.Omega).max())
        assert np.linalg.eigvalsh(parts.Omega).min() > -1e-10 * np.abs(parts.Omega).max()


class TestTheoreticalVW:
    def _avg(self, d=2, q=1, r=4):
        return trend_averages([0.3], TrendSpec(q, "residue", r=r), d, np.arange(1, r + 1))

    def test_zero_kernel_information_equality(self):
        theta0 = np.vstack([THETA0 + 1, THETA0 + 1.5])
        V, W = theoretical_VW(theta0, np.zeros(6), self._avg(), BASIS, GRID)
        assert np.max(np.abs(V + W)) < 1e-10

    def test_positive_kernel_adds_psd_excess(self):
        theta0 = np.vstack([THETA0 + 1, THETA0 + 1.5])
        zeta = THETA0 / 15.506142600042445
        V, W = theoretical_VW(theta0, np.zeros(6), self._avg(), BASIS, GRID, RankOneKernel(zeta, 4.0))
        ev = np.linalg.eigvalsh(V + W)
        assert ev.min() >= -1e-10 * ev.max() and ev.max() > 0

    def test_kernel_moment_inequalities(self):
        zeta = THETA0 / 15.506142600042445
        K = np.exp(RankOneKernel(zeta, 4.0).values(BASIS, GRID.nodes))
        B = GRID.design(BASIS)
        wl = GRID.weights * np.exp(B @ THETA0)
        e, sig = wl.sum(), B.T @ wl
        assert wl @ K @ wl >= e**2
        S_jj = (B * wl[:, None]).T @ K @ (B * wl[:, None])
        assert np.linalg.eigvalsh(S_jj - np.outer(sig, sig)).min() >= -1e-12 * np.abs(S_jj).max()

    def test_trend_average_jensen(self):
        avg = trend_averages([0.4, -0.05], TrendSpec(2, "residue", r=21), 7, np.arange(1, 22))
        assert np.all(avg.e2 >= avg.e1**2)
        for S in list(avg.S1) + list(avg.S2):
            assert np.linalg.eigvalsh(S).min() >= -1e-12

    @pytest.mark.slow
    def test_matches_simulated_score_covariance(self):
        # d = 2, r = 4, q = 1, exact-spline v0 (constant zeta), 10^5 days
        sigma = 1.0
        zeta = np.full(6, 1 / np.sqrt(24.0))
        tau0 = np.full(6, sigma**2 / 24.0)
        theta0 = np.vstack([THETA0 + 1.0, THETA0 + 1.4])
        eta0 = np.array([0.25])
        spec = TrendSpec(1, "residue", r=4)
        star = theta0 + tau0 / 2
        rng = np.random.default_rng(7)
        reps = 25_000
        bm = BlockMap(2, 6, 1)
        mom = [moments(BASIS, GRID, th) for th in star]
        psi = np.zeros((4 * reps, bm.dim))
        z = rng.normal(0, sigma, 4 * reps)
        for k in range(4 * reps):
            t = k % 4 + 1
            j = (t - 1) % 2
            b = trend_matrix(spec, [t])[0]
            c = b @ eta0
            pts = sample_pattern((theta0[j] + z[k] * zeta, c), BASIS, rng).points
            sb = eval_basis(BASIS, pts).sum(axis=0) if pts.size else np.zeros(6)
            psi[k, bm.season(j + 1)] = sb - np.exp(c) * mom[j].sigma
            psi[k, bm.trend] = b * (pts.size - np.exp(c) * mom[j].e)
        prods = psi[:, :, None] * psi[:, None, :]
        V_mc = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / np.sqrt(prods.shape[0])
        avg = trend_averages(eta0, spec, 2, np.arange(1, 5))
        V, _ = theoretical_VW(theta0, tau0, avg, BASIS, GRID, RankOneKernel(zeta, sigma**2))
        mask = se > 0
        z = np.abs(V_mc - V)[mask] / se[mask]
        assert np.all(np.abs(V_mc - V)[~mask] < 1e-12)
        assert z.max() < 3


class TestBands:
    def test_quantile(self):
        assert normal_quantile(0.05) == pytest.approx(1.959964, abs=1e-5)
        for a in (0, 1, -0.1):
            with pytest.raises(ValueError):
                normal_quantile(a)

    def test_trend_band_zero_width_at_day_one(self, weekly_fit):
        s, res = weekly_fit
        Om = sandwich_parts(s, res).Omega
        est, lo, hi = band_trend(res, Om, 1)
        assert est == lo == hi == 0.0

    def test_trend_width_scales_with_n(self, weekly_fit):
        s, res = weekly_fit
        Om = sandwich_parts(s, res).Omega
        _, lo, hi = band_trend(res, Om, 5)
        res.n *= 4
        try:
            _, lo4, hi4 = band_trend(res, Om, 5)
        finally:
            res.n //= 4
        assert (hi4 - lo4) == pytest.approx((hi - lo) / 2, rel=1e-12)

    def test_intensity_band_is_scaled_linear_band(self, weekly_fit):
        s, res = weekly_fit
        Om = sandwich_parts(s, res).Omega
        u = np.linspace(0, 24, 9)
        lam, lo, hi = band_intensity(res, Om, 3, u)
        beta = eval_basis(BASIS, u)
        lin_half = 1.959963984540054 * np.sqrt(np.einsum("ij,jk,ik->i", beta, Om[12:18, 12:18], beta) / res.n)
        nptest.assert_allclose((hi - lo) / 2, lam * lin_half, rtol=1e-10)
        _, plo, phi = band_intensity(res, Om, 3, u, single_factor=True)
        nptest.assert_allclose((phi - plo) / 2, np.sqrt(lam) * lin_half, rtol=1e-10)

    def test_zero_covariance(self, weekly_fit):
        _, res = weekly_fit
        Om = np.zeros((44, 44))
        lam, lo, hi = band_intensity(res, Om, 1, np.linspace(0, 24, 5))
        nptest.assert_array_equal(lo, lam)
        nptest.assert_array_equal(hi, lam)

    def test_monotone_in_level_and_covariance(self, weekly_fit):
        s, res = weekly_fit
        Om = sandwich_parts(s, res).Omega
        widths = [np.diff(band_trend(res, Om, 9, alpha=a)[1:])[0] for a in (0.2, 0.1, 0.05, 0.01)]
        assert np.all(np.diff(widths) > 0)
        u = np.linspace(0, 24, 7)
        w1 = np.subtract(*band_intensity(res, Om, 2, u)[:0:-1])
        w2 = np.subtract(*band_intensity(res, 2.0 * Om, 2, u)[:0:-1])
        assert np.all(w2 >= w1)

    def test_invalid_arguments(self, weekly_fit):
        _, res = weekly_fit
        Om = np.eye(44)
        with pytest.raises(ValueError):
            band_trend(res, Om, 3, alpha=1.5)
        with pytest.raises(IndexError):
            band_intensity(res, Om, 8, 1.0)
