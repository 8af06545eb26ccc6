import math

import numpy as np
import pytest
from scipy.integrate import simpson

from dotspin.errors import InvalidParams, NonConvergence, SingularBasis
from dotspin.kent import (
    KentParams,
    ProjectionParams,
    ScoringParams,
    feature_log_likelihood,
    hash_basis,
    hash_space_log_likelihood,
    kent_log_normalizer,
    kent_log_pdf,
    kent_normalizer,
    kent_sample,
    log_projection_likelihood,
    projection_likelihood,
)


def _log_vmf_normalizer(kappa: float) -> float:
    # closed form 4*pi*sinh(kappa)/kappa, evaluated in log space
    return (math.log(4 * math.pi) + kappa + math.log1p(-math.exp(-2 * kappa))
            - math.log(2.0) - math.log(kappa))


def _sphere_grid(n_theta=600, n_phi=1200):
    th = np.linspace(0.0, math.pi, n_theta)
    ph = np.linspace(0.0, 2 * math.pi, n_phi, endpoint=False)
    t, p = np.meshgrid(th, ph, indexing="ij")
    xs = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)
    weights = np.sin(t) * (th[1] - th[0]) * (ph[1] - ph[0])
    return xs, weights


class TestNormalizer:
    @pytest.mark.parametrize("kappa", [1.0, 10.0, 100.0, 500.0])
    def test_vmf_closed_form(self, kappa):
        got = kent_log_normalizer(kappa, 0.0)
        assert abs(got - _log_vmf_normalizer(kappa)) < 1e-10

    def test_vmf_closed_form_across_range(self):
        for kappa in np.geomspace(1.0, 700.0, 25):
            got = kent_log_normalizer(float(kappa), 0.0)
            assert abs(got - _log_vmf_normalizer(float(kappa))) < 1e-10

    def test_linear_space_small_kappa(self):
        assert kent_normalizer(1.0, 0.0) == pytest.approx(4 * math.pi * math.sinh(1.0), rel=1e-10)

    def test_elliptic_against_sphere_quadrature(self):
        kappa, beta = 100.0, 40.0
        p = KentParams.from_mean([0, 0, 1.0], kappa, beta)
        xs, w = _sphere_grid()
        expo = (kappa * (xs @ p.gamma1)
                + beta * ((xs @ p.gamma2) ** 2 - (xs @ p.gamma3) ** 2))
        integral = float(np.sum(np.exp(expo) * w))
        assert integral == pytest.approx(math.exp(kent_log_normalizer(kappa, beta)), rel=0.01)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParams):
            kent_log_normalizer(0.0, 0.0)
        with pytest.raises(InvalidParams):
            kent_log_normalizer(10.0, 5.0)   # 2*beta == kappa
        with pytest.raises(InvalidParams):
            kent_log_normalizer(10.0, -1.0)

    def test_slow_series_hits_cap(self):
        # terms decay like exp(-2j^2/kappa) once the Bessel order grows, so
        # the 200-term cap needs extreme concentration with 2*beta -> kappa
        with pytest.raises(NonConvergence):
            kent_log_normalizer(5000.0, 2499.999)


class TestKentParams:
    def test_orthonormality_enforced(self):
        with pytest.raises(InvalidParams):
            KentParams(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]),
                       np.array([0, 0, 1.0]), 10.0, 0.0)

    def test_unimodality_enforced(self):
        with pytest.raises(InvalidParams):
            KentParams.from_mean([0, 0, 1.0], 10.0, 6.0)

    def test_from_mean_builds_orthonormal_frame(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = rng.normal(size=3)
            p = KentParams.from_mean(d, 50.0, 10.0)
            g = np.vstack([p.gamma1, p.gamma2, p.gamma3])
            assert np.allclose(g @ g.T, np.eye(3), atol=1e-12)


class TestLogPdf:
    def test_mode_at_mean_direction(self):
        # beta = 0: the pdf is monotone in gamma1.x, so the best of any
        # sample set is exactly the sample closest to gamma1
        rng = np.random.default_rng(1)
        p = KentParams.from_mean([0.2, -0.5, 0.8], 50.0, 0.0)
        xs = rng.normal(size=(10_000, 3))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        vals = kent_log_pdf(p, xs)
        assert np.argmax(vals) == np.argmax(xs @ p.gamma1)

    def test_rotational_symmetry_at_beta_zero(self):
        p = KentParams.from_mean([0, 0, 1.0], 123.0, 0.0)
        ring = []
        for ang in np.linspace(0, 2 * math.pi, 17):
            ring.append([math.sin(0.4) * math.cos(ang),
                         math.sin(0.4) * math.sin(ang),
                         math.cos(0.4)])
        vals = kent_log_pdf(p, np.array(ring))
        assert np.ptp(vals) < 1e-12

    def test_integrates_to_one_high_kappa(self):
        p = KentParams.from_mean([0, 0, 1.0], 500.0, 0.0)
        xs, w = _sphere_grid(900, 1800)
        total = float(np.sum(np.exp(kent_log_pdf(p, xs)) * w))
        assert total == pytest.approx(1.0, rel=0.01)

    def test_rotation_invariance(self):
        from dotspin.geometry import random_rotation
        rng = np.random.default_rng(2)
        r = random_rotation(rng)
        p = KentParams.from_mean([0.3, 0.4, 0.5], 80.0, 20.0)
        pr = KentParams(r.apply(p.gamma1), r.apply(p.gamma2), r.apply(p.gamma3),
                        p.kappa, p.beta)
        xs = rng.normal(size=(50, 3))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        assert np.allclose(kent_log_pdf(p, xs), kent_log_pdf(pr, r.apply(xs)), atol=1e-9)

    def test_off_sphere_input_rejected(self):
        p = KentParams.from_mean([0, 0, 1.0], 10.0, 0.0)
        with pytest.raises(InvalidParams):
            kent_log_pdf(p, np.array([0.0, 0.0, 1.5]))


class TestSampling:
    def test_vmf_mean_direction(self):
        p = KentParams.from_mean([0.0, 1.0, 0.0], 500.0, 0.0)
        s = kent_sample(p, 100_000, np.random.default_rng(3))
        mean = s.mean(axis=0)
        ang = math.acos(min(1.0, float(mean @ p.gamma1 / np.linalg.norm(mean))))
        assert ang < math.radians(0.5)

    @pytest.mark.parametrize("kappa", [10.0, 100.0])
    def test_vmf_resultant_length(self, kappa):
        p = KentParams.from_mean([0, 0, 1.0], kappa, 0.0)
        s = kent_sample(p, 100_000, np.random.default_rng(4))
        rbar = float(np.linalg.norm(s.mean(axis=0)))
        a3 = 1.0 / math.tanh(kappa) - 1.0 / kappa
        assert rbar == pytest.approx(a3, rel=0.01)

    def test_elliptic_spread_wider_along_gamma2(self):
        p = KentParams.from_mean([0, 0, 1.0], 100.0, 40.0)
        s = kent_sample(p, 100_000, np.random.default_rng(5))
        assert np.var(s @ p.gamma2) > 2.0 * np.var(s @ p.gamma3)

    def test_unit_norm(self):
        p = KentParams.from_mean([1.0, 1.0, 1.0], 20.0, 5.0)
        s = kent_sample(p, 5000, np.random.default_rng(6))
        assert np.max(np.abs(np.linalg.norm(s, axis=1) - 1.0)) < 1e-9

    def test_elliptic_matches_density_histogram(self):
        # coarse check: empirical cap masses follow the analytic density
        kappa, beta = 30.0, 10.0
        p = KentParams.from_mean([0, 0, 1.0], kappa, beta)
        s = kent_sample(p, 200_000, np.random.default_rng(7))
        for direction in (p.gamma1, None):
            if direction is None:
                direction = (p.gamma1 + 0.3 * p.gamma2)
                direction = direction / np.linalg.norm(direction)
            cap = s @ direction > math.cos(0.15)
            xs, w = _sphere_grid(500, 1000)
            mask = xs @ direction > math.cos(0.15)
            expected = float(np.sum(np.exp(kent_log_pdf(p, xs)) * w * mask))
            assert cap.mean() == pytest.approx(expected, rel=0.05)

    def test_invalid_count(self):
        p = KentParams.from_mean([0, 0, 1.0], 10.0, 0.0)
        with pytest.raises(InvalidParams):
            kent_sample(p, 0, np.random.default_rng(8))


class TestProjectionLikelihood:
    def test_peak_value(self):
        assert projection_likelihood(0.03, np.array([1.0, 0, 0])) == pytest.approx(
            1.0 / (0.03 * math.sqrt(2 * math.pi)), rel=1e-12)

    def test_one_sigma_ratio(self):
        peak = projection_likelihood(0.03, np.array([1.0, 0, 0]))
        onesig = projection_likelihood(0.03, np.array([1.03, 0, 0]))
        assert onesig == pytest.approx(peak * math.exp(-0.5), rel=1e-12)

    def test_depends_only_on_norm(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            d = rng.normal(size=3)
            d *= 1.07 / np.linalg.norm(d)
            assert projection_likelihood(0.05, d) == pytest.approx(
                projection_likelihood(0.05, np.array([1.07, 0.0, 0.0])), rel=1e-12)

    def test_alpha_must_be_positive(self):
        with pytest.raises(InvalidParams):
            log_projection_likelihood(0.0, np.array([1.0, 0, 0]))


class TestFeatureLikelihood:
    def test_composition_on_sphere(self):
        p = KentParams.from_mean([0.1, 0.2, 0.97], 500.0, 0.0)
        proj = ProjectionParams(0.03)
        x = p.gamma1
        expected = float(log_projection_likelihood(proj.alpha, x) + kent_log_pdf(p, x))
        assert feature_log_likelihood(p, proj, x) == pytest.approx(expected, abs=1e-12)

    def test_radial_offset_drops_two_log_units(self):
        p = KentParams.from_mean([0, 0, 1.0], 500.0, 0.0)
        proj = ProjectionParams(0.03)
        at_mode = feature_log_likelihood(p, proj, p.gamma1)
        off = feature_log_likelihood(p, proj, p.gamma1 * (1 + 2 * proj.alpha))
        assert at_mode - off >= 2.0 - 1e-9

    def test_shell_integral_close_to_one(self):
        # 3D quadrature over the support shell; the radial second moment
        # makes the exact value 1 + alpha^2
        kappa, alpha = 50.0, 0.03
        p = KentParams.from_mean([0, 0, 1.0], kappa, 0.0)
        proj = ProjectionParams(alpha)
        rs = np.linspace(1 - 4 * alpha, 1 + 4 * alpha, 41)
        xs, w = _sphere_grid(300, 600)
        ang = float(np.sum(np.exp(kent_log_pdf(p, xs)) * w))
        radial = np.exp(log_projection_likelihood(alpha, rs[:, None] * np.array([[1.0, 0, 0]])))
        total = float(simpson(radial * rs ** 2, x=rs)) * ang
        assert total == pytest.approx(1.0, rel=0.02)


class TestHashSpaceLikelihood:
    def test_identity_basis_is_feature_likelihood(self):
        b = hash_basis(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        assert np.allclose(b.matrix, np.eye(3))
        p = KentParams.from_mean([0, 0, 1.0], 100.0, 0.0)
        proj = ProjectionParams(0.03)
        h = np.array([0.01, -0.02, 0.99])
        assert hash_space_log_likelihood(p, proj, b, h) == pytest.approx(
            feature_log_likelihood(p, proj, h), abs=1e-12)

    def test_change_of_variable_identity(self):
        rng = np.random.default_rng(10)
        p = KentParams.from_mean([0.3, -0.2, 0.9], 80.0, 20.0)
        proj = ProjectionParams(0.05)
        for _ in range(20):
            d1, d2 = rng.normal(size=3), rng.normal(size=3)
            d1 /= np.linalg.norm(d1)
            d2 /= np.linalg.norm(d2)
            if np.linalg.norm(np.cross(d1, d2)) < 0.1:
                continue
            b = hash_basis(d1, d2)
            h = rng.normal(size=3)
            expected = (feature_log_likelihood(p, proj, b.matrix @ h)
                        + math.log(abs(b.det)))
            assert hash_space_log_likelihood(p, proj, b, h) == pytest.approx(expected, abs=1e-12)

    def test_singular_basis_rejected(self):
        d = np.array([1.0, 0.0, 0.0])
        with pytest.raises(SingularBasis):
            hash_basis(d, d)

    def test_push_forward_sampling(self):
        # draw from p(x) = n(||x||) k(x/||x||) exactly (radius times
        # direction, accepted with probability (r/rmax)^2), map through
        # B^-1 and compare ball mass against the hash-space density
        kappa, alpha = 20.0, 0.02
        kp = KentParams.from_mean([0.0, 0.0, 1.0], kappa, 0.0)
        pp = ProjectionParams(alpha)
        rng = np.random.default_rng(42)

        n = 200_000
        rmax = 1 + 6 * alpha
        xs = np.empty((n, 3))
        filled = 0
        while filled < n:
            m = 2 * (n - filled) + 1000
            u = kent_sample(kp, m, rng)
            r = rng.normal(1.0, alpha, size=m)
            ok = (r > 0) & (r <= rmax)
            accept = ok & (rng.random(m) < (r / rmax) ** 2)
            pts = u[accept] * r[accept, None]
            k = min(len(pts), n - filled)
            xs[filled:filled + k] = pts[:k]
            filled += k

        d1 = np.array([0.0, 0.3, 0.95])
        d1 /= np.linalg.norm(d1)
        d2 = np.array([0.8, 0.1, 0.3])
        d2 /= np.linalg.norm(d2)
        basis = hash_basis(d1, d2)
        hs = xs @ np.linalg.inv(basis.matrix).T

        h0 = np.linalg.solve(basis.matrix, kp.gamma1)
        r_ball = 0.02
        frac = float(np.mean(np.linalg.norm(hs - h0, axis=1) < r_ball))

        m = 4000
        pts = rng.normal(size=(m, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        pts *= r_ball * rng.random(m)[:, None] ** (1 / 3)
        density = np.exp(hash_space_log_likelihood(kp, pp, basis, h0 + pts))
        expected = float(density.mean()) * (4 / 3) * math.pi * r_ball ** 3
        # the sampled law integrates to 1 + alpha^2, the density to the same
        assert frac == pytest.approx(expected, rel=0.2)

    def test_volume_preservation_quadrature(self):
        kappa, alpha = 50.0, 0.03
        kp = KentParams.from_mean([0.0, 0.0, 1.0], kappa, 0.0)
        pp = ProjectionParams(alpha)
        d1 = np.array([0.0, 0.3, 0.95])
        d1 /= np.linalg.norm(d1)
        d2 = np.array([0.8, 0.1, 0.3])
        d2 /= np.linalg.norm(d2)
        basis = hash_basis(d1, d2)

        def box_integral(f, lo, hi, n=161):
            grids = [np.linspace(l, h, n) for l, h in zip(lo, hi)]
            acc = np.empty(n)
            yy, zz = np.meshgrid(grids[1], grids[2], indexing="ij")
            for i, x in enumerate(grids[0]):
                pts = np.stack([np.full(yy.size, x), yy.ravel(), zz.ravel()], axis=1)
                vals = f(pts).reshape(yy.shape)
                acc[i] = simpson(simpson(vals, x=grids[2], axis=1), x=grids[1])
            return float(simpson(acc, x=grids[0]))

        lim = 1 + 6 * alpha
        ix = box_integral(lambda pts: np.exp(feature_log_likelihood(kp, pp, pts)),
                          [-lim] * 3, [lim] * 3)
        corners = np.array([[sx * lim, sy * lim, sz * lim]
                            for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        hc = corners @ np.linalg.inv(basis.matrix).T
        ih = box_integral(lambda pts: np.exp(hash_space_log_likelihood(kp, pp, basis, pts)),
                          hc.min(axis=0), hc.max(axis=0))
        assert ih == pytest.approx(ix, rel=0.02)


class TestScoringParams:
    def test_defaults(self):
        p = ScoringParams()
        assert (p.kappa, p.beta, p.alpha) == (500.0, 0.0, 0.03)

    def test_validation(self):
        with pytest.raises(InvalidParams):
            ScoringParams(kappa=-1.0)
        with pytest.raises(InvalidParams):
            ScoringParams(alpha=0.0)
