import numpy as np
import pytest

from mpscan import physics as ph
from mpscan.geometry import make_grid_plan, standard_lissajous
from mpscan.grid import DenseField
from mpscan.phantoms import make_phantom


class TestLangevin:
    def test_zero(self):
        assert ph.langevin(0.0) == 0.0

    def test_unit_value(self):
        # coth(1) - 1 to machine precision
        assert ph.langevin(1.0) == pytest.approx(0.31303528549933130, rel=1e-14)

    def test_tiny_argument_series(self):
        assert ph.langevin(1e-6) == pytest.approx(1e-6 / 3, rel=1e-13)

    def test_odd(self, rng):
        x = rng.uniform(0.001, 50, 200)
        assert np.allclose(ph.langevin(-x), -ph.langevin(x), rtol=0, atol=0)

    def test_range(self, rng):
        x = rng.uniform(-500, 500, 500)
        vals = ph.langevin(x)
        assert np.all(np.abs(vals) < 1.0)

    def test_branch_agreement_absolute(self):
        # both branches across the switch neighbourhood
        xi = np.geomspace(1e-5, 1e-2, 400)
        direct = 1.0 / np.tanh(xi) - 1.0 / xi
        series = xi / 3 - xi**3 / 45 + 2 * xi**5 / 945
        assert np.abs(direct - series).max() <= 1e-10

    def test_branch_agreement_relative_above_switch(self):
        # band where direct evaluation keeps 10+ digits and the series
        # truncation is still negligible
        xi = np.geomspace(5e-3, 3e-2, 200)
        direct = 1.0 / np.tanh(xi) - 1.0 / xi
        series = xi / 3 - xi**3 / 45 + 2 * xi**5 / 945
        assert np.abs((direct - series) / series).max() <= 1e-10

    def test_prime_matches_finite_difference(self, rng):
        x = rng.uniform(0.05, 5.0, 50)
        eps = 1e-6
        fd = (ph.langevin(x + eps) - ph.langevin(x - eps)) / (2 * eps)
        assert np.abs(fd - ph.langevin_prime(x)).max() <= 1e-8


class TestKernelScalar:
    def test_origin_limit(self):
        for h in (0.005, 0.01, 0.02):
            assert ph.kernel_scalar((0.0, 0.0), h) == pytest.approx(2 / (3 * h), rel=1e-9)

    def test_radial_symmetry(self, rng):
        y = rng.uniform(-0.05, 0.05, (100, 2))
        assert np.allclose(ph.kernel_scalar(y, 0.01), ph.kernel_scalar(-y, 0.01),
                           rtol=0, atol=0)
        # depends only on |y|
        norms = np.linalg.norm(y, axis=1)
        rotated = np.column_stack([norms, np.zeros_like(norms)])
        assert np.allclose(ph.kernel_scalar(y, 0.01), ph.kernel_scalar(rotated, 0.01),
                           rtol=1e-12, atol=0)

    def test_positive_bounded_and_peaked_at_origin(self):
        h = 0.01
        radii = np.linspace(0.0, 0.5, 2000)
        vals = ph.kernel_scalar(np.column_stack([radii, np.zeros_like(radii)]), h)
        assert np.all(vals > 0)
        assert np.all(vals <= 2 / (3 * h) + 1e-12)
        assert vals[0] == np.max(vals)

    def test_radially_non_increasing(self):
        for h in (0.005, 0.01, 0.02):
            radii = np.linspace(0.0, 0.5, 1500)
            vals = ph.kernel_scalar(np.column_stack([radii, np.zeros_like(radii)]), h)
            assert np.all(np.diff(vals) <= 1e-12)

    def test_unit_radius_value(self):
        # (1/h) (L'(1) + L(1)) via independent scalar evaluation
        h = 0.01
        lp1 = 1.0 - 1.0 / np.tanh(1.0) ** 2 + 1.0
        l1 = 1.0 / np.tanh(1.0) - 1.0
        expected = (lp1 + l1) / h
        assert ph.kernel_scalar((h, 0.0), h) == pytest.approx(expected, rel=1e-12)


class TestKernelJacobian:
    def test_trace_identity(self, rng):
        z = rng.uniform(-0.1, 0.1, (1000, 2))
        for h in (0.005, 0.01, 0.02):
            jac = ph.kernel_jacobian(z, h)
            tr = jac[:, 0, 0] + jac[:, 1, 1]
            ks = ph.kernel_scalar(z, h)
            assert np.abs((tr - ks) / ks).max() <= 1e-12

    def test_origin_limit(self):
        h = 0.01
        jac = ph.kernel_jacobian((0.0, 0.0), h)
        assert np.abs(jac - np.eye(2) / (3 * h)).max() <= 1e-12

    def test_symmetric(self, rng):
        z = rng.uniform(-0.1, 0.1, (200, 2))
        jac = ph.kernel_jacobian(z, 0.01)
        assert np.abs(jac[:, 0, 1] - jac[:, 1, 0]).max() == 0.0

    def test_finite_difference_oracle(self):
        h, z = 0.01, np.array([0.02, -0.01])

        def field(p):
            r = np.linalg.norm(p)
            return ph.langevin(r / h) * p / r

        eps = 1e-6
        fd = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = eps
            fd[:, j] = (field(z + e) - field(z - e)) / (2 * eps)
        jac = ph.kernel_jacobian(z, h)
        assert np.abs((fd - jac) / jac).max() <= 1e-6


class TestCoreOperator:
    def test_zero_density(self):
        rho = DenseField(8, 8, (-1, 1, -1, 1), np.zeros((8, 8)))
        out = ph.core_operator_apply(rho, (0.1, 0.2), 0.01)
        assert np.all(out == 0.0)

    def test_single_cell_equals_weighted_jacobian(self):
        vals = np.zeros((10, 10))
        vals[3, 6] = 1.0
        rho = DenseField(10, 10, (-1, 1, -1, 1), vals)
        center = rho.grid.centers().reshape(10, 10, 2)[3, 6]
        p = np.array([0.3, -0.2])
        expected = rho.grid.cell_area * ph.kernel_jacobian(p - center, 0.01)
        out = ph.core_operator_apply(rho, p, 0.01)
        assert np.abs(out - expected).max() <= 1e-15

    def test_trace_equals_scalar_convolution_quadrature(self, rng):
        vals = rng.uniform(0, 1, (12, 12))
        rho = DenseField(12, 12, (-1, 1, -1, 1), vals)
        pts = rng.uniform(-0.9, 0.9, (20, 2))
        mats = ph.core_operator_apply(rho, pts, 0.01)
        traces = mats[:, 0, 0] + mats[:, 1, 1]
        centers = rho.grid.centers()
        for k in range(20):
            quad = np.sum(ph.kernel_scalar(pts[k] - centers, 0.01)
                          * vals.ravel()) * rho.grid.cell_area
            assert traces[k] == pytest.approx(quad, rel=1e-12)

    def test_matvec_matches_matrix_times_vector(self, rng):
        vals = rng.uniform(0, 1, (9, 9))
        rho = DenseField(9, 9, (-1, 1, -1, 1), vals)
        pts = rng.uniform(-0.8, 0.8, (15, 2))
        vel = rng.normal(size=(15, 2))
        mats = ph.core_operator_apply(rho, pts, 0.01)
        direct = np.einsum("kij,kj->ki", mats, vel)
        fused = ph.core_operator_matvec(rho, pts, vel, 0.01)
        assert np.abs(direct - fused).max() <= 1e-10 * np.abs(direct).max()


class TestSimulateScan:
    def setup_method(self):
        self.domain = (-2.0, 2.0, -2.0, 2.0)
        self.base = standard_lissajous((1.0, 1.0), 64)
        self.plan = make_grid_plan(self.domain, (1.0, 1.0), 2, 2, base=self.base)

    def test_zero_phantom_gives_exact_zero(self):
        rho = DenseField(16, 16, self.domain, np.zeros((16, 16)))
        data = ph.simulate_scan(rho, self.plan, 0.01, ph.NoiseModel(level=0.1, seed=3))
        assert np.all(data.s == 0.0)  # noise scale is a fraction of a zero peak

    def test_noise_scale_is_fraction_of_peak(self):
        rho = make_phantom("vessel", 24, 24, self.domain)
        clean = ph.simulate_scan(rho, self.plan, 0.01, ph.NoiseModel(level=0.0))
        noisy = ph.simulate_scan(rho, self.plan, 0.01, ph.NoiseModel(level=0.1, seed=5))
        peak = np.linalg.norm(clean.s, axis=1).max()
        resid = (noisy.s - clean.s) / (0.1 * peak)
        # residuals are standard normal draws: mean within 5 sigma, spread sane
        assert abs(resid.mean()) <= 5 / np.sqrt(resid.size)
        assert 0.8 <= resid.std() <= 1.2

    def test_deterministic_given_seed(self):
        rho = make_phantom("vessel", 16, 16, self.domain)
        a = ph.simulate_scan(rho, self.plan, 0.01, ph.NoiseModel(level=0.1, seed=9))
        b = ph.simulate_scan(rho, self.plan, 0.01, ph.NoiseModel(level=0.1, seed=9))
        assert np.array_equal(a.s, b.s)
        assert np.array_equal(a.r, b.r)

    def test_linear_in_density_before_noise(self, rng):
        v1 = rng.uniform(0, 1, (12, 12))
        v2 = rng.uniform(0, 1, (12, 12))
        mk = lambda v: DenseField(12, 12, self.domain, v)
        s1 = ph.simulate_scan(mk(v1), self.plan, 0.01, ph.NoiseModel())
        s2 = ph.simulate_scan(mk(v2), self.plan, 0.01, ph.NoiseModel())
        s12 = ph.simulate_scan(mk(v1 + v2), self.plan, 0.01, ph.NoiseModel())
        scale = np.abs(s12.s).max()
        assert np.abs(s12.s - (s1.s + s2.s)).max() <= 1e-12 * scale

    def test_invalid_noise_level(self):
        with pytest.raises(ValueError):
            ph.NoiseModel(level=-0.5)
