import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from decolab import qbm
from decolab import wigner as wg
from decolab.errors import NumericalInstability, ValidationError
from decolab.qbm import CatStateSpec, GridDensityMatrix, QbmParams

CAT = CatStateSpec(8.0, 1.0)


def packet_grid(q0=0.0, p0=0.0, width=1.0, bounds=12.0, size=256):
    q = qbm.grid_points(-bounds, bounds, size)
    psi = wg.packet_wavefunction(q, q0, p0, width)
    return GridDensityMatrix.from_wavefunction(psi, -bounds, bounds)


def phase_grid(func, q_bounds, p_bounds, size):
    q = qbm.grid_points(-q_bounds, q_bounds, size)
    p = qbm.grid_points(-p_bounds, p_bounds, size)
    return wg.WignerGrid.from_function(func, q, p)


def gaussian_fit_residual(w):
    (mq, mp), c = w.centroid(), w.covariance()
    ci = np.linalg.inv(c)
    dq, dp = np.meshgrid(w.q - mq, w.p - mp, indexing="ij")
    g = np.exp(-0.5 * (ci[0, 0] * dq ** 2 + 2 * ci[0, 1] * dq * dp + ci[1, 1] * dp ** 2))
    g *= w.normalization() / (2 * np.pi * np.sqrt(np.linalg.det(c)))
    return np.max(np.abs(w.values - g)) / np.max(np.abs(w.values))


def ridge_height(w):
    return float(np.max(np.abs(w.values[np.argmin(np.abs(w.q))])))


class TestTransform:
    def test_packet(self):
        rho = packet_grid(q0=1.5, p0=-0.7, width=1.2)
        w = wg.wigner_of_density(rho)
        qq, pp = np.meshgrid(w.q, w.p, indexing="ij")
        np.testing.assert_allclose(w.values, wg.packet_wigner(qq, pp, 1.5, -0.7, 1.2), atol=1e-12)
        assert w.values.min() >= -1e-12
        assert w.normalization() == pytest.approx(1, abs=1e-12)

    def test_packet_q_exponent(self):
        # the transform of exp[-(q-q0)^2/2 width^2] has q-exponent (q-q0)^2/width^2
        rho = packet_grid(width=1.0)
        w = wg.wigner_of_density(rho)
        col = w.values[:, np.argmin(np.abs(w.p))]
        q = w.q
        np.testing.assert_allclose(col, np.exp(-q ** 2) / np.pi, atol=1e-12)
        assert np.max(np.abs(col - np.exp(-q ** 2 / 2) / np.pi)) > 0.05

    def test_uniform_band_state(self):
        # rho(q, q') = exp[-(q - q')^2 / (2 l^2)] / width: uniform in q, momentum width 1/l
        size, bounds, ell = 256, 16.0, 2.0
        q = qbm.grid_points(-bounds, bounds, size)
        vals = np.exp(-(q[:, None] - q[None, :]) ** 2 / (2 * ell ** 2)) / (2 * bounds)
        w = wg.wigner_of_density(GridDensityMatrix(vals, -bounds, bounds))
        inner = np.abs(w.q) < 4
        rows = w.values[inner]
        np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape), atol=1e-12)
        profile = rows[0] / rows[0].max()
        np.testing.assert_allclose(profile, np.exp(-w.p ** 2 * ell ** 2 / 2), atol=1e-10)

    def test_cat(self):
        rho = qbm.init_cat_state(CAT, -16, 16, 256)
        w = wg.wigner_of_density(rho)
        qq, pp = np.meshgrid(w.q, w.p, indexing="ij")
        np.testing.assert_allclose(w.values, wg.cat_wigner(qq, pp, 8.0, 1.0), atol=1e-12)
        # at q = 0 the fringes go as cos(separation * p) over a small lobe-tail offset
        ridge = w.values[np.argmin(np.abs(w.q))]
        tail = np.exp(-8.0)
        shape = np.exp(-2 * w.p ** 2) * (np.cos(8.0 * w.p) + tail) / (1 + tail)
        np.testing.assert_allclose(ridge, ridge.max() * shape, atol=1e-12)

    def test_non_hermitian_rejected(self):
        rho = packet_grid(size=64)
        vals = rho.values.copy()
        vals[3, 5] += 1e-3
        with pytest.raises(ValidationError):
            wg.wigner_of_density(GridDensityMatrix(vals, rho.q_min, rho.q_max))

    def test_real_for_hermitian_input(self, rng):
        packets = [(rng.uniform(-3, 3), rng.uniform(-2, 2), 1.0) for _ in range(3)]
        rho = wg.grid_from_packets(rng.dirichlet(np.ones(3)), packets, -16, 16, 128)
        # the transform rejects imaginary residue above imag_tol
        w = wg.wigner_of_density(rho, imag_tol=1e-10)
        assert w.values.dtype == float

    def test_momentum_grid(self):
        rho = packet_grid(size=64)
        w = wg.wigner_of_density(rho)
        assert w.dp == pytest.approx(np.pi / (64 * rho.dq))
        assert w.p[32] == 0


class TestMarginals:
    def test_packet(self):
        rho = packet_grid(q0=-2.0, p0=1.0, width=0.8)
        pos, mom = wg.marginals(wg.wigner_of_density(rho))
        q = rho.q
        expected = np.exp(-(q + 2) ** 2 / 0.8 ** 2) / (0.8 * np.sqrt(np.pi))
        np.testing.assert_allclose(pos, expected, atol=1e-12)
        assert mom.min() >= -1e-8

    def test_cat(self):
        rho = qbm.init_cat_state(CAT, -16, 16, 256)
        w = wg.wigner_of_density(rho)
        pos, mom = wg.marginals(w)
        peaks = np.flatnonzero((pos[1:-1] > pos[:-2]) & (pos[1:-1] > pos[2:])) + 1
        np.testing.assert_allclose(w.q[peaks], [-4, 4], atol=w.dq)
        # momentum fringes: |psi(p)|^2 ~ e^{-2p^2} (1 + cos 8p)
        np.testing.assert_allclose(mom, wg.momentum_density(rho, w.p), atol=1e-12)
        zeros = np.abs(w.p - np.pi / 8) < w.dp
        assert mom[zeros].min() < 1e-2 * mom.max()

    def test_random_mixtures(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 5))
            packets = [(rng.uniform(-4, 4), rng.uniform(-2, 2), rng.uniform(0.7, 1.5)) for _ in range(n)]
            rho = wg.grid_from_packets(rng.dirichlet(np.ones(n)), packets, -16, 16, 256)
            w = wg.wigner_of_density(rho)
            pos, mom = wg.marginals(w)
            assert np.max(np.abs(pos - rho.diagonal())) <= 1e-8
            assert np.max(np.abs(mom - wg.momentum_density(rho, w.p))) <= 1e-8
            assert pos.min() >= -1e-8 and mom.min() >= -1e-8
            assert wg.negativity_volume(w) <= 1e-8


class TestNegativity:
    def test_packet(self):
        assert wg.negativity_volume(wg.wigner_of_density(packet_grid())) <= 1e-8

    def test_cat(self):
        w = wg.wigner_of_density(qbm.init_cat_state(CAT, -16, 16, 256))
        assert wg.negativity_volume(w) > 0.01

    def test_decoheres_monotonically(self):
        # coupled scenario in a harmonic well: negativity falls to < 1e-3
        params = QbmParams(omega=1.0, gamma=0.02, theta=10.0)
        rho = qbm.init_cat_state(CAT, -12, 12, 256)
        neg = [wg.negativity_volume(wg.wigner_of_density(r))
               for r in qbm.evolve_master_equation(rho, params, 0.004, 150, output_stride=10)]
        assert np.all(np.diff(neg) <= 1e-4)
        assert neg[0] > 0.3 and neg[-1] < 1e-3


class TestEvolution:
    def test_rigid_rotation(self):
        pot = wg.harmonic_potential(1.0, 1.0)
        w0 = phase_grid(lambda q, p: wg.packet_wigner(q, p, 0, 0, 0.5), 8, 8, 256)
        c0 = w0.covariance()
        steps = 225
        w = list(wg.classical_liouville_steps(w0, 1.0, pot, (np.pi / 2) / steps, steps, steps))[-1]
        c = w.covariance()
        assert c[0, 0] == pytest.approx(c0[1, 1], rel=0.01)
        assert c[1, 1] == pytest.approx(c0[0, 0], rel=0.01)

    def test_free_shear(self):
        w0 = phase_grid(lambda q, p: wg.packet_wigner(q, p, -2, 1, 1), 10, 5, 192)
        t = 1.0
        steps = int(np.ceil(t / (0.9 * wg.stability_limit(w0, QbmParams()))))
        w = list(wg.evolve_wigner_steps(w0, QbmParams(), t / steps, steps, output_stride=steps))[-1]
        qq, pp = np.meshgrid(w.q, w.p, indexing="ij")
        exact = wg.packet_wigner(qq - pp * t, pp, -2, 1, 1)
        assert np.max(np.abs(w.values - exact)) <= 1e-3 * exact.max()

    def test_normalization_per_step(self):
        params = QbmParams(omega=1.0, gamma=0.05, theta=10.0)
        w = phase_grid(lambda q, p: wg.packet_wigner(q, p, 1, 0, 1), 10, 10, 128)
        dt = 0.9 * wg.stability_limit(w, params)
        for _ in range(50):
            new = wg.evolve_wigner(w, params, dt)
            assert abs(new.normalization() - w.normalization()) <= 1e-8
            w = new

    def test_diffusion_ridge_matches_density_solver(self):
        params = QbmParams(diffusion_coefficient=1 / 16)
        tau = params.predicted_tau_d(8.0)
        dt, steps = 0.0025, int(round(tau / 0.0025))
        rho = qbm.init_cat_state(CAT, -16, 16, 256)
        from_rho = [wg.wigner_of_density(r) for r in qbm.evolve_master_equation(rho, params, dt, steps, output_stride=25)]
        w0 = phase_grid(lambda q, p: wg.cat_wigner(q, p, 8.0, 1.0), 12, 6, 192)
        direct = list(wg.evolve_wigner_steps(w0, params, dt, steps, output_stride=25))
        for a, b in zip(from_rho, direct):
            assert ridge_height(b) / ridge_height(direct[0]) == pytest.approx(
                ridge_height(a) / ridge_height(from_rho[0]), rel=0.02)
        assert ridge_height(direct[-1]) < 0.5 * ridge_height(direct[0])

        def lobe_mass(w):
            return w.dq * w.dp * np.sum(w.values[np.abs(w.q) >= 2])

        assert lobe_mass(direct[-1]) == pytest.approx(lobe_mass(direct[0]), rel=0.02)

    def test_liouville_is_evolve_without_bath(self):
        pot = wg.harmonic_potential(2.0, 0.7)
        w = phase_grid(lambda q, p: wg.packet_wigner(q, p, 1, -1, 1), 8, 8, 128)
        dt = 0.5 * wg.stability_limit(w, QbmParams(mass=2.0), pot)
        for _ in range(5):
            a = wg.classical_liouville_step(w, 2.0, pot, dt)
            b = wg.evolve_wigner(w, QbmParams(mass=2.0), dt, pot)
            assert np.max(np.abs(a.values - b.values)) <= 1e-12
            w = a

    def test_instability(self):
        w = phase_grid(lambda q, p: wg.packet_wigner(q, p, 0, 0, 1), 8, 8, 64)
        limit = wg.stability_limit(w, QbmParams())
        with pytest.raises(NumericalInstability) as info:
            wg.evolve_wigner(w, QbmParams(), 3 * limit)
        assert info.value.suggested_dt < limit

    def test_numeric_gradient(self):
        # a potential without a gradient attribute uses a finite-difference derivative
        def quadratic(x):
            return 0.5 * np.asarray(x) ** 2

        w = phase_grid(lambda q, p: wg.packet_wigner(q, p, 1, 0, 1), 8, 8, 64)
        dt = 0.5 * wg.stability_limit(w, QbmParams(), quadratic)
        a = wg.classical_liouville_step(w, 1.0, quadratic, dt)
        b = wg.classical_liouville_step(w, 1.0, wg.harmonic_potential(1.0, 1.0), dt)
        assert np.max(np.abs(a.values - b.values)) <= 1e-10


class TestClassicalLimit:
    def test_centroid_one_period(self):
        pot = wg.harmonic_potential(1.0, 1.0)
        w0 = phase_grid(lambda q, p: wg.packet_wigner(q, p, 3, 0, 1), 8, 8, 256)
        steps = 900
        for w in wg.classical_liouville_steps(w0, 1.0, pot, 2 * np.pi / steps, steps, 45):
            cq, cp = w.centroid()
            assert abs(cq - 3 * np.cos(w.t)) <= 0.03 and abs(cp + 3 * np.sin(w.t)) <= 0.03

    def test_gaussian_family_preserved(self):
        pot = wg.harmonic_potential(1.0, 1.0)
        w0 = phase_grid(lambda q, p: wg.packet_wigner(q, p, 3, 0, 1), 8, 8, 256)
        steps = 900
        res = [gaussian_fit_residual(w) for w in wg.classical_liouville_steps(w0, 1.0, pot, 2 * np.pi / steps, steps, 225)]
        assert max(res) <= 1e-3

    @pytest.mark.slow
    def test_quartic_regression(self):
        def pot(x):
            return 0.25 * np.asarray(x) ** 4

        classical = solve_ivp(lambda t, y: [y[1], -y[0] ** 3], (0, 2), [1.5, 0], rtol=1e-10, atol=1e-12)
        cent = []
        for size in (90, 180):
            w0 = phase_grid(lambda q, p: wg.packet_wigner(q, p, 1.5, 0, 1), 4.5, 7, size)
            steps = int(np.ceil(2 / (0.9 * wg.stability_limit(w0, QbmParams(), pot))))
            final = list(wg.classical_liouville_steps(w0, 1.0, pot, 2 / steps, steps, steps))[-1]
            cent.append(np.array(final.centroid()))
        assert np.max(np.abs(cent[0] - cent[1])) <= 0.02
        # the spread packet no longer follows the single trajectory
        assert np.max(np.abs(cent[1] - classical.y[:, -1])) > 0.1


def test_grid_from_packets_validation():
    with pytest.raises(ValidationError):
        wg.WignerGrid(np.zeros((3, 3)), np.arange(3.0), np.arange(4.0))
