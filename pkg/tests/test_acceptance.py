"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import time

import numpy as np
import pytest

from decolab import einselection as es
from decolab import hilbert as hb
from decolab import measurement as ms
from decolab import qbm
from decolab import spinbath as sb
from decolab import wigner as wg
from decolab.cli import make_rng
from decolab.errors import DegenerateSpectrum
from decolab.hilbert import StateVector
from decolab.qbm import CatStateSpec, GridDensityMatrix, QbmParams

SEED = 42
CASES = 1000


def test_spin_bath_brute_force(verdict):
    start = time.perf_counter()
    model = sb.SpinBathModel.random(8, make_rng(SEED), "equal")
    times = np.linspace(0, 20, 50)
    z = sb.decoherence_factor(model, times)
    # the reduced qubit's off-diagonal entry is z a b*
    brute = np.array([rho.matrix[0, 1] for rho in sb.brute_force_reduced_density(model, times)])
    err = float(np.max(np.abs(brute / (model.a * np.conj(model.b)) - z)))
    elapsed = time.perf_counter() - start
    ok = verdict(1, err <= 1e-10 and elapsed < 10, f"max |z - z_brute| = {err:.2e}, {elapsed:.2f} s")
    assert ok


def test_spin_bath_long_time_average(verdict):
    start = time.perf_counter()
    model = sb.SpinBathModel.random(20, make_rng(SEED), "equal")
    T = 1e3 / model.couplings.min()
    # window [T, 2T] skips the initial |z| = 1 peak
    emp = sb.time_average_mag2(model, T, 200_001, t_start=T)
    elapsed = time.perf_counter() - start
    ratio = emp / 2.0 ** -20
    ok = verdict(2, 0.5 <= ratio <= 2 and elapsed < 5, f"empirical / 2^-20 = {ratio:.3f}, {elapsed:.2f} s")
    assert ok


def test_decoherence_time_si(verdict):
    qbm.tau_d_si(300, 1e-3, 1e-2, 1.0)
    runs = []
    for _ in range(21):
        start = time.perf_counter()
        res = qbm.tau_d_si(300, 1e-3, 1e-2, 1.0)
        runs.append(time.perf_counter() - start)
    elapsed = float(np.median(runs))
    ok = 1e-41 <= res.ratio <= 2e-41 and abs(res.ratio / 1.3425108e-41 - 1) <= 1e-7 and elapsed < 1e-3
    assert verdict(3, ok, f"ratio = {res.ratio:.7e}, median {elapsed * 1e6:.1f} us")


def test_solver_matches_formula(verdict):
    start = time.perf_counter()
    spec = CatStateSpec(8.0, 1.0)
    params = QbmParams(gamma=0.02, theta=1.5625)
    dt = 0.005
    tau = params.predicted_tau_d(spec.separation)
    rho = qbm.init_cat_state(spec, -12, 12, 256)
    # early window: the peak decays as exp(-t / tau_D) before diffusion broadens it
    steps = int(round(0.1 * tau / dt))
    series = [(r.t, qbm.offdiag_peak_norm(r, spec)) for r in qbm.evolve_master_equation(rho, params, dt, steps)]
    fitted = qbm.fit_decoherence_rate(series)
    elapsed = time.perf_counter() - start
    ratio = fitted / tau
    detail = (f"tau_D = {tau:.4f} ({tau / dt:.0f} steps), gamma tau_D = {params.gamma * tau:.3f}, "
              f"fitted / predicted = {ratio:.3f}, {elapsed:.2f} s")
    ok = abs(ratio - 1) <= 0.10 and params.gamma * tau <= 0.01 and elapsed < 60
    assert verdict(4, ok, detail)


def test_measurement_chain(verdict):
    rng = make_rng(SEED)
    worst = 0.0
    for _ in range(20):
        model = ms.MeasurementModel.random(3, rng)
        env = ms.EnvironmentModel.orthonormal(3, rng=rng)
        psi = hb.random_state([3], rng)
        chain = ms.chain_with_environment(model, env, psi).reduced_sa.matrix
        reduced = ms.reduce(ms.premeasure(model, psi).projector(), ms.pointer_projectors(model)).matrix
        worst = max(worst, float(np.max(np.abs(chain - reduced))))
    assert verdict(5, worst <= 1e-12, f"max entrywise difference over 20 models = {worst:.2e}")


def test_einselection_statistics(verdict):
    rng = make_rng(SEED)
    model = es.DiagonalCouplingModel.random(2, 100, rng, equal_env_weights=True)
    omega = np.sort(model.frequencies(0, 1))
    distinct = bool(np.min(np.diff(omega)) > 0)
    delta2 = es.mean_square_correlation(model, 0, 1)
    T = 1e4 / np.min(np.diff(omega))
    t = rng.uniform(0, T, 40_000)
    emp = float(np.mean(np.abs(es.correlation_amplitude(model, 0, 1, t)) ** 2))
    comm = 0.0
    for _ in range(20):
        n_sys = int(rng.integers(2, 6))
        sizes = [1] * n_sys if rng.random() < 0.5 else [n_sys - 1, 1]
        m = es.DiagonalCouplingModel.random(n_sys, int(rng.integers(2, 8)), rng, block_sizes=sizes)
        part = es.coherent_partition(m)
        lam = es.pointer_observable(part, np.arange(len(part.blocks), dtype=float))
        comm = max(comm, es.commutator_norm(lam, es.interaction_hamiltonian(m)))
    ok = distinct and delta2 == pytest.approx(0.01, abs=1e-15) and abs(emp / delta2 - 1) <= 0.05 and comm <= 1e-12
    detail = f"Delta^2 = {delta2:.15f}, empirical / Delta^2 = {emp / delta2:.4f}, max commutator = {comm:.1e}"
    assert verdict(6, ok, detail)


def test_wigner_marginals(verdict):
    rng = make_rng(SEED)
    pos_err = mom_err = neg = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        packets = [(rng.uniform(-4, 4), rng.uniform(-2, 2), rng.uniform(0.7, 1.5)) for _ in range(n)]
        rho = wg.grid_from_packets(rng.dirichlet(np.ones(n)), packets, -16, 16, 256)
        w = wg.wigner_of_density(rho)
        pos, mom = wg.marginals(w)
        pos_err = max(pos_err, float(np.max(np.abs(pos - rho.diagonal()))))
        mom_err = max(mom_err, float(np.max(np.abs(mom - wg.momentum_density(rho, w.p)))))
        neg = max(neg, wg.negativity_volume(w))
    ok = max(pos_err, mom_err) <= 1e-8 and neg <= 1e-8
    assert verdict(7, ok, f"marginal residuals q {pos_err:.1e}, p {mom_err:.1e}; negativity {neg:.1e}")


def test_classical_limit(verdict):
    q0 = 3.0
    pot = wg.harmonic_potential(1.0, 1.0)
    q = qbm.grid_points(-8, 8, 256)
    w0 = wg.WignerGrid.from_function(lambda x, p: wg.packet_wigner(x, p, q0, 0, 1), q, q.copy())
    steps = 900
    worst = 0.0
    for w in wg.classical_liouville_steps(w0, 1.0, pot, 2 * np.pi / steps, steps, 5):
        cq, cp = w.centroid()
        worst = max(worst, float(np.hypot(cq - q0 * np.cos(w.t), cp + q0 * np.sin(w.t))) / q0)
    assert verdict(8, worst <= 0.01, f"max centroid error / amplitude over one period = {worst:.1e}")


def _trace_hermiticity_cases(rng):
    for _ in range(CASES):
        d = int(rng.integers(2, 7))
        rho = hb.random_density([d], rng, rank=int(rng.integers(1, d + 1)))
        out = hb.evolve_von_neumann(rho, hb.Operator(hb.random_hermitian(d, rng)), rng.uniform(-10, 10))
        assert abs(hb.trace(out) - 1) <= 1e-12 and hb.hermiticity_error(out.matrix) <= 1e-12
    q = qbm.grid_points(-6, 6, 24)
    for _ in range(CASES):
        psis = [np.exp(-(q - c) ** 2 / 4 + 1j * k * q) for c, k in rng.uniform(-1, 1, (2, 2))]
        psis = [p / np.sqrt(np.sum(abs(p) ** 2) * (q[1] - q[0])) for p in psis]
        rho = GridDensityMatrix.mixture(rng.dirichlet([1, 1]), psis, -6, 6)
        params = QbmParams(omega=rng.uniform(0, 0.5), gamma=rng.uniform(0, 0.05), theta=rng.uniform(5, 10))
        new = qbm.step_master_equation(rho, params, 0.5 * qbm.stability_limit(rho, params))
        assert abs(new.trace() - rho.trace()) <= 1e-12 and new.hermiticity_error() <= 1e-12


def _bounded_z_cases(rng):
    for _ in range(CASES):
        m = sb.SpinBathModel.random(int(rng.integers(1, 25)), rng, "random")
        z = sb.decoherence_factor(m, rng.uniform(-100, 100, 10))
        assert np.all(np.abs(z) <= 1 + 1e-12)


def _purity_cases(rng):
    for _ in range(CASES):
        d = int(rng.integers(2, 6))
        rho = hb.random_density([d], rng, rank=int(rng.integers(1, d + 1)))
        u = hb.random_unitary(d, rng)
        cut = int(rng.integers(1, d))
        projs = [u[:, :cut] @ u[:, :cut].conj().T, u[:, cut:] @ u[:, cut:].conj().T]
        assert hb.purity(ms.reduce(rho, projs)) <= hb.purity(rho) + 1e-12


def _tridecompose_cases(rng):
    done = 0
    while done < CASES:
        d1, d2, d3 = (int(x) for x in rng.integers(2, 4, 3))
        k = min(d1, d2)
        u1, u2 = hb.random_unitary(d1, rng), hb.random_unitary(d2, rng)
        alpha = np.sqrt(rng.dirichlet(np.ones(k))) * np.exp(1j * rng.uniform(0, 2 * np.pi, k))
        amps = sum(alpha[i] * np.kron(np.kron(u1[:, i], u2[:, i]), hb.random_state([d3], rng).amplitudes)
                   for i in range(k))
        psi = StateVector(amps / np.linalg.norm(amps), (d1, d2, d3))
        try:
            out = ms.tridecompose(psi)
        except DegenerateSpectrum:
            continue
        assert np.linalg.norm(ms.reconstruct(out, psi.layout) - psi.amplitudes) <= 1e-10
        done += 1


def test_property_suites(verdict):
    suites = {
        "trace/hermiticity": _trace_hermiticity_cases,
        "|z| <= 1": _bounded_z_cases,
        "purity under reduce": _purity_cases,
        "tridecompose round trip": _tridecompose_cases,
    }
    failed = []
    for name, suite in suites.items():
        try:
            suite(make_rng(SEED))
        except AssertionError:
            failed.append(name)
    detail = f"{len(suites) - len(failed)}/{len(suites)} suites hold on {CASES} cases each"
    if failed:
        detail += f"; violated: {', '.join(failed)}"
    assert verdict(9, not failed, detail)
