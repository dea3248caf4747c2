"""
High-temperature quantum Brownian motion on a position grid.

Evolves the position-space density matrix rho(q, q', t) under

    d rho/dt = -i [H, rho]
               - gamma (q - q') (d/dq - d/dq') rho
               - D (q - q')^2 rho,            D = 2 m gamma theta,

with H = p^2/2m + V(q) and theta = k_B T (hbar = 1). The default potential is
the harmonic V(q) = m Omega^2 q^2 / 2 with the renormalized frequency Omega.

Discretization
--------------
- Uniform grid q_i = q_min + i dq, i = 0..L-1, dq = (q_max - q_min) / L.
- Centered second-order differences with zero Dirichlet data outside the grid.
- Classical fourth-order Runge-Kutta in time. The dominant eigenvalues of the
  discrete generator are imaginary, |lambda| <= 2/(m dq^2) from the kinetic
  term, so the step must satisfy roughly dt <= 1.25 m dq^2 (RK4 reaches
  2*sqrt(2) on the imaginary axis; ``stability_limit`` keeps a margin and
  adds the potential, damping and diffusion contributions).

The discrete generator keeps trace and Hermiticity exactly (up to roundoff):
the damping and diffusion factors vanish on the diagonal and the unitary part
is a commutator with a Hermitian matrix. Positivity is not enforced.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy import constants

from .errors import NumericalInstability, ValidationError

Potential = Callable[[np.ndarray], np.ndarray]

RK4_IMAG_LIMIT = 2.5  # margin below 2*sqrt(2)
NORM_GROWTH_LIMIT = 0.01
EDGE_MASS_LIMIT = 1e-8


@dataclass(frozen=True)
class QbmParams:
    """Dimensionless oscillator and bath parameters (hbar = 1).

    ``diffusion_coefficient`` overrides D = 2 m gamma theta, which allows the
    pure-dephasing limit gamma -> 0 at fixed D. ``mass = inf`` switches off
    the kinetic term.
    """

    mass: float = 1.0
    omega: float = 0.0
    gamma: float = 0.0
    theta: float = 0.0
    diffusion_coefficient: float | None = None

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError("mass must be positive")
        if min(self.omega, self.gamma, self.theta) < 0:
            raise ValidationError("omega, gamma and theta must be non-negative")
        if self.diffusion_coefficient is not None and not self.diffusion_coefficient >= 0:
            raise ValidationError("diffusion_coefficient must be non-negative")
        if self.gamma > 0 and not self.high_temperature:
            warnings.warn(
                f"theta={self.theta} is not >> max(gamma, omega)={max(self.gamma, self.omega)}; "
                "the high-temperature master equation may not apply",
                stacklevel=3,
            )

    @property
    def diffusion(self) -> float:
        """D = 2 m gamma theta unless set explicitly."""
        if self.diffusion_coefficient is not None:
            return self.diffusion_coefficient
        if self.gamma == 0 or self.theta == 0:
            return 0.0
        return 2 * self.mass * self.gamma * self.theta

    @property
    def high_temperature(self) -> bool:
        return self.theta >= 10 * max(self.gamma, self.omega)

    def harmonic(self) -> Potential:
        k = self.mass * self.omega ** 2 if self.omega else 0.0
        return lambda q: 0.5 * k * np.asarray(q) ** 2

    def thermal_wavelength(self) -> float:
        """lambda_dB = (2 m theta)^-1/2."""
        return 1 / math.sqrt(2 * self.mass * self.theta) if self.theta > 0 else math.inf

    def predicted_tau_d(self, separation: float) -> float:
        """tau_R (lambda_dB / separation)^2 with tau_R = 1/gamma; equals 1/(D separation^2)."""
        d = self.diffusion
        return 1 / (d * separation ** 2) if d > 0 else math.inf


@dataclass(frozen=True, eq=False)
class GridDensityMatrix:
    """rho(q_i, q'_j) sampled on a uniform square grid."""

    values: np.ndarray
    q_min: float
    q_max: float
    t: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"grid density matrix must be square, got {v.shape}")
        if not self.q_max > self.q_min:
            raise ValidationError("q_max must exceed q_min")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.size

    @property
    def q(self) -> np.ndarray:
        return grid_points(self.q_min, self.q_max, self.size)

    def trace(self) -> complex:
        return complex(self.dq * np.trace(self.values))

    def purity(self) -> float:
        return float(self.dq ** 2 * np.sum(np.abs(self.values) ** 2))

    def hermiticity_error(self) -> float:
        v = self.values
        return float(np.max(np.abs(v - v.conj().T)))

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).real.copy()

    @classmethod
    def from_wavefunction(cls, psi: np.ndarray, q_min: float, q_max: float, t: float = 0.0) -> GridDensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()), q_min, q_max, t)

    @classmethod
    def mixture(cls, weights: Sequence[float], psis: Sequence[np.ndarray], q_min: float, q_max: float):
        vals = sum(w * np.outer(p, p.conj()) for w, p in zip(weights, psis))
        return cls(vals, q_min, q_max)


def grid_points(q_min: float, q_max: float, size: int) -> np.ndarray:
    return q_min + (q_max - q_min) / size * np.arange(size)


@dataclass(frozen=True)
class CatStateSpec:
    """Two Gaussian packets exp[-(q -/+ separation/2)^2 / (4 width^2)] in equal superposition."""

    separation: float
    width: float = 1.0

    def __post_init__(self):
        if self.separation < 0 or self.width <= 0:
            raise ValidationError("need separation >= 0 and width > 0")

    @property
    def widely_separated(self) -> bool:
        return self.separation >= 4 * self.width

    @property
    def normalization(self) -> float:
        """A such that the superposition has unit norm, overlap term included."""
        overlap = math.exp(-self.separation ** 2 / (8 * self.width ** 2))
        return (self.width * math.sqrt(2 * math.pi) * (1 + overlap)) ** -0.5

    def wavefunction(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        a, s, w = self.normalization, self.separation / 2, self.width
        chi_plus = a * np.exp(-(q + s) ** 2 / (4 * w ** 2))
        chi_minus = a * np.exp(-(q - s) ** 2 / (4 * w ** 2))
        return ((chi_plus + chi_minus) / math.sqrt(2)).astype(complex)


def _edge_mass(psi: np.ndarray, dq: float) -> float:
    edge = max(1, psi.size // 32)
    return float(dq * (np.sum(np.abs(psi[:edge]) ** 2) + np.sum(np.abs(psi[-edge:]) ** 2)))


def init_cat_state(spec: CatStateSpec, q_min: float, q_max: float, size: int) -> GridDensityMatrix:
    """rho(q, q') = psi(q) psi*(q') for the cat wavefunction.

    Raises ``ValidationError("grid too small ...")`` when more than 1e-8 of
    the norm sits in the outer 1/32 of the grid on either side.
    """
    q = grid_points(q_min, q_max, size)
    psi = spec.wavefunction(q)
    dq = (q_max - q_min) / size
    leak = _edge_mass(psi, dq)
    if leak > EDGE_MASS_LIMIT:
        raise ValidationError(f"grid too small: {leak:.2e} of the norm lies at the boundary")
    return GridDensityMatrix.from_wavefunction(psi, q_min, q_max)


class _Generator:
    """Right-hand side of the master equation on a fixed grid."""

    def __init__(self, q: np.ndarray, params: QbmParams, potential: Potential | None):
        self.dq = q[1] - q[0]
        self.params = params
        v = (params.harmonic() if potential is None else potential)(q)
        v = np.asarray(v, dtype=float)
        sep = q[:, None] - q[None, :]
        self.dv = v[:, None] - v[None, :]
        self.sep = sep
        self.damp = -params.gamma * sep / (2 * self.dq)
        self.dephase = -params.diffusion * sep ** 2
        self.kin = 1j / (2 * params.mass * self.dq ** 2)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        # padded copy gives the zero Dirichlet neighbours
        p = np.zeros((r.shape[0] + 2, r.shape[1] + 2), dtype=complex)
        p[1:-1, 1:-1] = r
        c = p[1:-1, 1:-1]
        up, down = p[2:, 1:-1], p[:-2, 1:-1]
        right, left = p[1:-1, 2:], p[1:-1, :-2]
        out = self.kin * ((up + down) - (right + left))
        out += (-1j * self.dv + self.dephase) * c
        if self.params.gamma:
            out += self.damp * ((up - down) - (right - left))
        return out

    def spectral_bound(self) -> float:
        m = self.params.mass
        bound = 2 / (m * self.dq ** 2)
        bound += float(np.max(np.abs(self.dv)))
        bound += self.params.gamma * float(np.max(np.abs(self.sep))) * 2 / self.dq
        bound += float(np.max(np.abs(self.dephase)))
        return bound


def stability_limit(rho: GridDensityMatrix, params: QbmParams, potential: Potential | None = None) -> float:
    """Largest dt the RK4 stepper accepts on this grid."""
    return RK4_IMAG_LIMIT / _Generator(rho.q, params, potential).spectral_bound()


def _rk4(f: _Generator, r: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(r)
    k2 = f(r + 0.5 * dt * k1)
    k3 = f(r + 0.5 * dt * k2)
    k4 = f(r + dt * k3)
    return r + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _checked_generator(rho, params, dt, potential) -> _Generator:
    if dt <= 0:
        raise ValidationError("dt must be positive")
    gen = _Generator(rho.q, params, potential)
    limit = RK4_IMAG_LIMIT / gen.spectral_bound()
    if dt > limit:
        raise NumericalInstability(
            f"dt={dt:g} exceeds the RK4 stability limit {limit:.4g} for this grid", suggested_dt=0.9 * limit
        )
    return gen


def _guarded_step(gen: _Generator, r: np.ndarray, dt: float) -> np.ndarray:
    new = _rk4(gen, r, dt)
    before = np.linalg.norm(r)
    after = np.linalg.norm(new)
    if not np.isfinite(after) or after > (1 + NORM_GROWTH_LIMIT) * before:
        raise NumericalInstability(
            f"norm grew from {before:.4g} to {after:.4g} in one step",
            suggested_dt=0.5 * dt,
        )
    return new


def step_master_equation(
    rho: GridDensityMatrix, params: QbmParams, dt: float, potential: Potential | None = None
) -> GridDensityMatrix:
    """Advance ``rho`` by one RK4 step of size ``dt``.

    Raises
    ------
    NumericalInstability
        If ``dt`` is above the stability limit or the Frobenius norm grows by
        more than 1% during the step.
    """
    gen = _checked_generator(rho, params, dt, potential)
    return replace(rho, values=_guarded_step(gen, rho.values, dt), t=rho.t + dt)


def evolve_master_equation(
    rho: GridDensityMatrix,
    params: QbmParams,
    dt: float,
    steps: int,
    potential: Potential | None = None,
    output_stride: int = 1,
) -> Iterator[GridDensityMatrix]:
    """Yield the initial state and then every ``output_stride``-th step up to ``steps``."""
    if output_stride < 1:
        raise ValidationError("output_stride must be >= 1")
    gen = _checked_generator(rho, params, dt, potential)
    r = rho.values.copy()
    yield rho
    for n in range(1, steps + 1):
        r = _guarded_step(gen, r, dt)
        if n % output_stride == 0 or n == steps:
            yield replace(rho, values=r.copy(), t=rho.t + n * dt)


def _window_sum(values: np.ndarray, q: np.ndarray, dq: float, centre: tuple[float, float], half: float) -> float:
    rows = np.abs(q - centre[0]) <= half
    cols = np.abs(q - centre[1]) <= half
    return float(dq * dq * np.sum(np.abs(values[np.ix_(rows, cols)])))


def offdiag_peak_norm(rho: GridDensityMatrix, spec: CatStateSpec) -> float:
    """Integrated |rho| over the two off-diagonal peak windows (half-width 3 widths)."""
    s, half = spec.separation / 2, 3 * spec.width
    q, dq = rho.q, rho.dq
    return _window_sum(rho.values, q, dq, (s, -s), half) + _window_sum(rho.values, q, dq, (-s, s), half)


def diag_peak_norm(rho: GridDensityMatrix, spec: CatStateSpec) -> float:
    """Integrated |rho| over the two diagonal peak windows."""
    s, half = spec.separation / 2, 3 * spec.width
    q, dq = rho.q, rho.dq
    return _window_sum(rho.values, q, dq, (s, s), half) + _window_sum(rho.values, q, dq, (-s, -s), half)


def coherence_ratio(rho: GridDensityMatrix, spec: CatStateSpec) -> float:
    """offdiag / diag peak norms.

    Packet spreading and the intra-packet dephasing of width^2 scale affect
    both windows alike, so this ratio decays at the rate D separation^2.
    """
    return offdiag_peak_norm(rho, spec) / diag_peak_norm(rho, spec)


def fit_decoherence_rate(series: Sequence[tuple[float, float]]) -> float:
    """Decay time from a least-squares line through (t, log value).

    Returns ``math.inf`` when the fitted slope is not negative.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 5 or arr.shape[1] != 2:
        raise ValidationError("need at least 5 (t, value) points")
    t, y = arr[:, 0], arr[:, 1]
    if np.any(y <= 0):
        raise ValidationError("peak norms must be positive to fit an exponential")
    slope = np.polyfit(t, np.log(y), 1)[0]
    # a constant series gives a slope of pure roundoff
    if slope >= -1e-12 * max(1.0, 1 / max(np.ptp(t), 1e-300)):
        return math.inf
    return float(-1 / slope)


class TauD(NamedTuple):
    lambda_db_m: float
    tau_d_s: float
    ratio: float


def tau_d_si(temperature_k: float, mass_kg: float, delta_q_m: float, tau_r_s: float) -> TauD:
    """Thermal de Broglie wavelength and decoherence time in SI units.

    lambda_dB = hbar / sqrt(2 m k_B T), tau_D = tau_R (lambda_dB / delta_q)^2.
    """
    if min(temperature_k, mass_kg, delta_q_m, tau_r_s) <= 0:
        raise ValidationError("all inputs must be positive")
    lam = constants.hbar / math.sqrt(2 * mass_kg * constants.k * temperature_k)
    ratio = (lam / delta_q_m) ** 2
    return TauD(lam, tau_r_s * ratio, ratio)
