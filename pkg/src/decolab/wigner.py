"""
Wigner phase-space functions on a grid.

W(q, p) = (1/2 pi) int ds e^{ips} rho(q - s/2, q + s/2)      (hbar = 1)

On a position grid with spacing dq the pairs (q - s/2, q + s/2) that fall on
grid points have s = 2 k dq, so the s-integral is a length-L DFT over k along
each anti-diagonal of rho. The momentum grid is therefore

    p_j = (j - L/2) dp,    dp = pi / (L dq),    |p| < pi / (2 dq),

and the position marginal sum_j W(q_i, p_j) dp reproduces rho(q_i, q_i)
exactly.

Phase-space evolution uses the Caldeira-Leggett form

    dW/dt = -(p/m) dW/dq + V'(q) dW/dp + 2 gamma d(pW)/dp + D d^2W/dp^2

with fourth-order centered differences (conservative form, zero boundary
values) and RK4 in time. Second-order stencils disperse a translating packet
by a few percent per orbit on typical grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

from .errors import NumericalInstability, ValidationError
from .qbm import GridDensityMatrix, QbmParams, grid_points

Potential = Callable[[np.ndarray], np.ndarray]

IMAG_TOL = 1e-10
HERM_TOL = 1e-8
RK4_LIMIT = 2.5


@dataclass(frozen=True, eq=False)
class WignerGrid:
    """Real W(q_i, p_j) on uniform ``q`` x ``p`` grids (rows are q)."""

    values: np.ndarray
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.iscomplexobj(v):
            raise ValidationError("Wigner values must be real")
        v = v.astype(float)
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if v.shape != (q.size, p.size):
            raise ValidationError(f"values shape {v.shape} does not match grids ({q.size}, {p.size})")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dq(self) -> float:
        return float(self.q[1] - self.q[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    def normalization(self) -> float:
        return float(self.dq * self.dp * np.sum(self.values))

    def centroid(self) -> tuple[float, float]:
        w = self.values
        norm = np.sum(w)
        return float(self.q @ w.sum(axis=1) / norm), float(w.sum(axis=0) @ self.p / norm)

    def covariance(self) -> np.ndarray:
        """Second central moments [[var q, cov], [cov, var p]]."""
        w = self.values / np.sum(self.values)
        qc, pc = self.centroid()
        dq = self.q - qc
        dp = self.p - pc
        vqq = float(dq ** 2 @ w.sum(axis=1))
        vpp = float(w.sum(axis=0) @ dp ** 2)
        vqp = float(dq @ w @ dp)
        return np.array([[vqq, vqp], [vqp, vpp]])

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray, np.ndarray], np.ndarray], q, p, t: float = 0.0):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        qq, pp = np.meshgrid(q, p, indexing="ij")
        return cls(func(qq, pp), q, p, t)


def momentum_grid(size: int, dq: float) -> np.ndarray:
    dp = math.pi / (size * dq)
    return (np.arange(size) - size // 2) * dp


def wigner_of_density(rho: GridDensityMatrix, herm_tol: float = HERM_TOL, imag_tol: float = IMAG_TOL) -> WignerGrid:
    """Wigner transform of a grid density matrix via one FFT per row.

    Raises
    ------
    ValidationError
        If ``rho`` is not Hermitian within ``herm_tol`` (relative to its
        largest entry) or the transform has an imaginary part above
        ``imag_tol``.
    """
    r = rho.values
    size = rho.size
    scale = float(np.max(np.abs(r))) or 1.0
    if rho.hermiticity_error() > herm_tol * scale:
        raise ValidationError("density matrix is not Hermitian")

    i = np.arange(size)[:, None]
    kk = np.arange(size)[None, :]
    k = np.where(kk < size // 2, kk, kk - size)  # signed offset stored at k mod L
    rows, cols = i - k, i + k
    valid = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size) & (np.abs(k) < size // 2)
    anti = np.where(valid, r[rows.clip(0, size - 1), cols.clip(0, size - 1)], 0.0)

    # sum_k anti[i, k] exp(+2 pi i j k / L), then reorder j so p runs from -L/2
    raw = np.fft.fftshift(np.fft.ifft(anti, axis=1) * size, axes=1)
    raw *= rho.dq / math.pi
    resid = float(np.max(np.abs(raw.imag)))
    if resid > imag_tol:
        raise ValidationError(f"Wigner transform has imaginary residue {resid:.2e}")
    return WignerGrid(raw.real.copy(), rho.q, momentum_grid(size, rho.dq), rho.t)


def marginals(w: WignerGrid) -> tuple[np.ndarray, np.ndarray]:
    """(position density over q, momentum density over p)."""
    return w.values.sum(axis=1) * w.dp, w.values.sum(axis=0) * w.dq


def momentum_density(rho: GridDensityMatrix, p: np.ndarray) -> np.ndarray:
    """<p|rho|p> = (1/2 pi) sum_{x,x'} dq^2 e^{-ip(x - x')} rho(x, x'), computed directly."""
    phase = np.exp(1j * np.outer(p, rho.q))  # conj gives e^{-ipx}
    vals = np.sum((phase.conj() @ rho.values) * phase, axis=1)
    return (rho.dq ** 2 / (2 * math.pi)) * vals.real


def negativity_volume(w: WignerGrid) -> float:
    """Phase-space volume of the negative part, dq dp sum max(-W, 0)."""
    return float(w.dq * w.dp * np.sum(np.clip(-w.values, 0, None)))


def packet_wavefunction(q: np.ndarray, q0: float, p0: float, width: float) -> np.ndarray:
    """Minimum-uncertainty packet pi^-1/4 width^-1/2 exp[-(q - q0)^2 / (2 width^2) + i p0 q]."""
    q = np.asarray(q, dtype=float)
    return (math.pi ** -0.25 / math.sqrt(width)) * np.exp(-(q - q0) ** 2 / (2 * width ** 2) + 1j * p0 * q)


def packet_wigner(q, p, q0: float, p0: float, width: float) -> np.ndarray:
    """Analytic transform of :func:`packet_wavefunction`.

    (1/pi) exp[-(q - q0)^2 / width^2 - (p - p0)^2 width^2]; the position
    exponent carries 1/width^2, which is what makes the Gaussian normalized.
    """
    return np.exp(-(q - q0) ** 2 / width ** 2 - (p - p0) ** 2 * width ** 2) / math.pi


def cat_wigner(q, p, separation: float, width: float) -> np.ndarray:
    """Analytic Wigner function of the two-packet cat state of :class:`decolab.qbm.CatStateSpec`.

    Two Gaussian lobes at q = -/+ separation/2 and an interference term
    centred at q = 0 oscillating as cos(p * separation).
    """
    from .qbm import CatStateSpec

    amp2 = CatStateSpec(separation, width).normalization ** 2
    a = separation / 2
    pref = amp2 * math.sqrt(8 * math.pi) * width / (4 * math.pi)
    gp = np.exp(-2 * np.asarray(p) ** 2 * width ** 2)
    q = np.asarray(q)
    lobes = np.exp(-(q + a) ** 2 / (2 * width ** 2)) + np.exp(-(q - a) ** 2 / (2 * width ** 2))
    ridge = 2 * np.exp(-q ** 2 / (2 * width ** 2)) * np.cos(p * separation)
    return pref * gp * (lobes + ridge)


def _gradient(potential: Potential, q: np.ndarray) -> np.ndarray:
    grad = getattr(potential, "gradient", None)
    if grad is not None:
        return np.asarray(grad(q), dtype=float)
    # five-point stencil; exact for polynomials up to degree 4
    h = 1e-3
    return (potential(q - 2 * h) - 8 * potential(q - h) + 8 * potential(q + h) - potential(q + 2 * h)) / (12 * h)


def _d1(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order centered first derivative with zero values beyond the grid."""
    pad = [(0, 0), (0, 0)]
    pad[axis] = (2, 2)
    b = np.pad(a, pad)
    n = a.shape[axis]
    sl = lambda k: b[(slice(None),) * axis + (slice(2 + k, 2 + k + n),)]  # noqa: E731
    return (8 * (sl(1) - sl(-1)) - (sl(2) - sl(-2))) / (12 * h)


def _d2p(a: np.ndarray, h: float) -> np.ndarray:
    b = np.pad(a, [(0, 0), (2, 2)])
    n = a.shape[1]
    return (-b[:, 4:n + 4] + 16 * b[:, 3:n + 3] - 30 * a + 16 * b[:, 1:n + 1] - b[:, :n]) / (12 * h * h)


# Largest |symbol| of the fourth-order stencils, in units of 1/h and 1/h^2.
_D1_MAX = 1.3722
_D2_MAX = 16 / 3


class _PhaseSpaceGenerator:
    def __init__(self, q: np.ndarray, p: np.ndarray, params: QbmParams, potential: Potential | None):
        self.dq = float(q[1] - q[0])
        self.dp = float(p[1] - p[0])
        pot = params.harmonic() if potential is None else potential
        self.force_term = _gradient(pot, q)[:, None]  # V'(q) multiplies dW/dp
        self.velocity = (p / params.mass)[None, :]
        self.p = p[None, :]
        self.gamma = params.gamma
        self.diffusion = params.diffusion

    def __call__(self, w: np.ndarray) -> np.ndarray:
        # antisymmetric stencils telescope, so dq dp sum(W) is conserved exactly
        out = -self.velocity * _d1(w, 0, self.dq) + self.force_term * _d1(w, 1, self.dp)
        if self.gamma:
            out += 2 * self.gamma * _d1(self.p * w, 1, self.dp)
        if self.diffusion:
            out += self.diffusion * _d2p(w, self.dp)
        return out

    def spectral_bound(self) -> float:
        bound = _D1_MAX * float(np.max(np.abs(self.velocity))) / self.dq
        bound += _D1_MAX * float(np.max(np.abs(self.force_term))) / self.dp
        bound += 2 * self.gamma * _D1_MAX * (float(np.max(np.abs(self.p))) / self.dp + 1)
        bound += _D2_MAX * self.diffusion / self.dp ** 2
        return bound


def stability_limit(w: WignerGrid, params: QbmParams, potential: Potential | None = None) -> float:
    return RK4_LIMIT / _PhaseSpaceGenerator(w.q, w.p, params, potential).spectral_bound()


def _generator(w, params, dt, potential):
    if dt <= 0:
        raise ValidationError("dt must be positive")
    gen = _PhaseSpaceGenerator(w.q, w.p, params, potential)
    limit = RK4_LIMIT / gen.spectral_bound()
    if dt > limit:
        raise NumericalInstability(
            f"dt={dt:g} exceeds the RK4 stability limit {limit:.4g} for this grid", suggested_dt=0.9 * limit
        )
    return gen


def _step(gen, w: np.ndarray, dt: float) -> np.ndarray:
    k1 = gen(w)
    k2 = gen(w + 0.5 * dt * k1)
    k3 = gen(w + 0.5 * dt * k2)
    k4 = gen(w + dt * k3)
    new = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    before, after = np.linalg.norm(w), np.linalg.norm(new)
    if not np.isfinite(after) or after > 1.01 * before:
        raise NumericalInstability(f"norm grew from {before:.4g} to {after:.4g} in one step", suggested_dt=0.5 * dt)
    return new


def evolve_wigner(w: WignerGrid, params: QbmParams, dt: float, potential: Potential | None = None) -> WignerGrid:
    """One RK4 step of the phase-space master equation."""
    gen = _generator(w, params, dt, potential)
    return replace(w, values=_step(gen, w.values, dt), t=w.t + dt)


def evolve_wigner_steps(
    w: WignerGrid,
    params: QbmParams,
    dt: float,
    steps: int,
    potential: Potential | None = None,
    output_stride: int = 1,
) -> Iterator[WignerGrid]:
    """Yield the initial grid, then every ``output_stride``-th step up to ``steps``."""
    if output_stride < 1:
        raise ValidationError("output_stride must be >= 1")
    gen = _generator(w, params, dt, potential)
    vals = w.values.copy()
    yield w
    for n in range(1, steps + 1):
        vals = _step(gen, vals, dt)
        if n % output_stride == 0 or n == steps:
            yield replace(w, values=vals.copy(), t=w.t + n * dt)


def classical_liouville_step(w: WignerGrid, mass: float, potential: Potential, dt: float) -> WignerGrid:
    """One step of dW/dt = {H, W}: the phase-space equation without damping or diffusion."""
    return evolve_wigner(w, QbmParams(mass=mass), dt, potential)


def classical_liouville_steps(w: WignerGrid, mass: float, potential: Potential, dt: float, steps: int,
                              output_stride: int = 1) -> Iterator[WignerGrid]:
    return evolve_wigner_steps(w, QbmParams(mass=mass), dt, steps, potential, output_stride)


def harmonic_potential(mass: float, omega: float) -> Potential:
    """V(q) = m omega^2 q^2 / 2 with an exact ``gradient`` attribute."""
    k = mass * omega ** 2

    def v(q):
        return 0.5 * k * np.asarray(q) ** 2

    v.gradient = lambda q: k * np.asarray(q)
    return v


def grid_from_packets(weights, packets, q_min: float, q_max: float, size: int) -> GridDensityMatrix:
    """Mixture sum_i w_i |psi_i><psi_i| of minimum-uncertainty packets given as (q0, p0, width)."""
    q = grid_points(q_min, q_max, size)
    psis = [packet_wavefunction(q, *pk) for pk in packets]
    return GridDensityMatrix.mixture(weights, psis, q_min, q_max)
