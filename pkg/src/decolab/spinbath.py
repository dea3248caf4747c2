"""
Exactly solvable spin-bath dephasing model.

A qubit (basis |u>, |d>) couples to N bath qubits through

    H = sigma_z (x) sum_k g_k sigma_z^(k)

with a product initial state (a|u> + b|d>) (x)_k (alpha_k|u_k> + beta_k|d_k>).
Under U = exp(-iHt) the |u> branch drives the bath into |e_u(t)> and the |d>
branch into |e_d(t)> = |e_u(-t)>. The reduced qubit state is

    [[|a|^2,          z(t) a b*],
     [z(t)* a* b,     |b|^2    ]]

with decoherence factor

    z(t) = <e_d(t)|e_u(t)> = prod_k (|alpha_k|^2 e^{-2i g_k t} + |beta_k|^2 e^{2i g_k t}).

Each bath spin contributes a relative phase of 2 g_k t, which is what makes
|z|^2 = prod_k {1 + [(|alpha_k|^2 - |beta_k|^2)^2 - 1] sin^2(2 g_k t)}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hilbert as hb
from .errors import ValidationError
from .hilbert import DensityOperator, Operator, SpaceLayout, StateVector

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpinBathModel:
    a: complex
    b: complex
    couplings: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.couplings, dtype=float).ravel()
        al = np.asarray(self.alpha, dtype=complex).ravel()
        be = np.asarray(self.beta, dtype=complex).ravel()
        if g.size < 1:
            raise ValidationError("bath needs at least one spin")
        if al.shape != g.shape or be.shape != g.shape:
            raise ValidationError("alpha, beta and couplings must all have length N")
        if not np.all(np.isfinite(g)):
            raise ValidationError("couplings must be finite")
        if abs(abs(self.a) ** 2 + abs(self.b) ** 2 - 1) > NORM_TOL:
            raise ValidationError("|a|^2 + |b|^2 must equal 1")
        bad = np.flatnonzero(np.abs(np.abs(al) ** 2 + np.abs(be) ** 2 - 1) > NORM_TOL)
        if bad.size:
            raise ValidationError(f"bath spin {bad[0]} is not normalized")
        for name, arr in (("couplings", g), ("alpha", al), ("beta", be)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))

    @property
    def n(self) -> int:
        return self.couplings.size

    @property
    def weights_up(self) -> np.ndarray:
        return np.abs(self.alpha) ** 2

    @property
    def weights_down(self) -> np.ndarray:
        return np.abs(self.beta) ** 2

    @classmethod
    def random(
        cls,
        n: int,
        rng: np.random.Generator,
        amplitudes: str = "equal",
        coupling_range: tuple[float, float] = (0.5, 1.5),
        a: complex | None = None,
        b: complex | None = None,
    ) -> SpinBathModel:
        """Couplings i.i.d. uniform on ``coupling_range``.

        ``amplitudes="equal"`` puts every bath spin in (|u>+|d>)/sqrt(2);
        ``"random"`` draws Haar-random bath spin states. The system state
        defaults to (|u>+|d>)/sqrt(2).
        """
        g = rng.uniform(*coupling_range, size=n)
        if amplitudes == "equal":
            al = np.full(n, 1 / np.sqrt(2), dtype=complex)
            be = al.copy()
        elif amplitudes == "random":
            z = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            al, be = z[:, 0], z[:, 1]
        else:
            raise ValidationError(f"unknown amplitude mode {amplitudes!r}; use 'equal' or 'random'")
        if a is None and b is None:
            a = b = 1 / np.sqrt(2)
        return cls(a, b, g, al, be)


def decoherence_factor(model: SpinBathModel, t) -> np.ndarray | complex:
    """z(t); ``t`` may be a scalar or an array of times."""
    t = np.asarray(t, dtype=float)
    phase = 2j * np.multiply.outer(t, model.couplings)
    factors = model.weights_up * np.exp(-phase) + model.weights_down * np.exp(phase)
    z = np.prod(factors, axis=-1)
    return complex(z) if z.ndim == 0 else z


def decoherence_factor_mag2(model: SpinBathModel, t) -> np.ndarray | float:
    """|z(t)|^2 from the closed product of sin^2(2 g_k t) terms."""
    t = np.asarray(t, dtype=float)
    bracket = (model.weights_up - model.weights_down) ** 2 - 1
    s2 = np.sin(2 * np.multiply.outer(t, model.couplings)) ** 2
    out = np.prod(1 + bracket * s2, axis=-1)
    return float(out) if out.ndim == 0 else out


def reduced_density(model: SpinBathModel, t: float) -> DensityOperator:
    z = decoherence_factor(model, t)
    a, b = model.a, model.b
    off = z * a * np.conj(b)
    mat = np.array([[abs(a) ** 2, off], [np.conj(off), abs(b) ** 2]])
    return DensityOperator(mat, SpaceLayout((2,)))


def time_average_z(model: SpinBathModel, T: float, samples: int, t_start: float = 0.0) -> complex:
    """Mean of z over ``samples`` uniformly spaced times in [t_start, t_start + T].

    Riemann sampling; the truncation error is O(1/samples) for smooth z.
    """
    _check_window(T, samples)
    t = np.linspace(t_start, t_start + T, samples)
    return complex(np.mean(decoherence_factor(model, t)))


def time_average_mag2(model: SpinBathModel, T: float, samples: int, t_start: float = 0.0,
                      chunk: int = 1 << 16) -> float:
    """Empirical mean of |z(t)|^2 over [t_start, t_start + T], chunked to bound memory.

    A window starting at 0 includes the initial |z| = 1 peak, whose weight
    ~ 1/(T * sqrt(sum g_k^2)) dominates the long-time value 2^-N for large N;
    pass ``t_start`` past the initial decay to estimate the plateau.
    """
    _check_window(T, samples)
    t = np.linspace(t_start, t_start + T, samples)
    total = 0.0
    for i in range(0, samples, chunk):
        total += float(np.sum(decoherence_factor_mag2(model, t[i:i + chunk])))
    return total / samples


def _check_window(T: float, samples: int):
    if T <= 0:
        raise ValidationError("averaging window T must be positive")
    if samples < 2:
        raise ValidationError("need at least 2 samples")


def mean_square_z(model: SpinBathModel) -> float:
    """Long-time average of |z|^2 for rationally independent couplings: 2^-N prod (1 + (|a_k|^2 - |b_k|^2)^2)."""
    diff2 = (model.weights_up - model.weights_down) ** 2
    return float(np.prod((1 + diff2) / 2))


# Brute-force construction on the full (N+1)-qubit space.

def _sigma_z_on(k: int, n_qubits: int) -> np.ndarray:
    """Diagonal of sigma_z acting on qubit k of n_qubits (qubit 0 slowest)."""
    bits = (np.arange(2 ** n_qubits) >> (n_qubits - 1 - k)) & 1
    return 1.0 - 2.0 * bits


def full_hamiltonian(model: SpinBathModel) -> Operator:
    """H = (|u><u| - |d><d|) (x) sum_k g_k sigma_z^(k) on qubit 0 = system, qubits 1..N = bath.

    Built from Kronecker products of single-qubit operators.
    """
    n = model.n
    sz = hb.Operator(hb.SIGMA_Z)
    eye = hb.Operator(hb.IDENTITY_2)
    bath = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for k, g in enumerate(model.couplings):
        factors = [sz if j == k else eye for j in range(n)]
        op = factors[0] if n == 1 else hb.tensor_product(*factors)
        bath += g * op.matrix
    return hb.tensor_product(sz, Operator(bath, SpaceLayout((2,) * n)))


def initial_state(model: SpinBathModel) -> StateVector:
    state = StateVector(np.array([model.a, model.b]))
    for al, be in zip(model.alpha, model.beta):
        state = hb.tensor_product(state, StateVector(np.array([al, be])))
    return state


def brute_force_reduced_density(model: SpinBathModel, times) -> list[DensityOperator]:
    """Reduced qubit state from exact evolution of the (N+1)-qubit pure state.

    Independent of the closed-form factor; intended for N <= ~10.
    """
    prop = hb.Propagator(full_hamiltonian(model))
    psi0 = initial_state(model)
    return [hb.partial_trace(prop.evolve_state(psi0, t).projector(), [0]) for t in np.atleast_1d(times)]
