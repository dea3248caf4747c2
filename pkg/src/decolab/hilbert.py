"""
Dense linear algebra for finite-dimensional composite quantum systems.

States, operators and density operators are immutable wrappers around numpy
arrays that also carry the tensor-product layout of the space they live on.
All functions are pure.

Conventions
-----------
- hbar = 1.
- Kronecker order: the first listed factor varies slowest, so for dims
  ``[d0, d1]`` the basis vector ``|i>|j>`` has flat index ``i * d1 + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ValidationError

TOL_NORM = 1e-12
TOL_HERM = 1e-12
TOL_POS = 1e-10


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered subsystem dimensions of a tensor-product space."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be a non-empty list of positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    @property
    def n_factors(self) -> int:
        return len(self.dims)

    def __add__(self, other: SpaceLayout) -> SpaceLayout:
        return SpaceLayout(self.dims + other.dims)


def _layout(layout, dim: int) -> SpaceLayout:
    if layout is None:
        return SpaceLayout((dim,))
    if not isinstance(layout, SpaceLayout):
        layout = SpaceLayout(tuple(layout))
    if layout.total_dim != dim:
        raise ValidationError(f"layout {layout.dims} has total dimension {layout.total_dim}, array has {dim}")
    return layout


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized ket. ``layout`` defaults to a single factor."""

    amplitudes: np.ndarray
    layout: SpaceLayout = None
    tol_norm: float = TOL_NORM

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1:
            raise ValidationError("state amplitudes must be a 1-d array")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "layout", _layout(self.layout, amps.size))
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > self.tol_norm:
            raise ValidationError(f"state is not normalized: |psi|^2 = {norm2!r}")

    @classmethod
    def normalized(cls, amplitudes, layout=None) -> StateVector:
        """Build a state from unnormalized amplitudes."""
        amps = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValidationError("cannot normalize the zero vector")
        return cls(amps / norm, layout)

    @classmethod
    def basis(cls, index, dims: Sequence[int]) -> StateVector:
        """Computational basis state; ``index`` is a flat index or one index per factor."""
        layout = SpaceLayout(tuple(dims))
        if np.ndim(index):
            index = int(np.ravel_multi_index(tuple(index), layout.dims))
        amps = np.zeros(layout.total_dim, dtype=complex)
        amps[index] = 1.0
        return cls(amps, layout)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def projector(self) -> DensityOperator:
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.layout)


@dataclass(frozen=True, eq=False)
class Operator:
    """Square matrix acting on a laid-out space."""

    matrix: np.ndarray
    layout: SpaceLayout = None

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError(f"operator matrix must be square, got shape {mat.shape}")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "layout", _layout(self.layout, mat.shape[0]))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def is_hermitian(self, tol: float = TOL_HERM) -> bool:
        return hermiticity_error(self.matrix) <= tol

    @classmethod
    def identity(cls, dims: Sequence[int]) -> Operator:
        layout = SpaceLayout(tuple(dims))
        return cls(np.eye(layout.total_dim), layout)


@dataclass(frozen=True, eq=False)
class DensityOperator(Operator):
    """Hermitian, positive, unit-trace operator.

    Validation is done on construction with the tolerances given as fields.
    """

    tol_norm: float = TOL_NORM
    tol_herm: float = TOL_HERM
    tol_pos: float = TOL_POS

    def __post_init__(self):
        super().__post_init__()
        mat = self.matrix
        herm = hermiticity_error(mat)
        if herm > self.tol_herm:
            raise ValidationError(f"density operator is not Hermitian (max deviation {herm:.3g})")
        tr = np.trace(mat)
        if abs(tr - 1.0) > self.tol_norm:
            raise ValidationError(f"density operator trace is {tr!r}, expected 1")
        lowest = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]
        if lowest < -self.tol_pos:
            raise ValidationError(f"density operator has negative eigenvalue {lowest:.3g}")

    @classmethod
    def maximally_mixed(cls, dims: Sequence[int]) -> DensityOperator:
        layout = SpaceLayout(tuple(dims))
        return cls(np.eye(layout.total_dim) / layout.total_dim, layout)

    def eigenvalues(self) -> np.ndarray:
        m = self.matrix
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T))


def hermiticity_error(matrix: np.ndarray) -> float:
    """Max entrywise deviation ``|a_ij - conj(a_ji)|``."""
    matrix = np.asarray(matrix)
    return float(np.max(np.abs(matrix - matrix.conj().T), initial=0.0))


Tensorable = Union[StateVector, Operator]


def tensor_product(a: Tensorable, b: Tensorable, *more: Tensorable) -> Tensorable:
    """Kronecker product of states or operators; the first factor varies slowest.

    Density operators combine into a density operator, any other operator
    pair into a plain :class:`Operator`.
    """
    if more:
        return tensor_product(tensor_product(a, b), *more)
    layout = a.layout + b.layout
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(np.kron(a.amplitudes, b.amplitudes), layout)
    if isinstance(a, StateVector) or isinstance(b, StateVector):
        raise ValidationError("cannot take the tensor product of a state and an operator")
    mat = np.kron(a.matrix, b.matrix)
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        return DensityOperator(mat, layout)
    return Operator(mat, layout)


def trace(a: Operator) -> complex:
    return complex(np.trace(a.matrix))


def partial_trace(rho: Operator, keep: Iterable[int]) -> DensityOperator | Operator:
    """Trace out every factor not listed in ``keep``.

    The kept factors stay in their original order. A :class:`DensityOperator`
    input yields a :class:`DensityOperator`.
    """
    keep = sorted(set(int(k) for k in keep))
    dims = rho.layout.dims
    n = len(dims)
    if not keep:
        raise ValidationError("must keep at least one factor")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValidationError(f"factor indices {keep} out of range for {n} factors")
    traced = [k for k in range(n) if k not in keep]
    d_keep = prod(dims[k] for k in keep)
    d_trace = prod(dims[k] for k in traced)

    t = rho.matrix.reshape(dims + dims)
    perm = keep + traced
    t = t.transpose(perm + [n + k for k in perm])
    t = t.reshape(d_keep, d_trace, d_keep, d_trace)
    reduced = np.einsum("ikjk->ij", t)

    layout = SpaceLayout(tuple(dims[k] for k in keep))
    if isinstance(rho, DensityOperator):
        reduced = 0.5 * (reduced + reduced.conj().T)
        return DensityOperator(reduced, layout, rho.tol_norm, rho.tol_herm, rho.tol_pos)
    return Operator(reduced, layout)


def expectation(rho: DensityOperator, obs: Operator, tol_herm: float = TOL_HERM) -> float:
    """Tr(rho A) for a Hermitian observable A."""
    if hermiticity_error(obs.matrix) > tol_herm:
        raise ValidationError("observable is not Hermitian")
    if obs.dim != rho.dim:
        raise ValidationError(f"dimension mismatch: rho {rho.dim}, observable {obs.dim}")
    value = np.trace(rho.matrix @ obs.matrix)
    # residue scale grows with the operator norm
    scale = max(1.0, float(np.max(np.abs(obs.matrix), initial=0.0)))
    if abs(value.imag) > tol_herm * scale * rho.dim:
        raise ValidationError(f"expectation value has imaginary part {value.imag:.3g}")
    return float(value.real)


def convex_combine(
    weights: Sequence[float], rhos: Sequence[DensityOperator], tol_norm: float = TOL_NORM
) -> DensityOperator:
    """Weighted mixture sum_i p_i rho_i."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(rhos) or len(rhos) == 0:
        raise ValidationError("need one weight per density operator")
    if np.any(weights < 0):
        raise ValidationError("weights must be non-negative")
    if abs(weights.sum() - 1.0) > tol_norm:
        raise ValidationError(f"weights sum to {weights.sum()!r}, expected 1")
    layout = rhos[0].layout
    if any(r.layout != layout for r in rhos):
        raise ValidationError("all density operators must share one layout")
    mat = sum(w * r.matrix for w, r in zip(weights, rhos))
    return DensityOperator(mat, layout)


class Propagator:
    """exp(-iHt) for a fixed Hermitian H, diagonalized once.

    Useful when the same Hamiltonian is applied at many times.
    """

    def __init__(self, hamiltonian: Operator, tol_herm: float = TOL_HERM):
        h = hamiltonian.matrix
        if hermiticity_error(h) > tol_herm * max(1.0, float(np.max(np.abs(h), initial=0.0))):
            raise ValidationError("Hamiltonian is not Hermitian")
        self.layout = hamiltonian.layout
        self.energies, self.vectors = np.linalg.eigh(0.5 * (h + h.conj().T))

    def unitary(self, t: float) -> np.ndarray:
        phases = np.exp(-1j * self.energies * t)
        return (self.vectors * phases) @ self.vectors.conj().T

    def evolve_state(self, psi: StateVector, t: float) -> StateVector:
        coeffs = self.vectors.conj().T @ psi.amplitudes
        out = self.vectors @ (np.exp(-1j * self.energies * t) * coeffs)
        return StateVector(out / np.linalg.norm(out), psi.layout)

    def evolve(self, rho: DensityOperator, t: float) -> DensityOperator:
        u = self.unitary(t)
        out = u @ rho.matrix @ u.conj().T
        out = 0.5 * (out + out.conj().T)
        return DensityOperator(out, rho.layout, rho.tol_norm, rho.tol_herm, rho.tol_pos)


def unitary(hamiltonian: Operator, t: float) -> Operator:
    """U = exp(-iHt) via eigendecomposition of the Hermitian generator."""
    return Operator(Propagator(hamiltonian).unitary(t), hamiltonian.layout)


def evolve_von_neumann(rho: DensityOperator, hamiltonian: Operator, t: float) -> DensityOperator:
    """rho(t) = U rho U^dagger with U = exp(-iHt)."""
    if hamiltonian.dim != rho.dim:
        raise ValidationError(f"dimension mismatch: rho {rho.dim}, H {hamiltonian.dim}")
    return Propagator(hamiltonian).evolve(rho, t)


def evolve_state(psi: StateVector, hamiltonian: Operator, t: float) -> StateVector:
    return Propagator(hamiltonian).evolve_state(psi, t)


def purity(rho: DensityOperator) -> float:
    """Tr(rho^2); 1 for pure states, 1/d for the maximally mixed state."""
    m = rho.matrix
    # Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    return float(np.sum(np.abs(m) ** 2))


def commutator(a: Operator, b: Operator) -> np.ndarray:
    return a.matrix @ b.matrix - b.matrix @ a.matrix


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a Ginibre matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_state(dims: Sequence[int], rng: np.random.Generator) -> StateVector:
    layout = SpaceLayout(tuple(dims))
    z = rng.standard_normal(layout.total_dim) + 1j * rng.standard_normal(layout.total_dim)
    return StateVector.normalized(z, layout)


def random_density(dims: Sequence[int], rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    """Random mixed state G G^dagger / Tr(G G^dagger) with G of the given rank."""
    layout = SpaceLayout(tuple(dims))
    d = layout.total_dim
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    m = m / np.trace(m).real
    return DensityOperator(0.5 * (m + m.conj().T), layout)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (z + z.conj().T)


def matrix_to_json(matrix: np.ndarray) -> list:
    """Nested lists of ``[re, im]`` pairs."""
    matrix = np.asarray(matrix, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in np.atleast_2d(matrix)]


def matrix_from_json(data: list) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


# Common single-qubit operators, |0> = |u> = |z,+>.
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
