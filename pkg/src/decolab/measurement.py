"""
The von Neumann measurement chain.

A system S is coupled to an apparatus A (and later an environment E). The
premeasurement unitary copies the system basis label into orthonormal pointer
states; the reduction process removes cross-branch coherences; orthogonal
environment records do the same dynamically.

Factor order for composite states is always S, A, E.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import hilbert as hb
from .errors import DegenerateSpectrum, ValidationError
from .hilbert import DensityOperator, Operator, SpaceLayout, StateVector

ORTHO_TOL = 1e-12
PROJECTOR_TOL = 1e-10
DEGENERACY_GAP = 1e-8
RECONSTRUCTION_TOL = 1e-10


def _columns(vectors) -> np.ndarray:
    """Stack a list of vectors/StateVectors as columns of a 2-d array."""
    cols = [v.amplitudes if isinstance(v, StateVector) else np.asarray(v, dtype=complex) for v in vectors]
    return np.column_stack(cols)


def _check_orthonormal(cols: np.ndarray, what: str, tol: float = ORTHO_TOL):
    gram = cols.conj().T @ cols
    err = np.max(np.abs(gram - np.eye(cols.shape[1])), initial=0.0)
    if err > tol:
        raise ValidationError(f"{what} are not orthonormal (max Gram deviation {err:.3g})")


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Observable F = sum_j lambda_j |s_j><s_j| read out by pointer states |a_j>.

    ``system_basis`` and ``pointer_states`` are given as arrays whose columns
    are the vectors (or as sequences of vectors).
    """

    system_basis: np.ndarray
    eigenvalues: np.ndarray
    apparatus_ready: np.ndarray
    pointer_states: np.ndarray

    def __post_init__(self):
        s = self.system_basis
        s = _columns(s) if not isinstance(s, np.ndarray) or s.ndim != 2 else np.asarray(s, dtype=complex)
        a = self.pointer_states
        a = _columns(a) if not isinstance(a, np.ndarray) or a.ndim != 2 else np.asarray(a, dtype=complex)
        lam = np.asarray(self.eigenvalues, dtype=float)
        ready = self.apparatus_ready
        ready = ready.amplitudes if isinstance(ready, StateVector) else np.asarray(ready, dtype=complex)

        _check_orthonormal(s, "system basis states")
        _check_orthonormal(a, "pointer states")
        if s.shape[1] != a.shape[1]:
            raise ValidationError(
                f"need one pointer state per system basis state, got {a.shape[1]} and {s.shape[1]}"
            )
        if lam.shape != (s.shape[1],):
            raise ValidationError("need one eigenvalue per system basis state")
        if len(np.unique(lam)) != lam.size:
            raise ValidationError("eigenvalues must be pairwise distinct")
        if ready.shape != (a.shape[0],) or abs(np.linalg.norm(ready) - 1) > ORTHO_TOL:
            raise ValidationError("apparatus ready state must be a normalized vector in H_A")
        for name, arr in (("system_basis", s), ("eigenvalues", lam), ("apparatus_ready", ready), ("pointer_states", a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim_system(self) -> int:
        return self.system_basis.shape[0]

    @property
    def dim_apparatus(self) -> int:
        return self.pointer_states.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.system_basis.shape[1]

    def observable(self) -> Operator:
        s = self.system_basis
        return Operator((s * self.eigenvalues) @ s.conj().T)

    def system_projectors(self) -> list[Operator]:
        s = self.system_basis
        return [Operator(np.outer(s[:, j], s[:, j].conj())) for j in range(self.n_outcomes)]

    def coefficients(self, psi: StateVector) -> np.ndarray:
        """c_j = <s_j|psi>."""
        if psi.dim != self.dim_system:
            raise ValidationError(f"state has dimension {psi.dim}, system space has {self.dim_system}")
        return self.system_basis.conj().T @ psi.amplitudes

    @classmethod
    def computational(cls, n: int, dim_apparatus: int | None = None, eigenvalues=None) -> MeasurementModel:
        """|s_j> = |j>, |a> = |0>, |a_j> = |j> (apparatus dimension >= n)."""
        dim_apparatus = n if dim_apparatus is None else dim_apparatus
        if dim_apparatus < n:
            raise ValidationError("apparatus needs at least one pointer state per outcome")
        eye_a = np.eye(dim_apparatus)
        lam = np.arange(n, dtype=float) if eigenvalues is None else eigenvalues
        return cls(np.eye(n), lam, eye_a[:, 0], eye_a[:, :n])

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, dim_system: int | None = None,
               dim_apparatus: int | None = None) -> MeasurementModel:
        """Random orthonormal system basis and pointer states (Haar unitaries)."""
        dim_system = n if dim_system is None else dim_system
        dim_apparatus = n if dim_apparatus is None else dim_apparatus
        us = hb.random_unitary(dim_system, rng)
        ua = hb.random_unitary(dim_apparatus, rng)
        ready = hb.random_state([dim_apparatus], rng).amplitudes
        lam = np.sort(rng.uniform(-1, 1, n))
        return cls(us[:, :n], lam, ready, ua[:, :n])


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    """Environment ready state |e> and the records |e_j> it ends up in per branch."""

    env_ready: np.ndarray
    env_records: np.ndarray

    def __post_init__(self):
        ready = self.env_ready
        ready = ready.amplitudes if isinstance(ready, StateVector) else np.asarray(ready, dtype=complex)
        rec = self.env_records
        rec = _columns(rec) if not isinstance(rec, np.ndarray) or rec.ndim != 2 else np.asarray(rec, dtype=complex)
        if rec.shape[0] != ready.shape[0]:
            raise ValidationError("environment records and ready state live in different spaces")
        norms = np.linalg.norm(rec, axis=0)
        if np.any(np.abs(norms - 1) > ORTHO_TOL) or abs(np.linalg.norm(ready) - 1) > ORTHO_TOL:
            raise ValidationError("environment states must be normalized")
        for name, arr in (("env_ready", ready), ("env_records", rec)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.env_records.shape[0]

    def overlaps(self) -> np.ndarray:
        """Matrix of <e_j|e_k>."""
        return self.env_records.conj().T @ self.env_records

    @classmethod
    def orthonormal(cls, n: int, dim: int | None = None, rng: np.random.Generator | None = None) -> EnvironmentModel:
        dim = n + 1 if dim is None else dim
        u = np.eye(dim) if rng is None else hb.random_unitary(dim, rng)
        return cls(u[:, -1], u[:, :n])


def premeasure(model: MeasurementModel, psi: StateVector) -> StateVector:
    """sum_j c_j |s_j>|a_j> with c_j = <s_j|psi>.

    Implements the premeasurement map by its action on the system basis;
    components of ``psi`` outside span{|s_j>} are rejected.
    """
    c = model.coefficients(psi)
    if abs(np.vdot(c, c).real - 1) > 1e-10:
        raise ValidationError("state has weight outside the span of the system basis")
    out = np.einsum("j,sj,aj->sa", c, model.system_basis, model.pointer_states).ravel()
    return StateVector(out / np.linalg.norm(out), SpaceLayout((model.dim_system, model.dim_apparatus)))


def premeasure_hamiltonian(model: MeasurementModel, generators: Sequence, duration: float) -> Operator:
    """U = exp(-i H_int duration) for H_int = sum_j |s_j><s_j| (x) A_j.

    Parameters
    ----------
    generators : sequence of Hermitian apparatus operators A_j, one per outcome.
    duration : interaction time t_f - t_i, must be positive.
    """
    if duration <= 0:
        raise ValidationError("duration must be positive")
    if len(generators) != model.n_outcomes:
        raise ValidationError("need one generator per outcome")
    h = np.zeros((model.dim_system * model.dim_apparatus,) * 2, dtype=complex)
    for j, a_j in enumerate(generators):
        a_j = a_j.matrix if isinstance(a_j, Operator) else np.asarray(a_j, dtype=complex)
        if hb.hermiticity_error(a_j) > hb.TOL_HERM:
            raise ValidationError(f"generator A_{j} is not Hermitian")
        s = model.system_basis[:, j]
        h += np.kron(np.outer(s, s.conj()), a_j)
    layout = SpaceLayout((model.dim_system, model.dim_apparatus))
    return hb.unitary(Operator(h, layout), duration)


def _check_projectors(mats: list[np.ndarray], tol: float):
    dim = mats[0].shape[0]
    for j, p in enumerate(mats):
        if hb.hermiticity_error(p) > tol or np.max(np.abs(p @ p - p)) > tol:
            raise ValidationError(f"P_{j} is not an orthogonal projector")
    for j in range(len(mats)):
        for k in range(j + 1, len(mats)):
            if np.max(np.abs(mats[j] @ mats[k])) > tol:
                raise ValidationError(f"projectors P_{j} and P_{k} are not mutually orthogonal")
    if np.max(np.abs(sum(mats) - np.eye(dim))) > tol:
        raise ValidationError("projector family is incomplete: sum P_j != I")


def reduce(rho: DensityOperator, projectors: Sequence, tol: float = PROJECTOR_TOL) -> DensityOperator:
    """Reduction process rho -> sum_j P_j rho P_j."""
    mats = [p.matrix if isinstance(p, Operator) else np.asarray(p, dtype=complex) for p in projectors]
    if not mats or any(m.shape != rho.matrix.shape for m in mats):
        raise ValidationError("projectors must match the density operator's dimension")
    _check_projectors(mats, tol)
    out = sum(p @ rho.matrix @ p for p in mats)
    return DensityOperator(0.5 * (out + out.conj().T), rho.layout)


def pointer_projectors(model: MeasurementModel) -> list[Operator]:
    """Projectors onto the branches |s_j>|a_j> completed to a resolution of identity on S(x)A.

    The branch projectors are P_j = |s_j><s_j| (x) I_A; when the system basis is
    incomplete the leftover subspace gets its own projector.
    """
    eye_a = np.eye(model.dim_apparatus)
    layout = SpaceLayout((model.dim_system, model.dim_apparatus))
    out = [Operator(np.kron(p.matrix, eye_a), layout) for p in model.system_projectors()]
    rest = np.eye(model.dim_system * model.dim_apparatus) - sum(p.matrix for p in out)
    if np.max(np.abs(rest)) > PROJECTOR_TOL:
        out.append(Operator(rest, layout))
    return out


def born_probabilities(model: MeasurementModel, psi: StateVector) -> list[tuple[float, float]]:
    """(lambda_j, p_j) with p_j = |<s_j|psi>|^2."""
    p = np.abs(model.coefficients(psi)) ** 2
    return [(float(lam), float(pj)) for lam, pj in zip(model.eigenvalues, p)]


def pointer_readout(model: MeasurementModel, state: StateVector) -> np.ndarray:
    """Probabilities of the apparatus records, <I (x) |a_j><a_j|> on an S(x)A state."""
    rho = state.projector()
    layout = state.layout
    probs = []
    for j in range(model.n_outcomes):
        a = model.pointer_states[:, j]
        obs = Operator(np.kron(np.eye(model.dim_system), np.outer(a, a.conj())), layout)
        probs.append(hb.expectation(rho, obs))
    return np.array(probs)


@dataclass(frozen=True, eq=False)
class ChainResult:
    pure_state: StateVector
    reduced_sa: DensityOperator


def chain_with_environment(model: MeasurementModel, env: EnvironmentModel, psi: StateVector) -> ChainResult:
    """Premeasurement followed by environmental recording of the pointer.

    Returns the S(x)A(x)E state sum_j c_j |s_j>|a_j>|e_j> and its reduced
    density operator on S+A, which carries the cross-branch factors <e_j|e_k>.
    """
    if env.env_records.shape[1] != model.n_outcomes:
        raise ValidationError(
            f"need one environment record per outcome, got {env.env_records.shape[1]} for {model.n_outcomes}"
        )
    c = model.coefficients(psi)
    amps = np.einsum("j,sj,aj,ej->sae", c, model.system_basis, model.pointer_states, env.env_records).ravel()
    layout = SpaceLayout((model.dim_system, model.dim_apparatus, env.dim))
    state = StateVector(amps / np.linalg.norm(amps), layout)
    return ChainResult(state, hb.partial_trace(state.projector(), [0, 1]))


def reduced_sa_closed_form(model: MeasurementModel, env: EnvironmentModel, psi: StateVector) -> np.ndarray:
    """sum_{j,k} c_j* c_k <e_j|e_k> (|s_k><s_j|)(|a_k><a_j|), without building the E factor."""
    c = model.coefficients(psi)
    branches = np.einsum("sj,aj->saj", model.system_basis, model.pointer_states).reshape(-1, model.n_outcomes)
    weights = np.outer(c, c.conj()) * env.overlaps().T
    return branches @ weights @ branches.conj().T


@dataclass(frozen=True, eq=False)
class AmbiguityDemo:
    expansion_z: np.ndarray
    expansion_x: np.ndarray
    max_entrywise_difference: float
    schmidt_coefficients: np.ndarray
    commutator_norm: float


def basis_ambiguity_demo() -> AmbiguityDemo:
    """The S+A singlet written in the sigma_z and in the sigma_x product bases.

    Both expansions give the same vector, so the record alone cannot tell
    whether sigma_z or sigma_x was measured, and the two do not commute.
    """
    zp, zm = np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)
    xp, xm = (zp + zm) / np.sqrt(2), (zp - zm) / np.sqrt(2)
    psi_z = (np.kron(zp, zm) - np.kron(zm, zp)) / np.sqrt(2)
    psi_x = (np.kron(xp, xm) - np.kron(xm, xp)) / np.sqrt(2)
    # x-expansion of the singlet picks up an overall sign relative to the z one
    phase = np.vdot(psi_z, psi_x)
    psi_x_aligned = psi_x / (phase / abs(phase))
    diff = float(np.max(np.abs(psi_z - psi_x_aligned)))
    rho_s = hb.partial_trace(StateVector(psi_z, (2, 2)).projector(), [0])
    schmidt = np.sqrt(np.clip(np.sort(rho_s.eigenvalues())[::-1], 0, None))
    comm = np.linalg.norm(hb.SIGMA_Z @ hb.SIGMA_X - hb.SIGMA_X @ hb.SIGMA_Z, 2)
    return AmbiguityDemo(psi_z, psi_x_aligned, diff, schmidt, float(comm))


@dataclass(frozen=True, eq=False)
class TriBranch:
    """One term alpha |phi_1>|phi_2>|phi_3> of a triorthogonal-type expansion."""

    alpha: complex
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray


@dataclass(frozen=True)
class NotTridiagonal:
    """Returned when the state has no diagonal three-factor expansion this method can find."""

    residual: float


def _canonical_phase(v: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, complex]:
    """Rotate v so that its first non-negligible entry is real positive; return (v', phase removed)."""
    idx = np.flatnonzero(np.abs(v) > tol * max(1.0, np.max(np.abs(v))))
    if idx.size == 0:
        return v, 1.0
    phase = v[idx[0]] / abs(v[idx[0]])
    return v / phase, phase


def tridecompose(
    psi: StateVector,
    gap_tol: float = DEGENERACY_GAP,
    tol: float = RECONSTRUCTION_TOL,
) -> list[TriBranch] | NotTridiagonal:
    """Recover psi = sum_i alpha_i |phi_i>_1 |phi_i>_2 |phi_i>_3.

    Branch vectors on factors 1 and 2 are read off as eigenvectors of the
    single-factor reduced density operators and paired by the weight of the
    contraction <phi_i|_1 <phi_k|_2 psi; the factor-3 vectors are the
    normalized contractions and need not be orthogonal. Each branch vector is
    put in canonical phase (first non-zero entry real positive) and the
    leftover phase goes into ``alpha``. Branches are sorted by decreasing
    ``|alpha|``.

    Raises
    ------
    DegenerateSpectrum
        If two non-zero eigenvalues of the factor-1 reduced density operator
        are closer than ``gap_tol``; the eigenvectors are then not determined.
    """
    if psi.layout.n_factors != 3:
        raise ValidationError(f"need a three-factor layout, got dims {psi.layout.dims}")
    d1, d2, d3 = psi.layout.dims
    rho = psi.projector()
    rho1 = hb.partial_trace(rho, [0]).matrix
    rho2 = hb.partial_trace(rho, [1]).matrix
    w1, v1 = np.linalg.eigh(rho1)
    w2, v2 = np.linalg.eigh(rho2)

    cutoff = max(gap_tol, 1e-12)
    keep1 = np.flatnonzero(w1 > cutoff)
    keep2 = np.flatnonzero(w2 > cutoff)
    w1k = w1[keep1]
    if w1k.size > 1 and np.min(np.diff(np.sort(w1k))) < gap_tol:
        raise DegenerateSpectrum(
            f"factor-1 reduced spectrum has a gap below {gap_tol:g}; the expansion is not identifiable this way"
        )
    if keep1.size != keep2.size:
        return NotTridiagonal(residual=float("inf"))

    t = psi.amplitudes.reshape(d1, d2, d3)
    b1 = v1[:, keep1]
    b2 = v2[:, keep2]
    # contraction[i, k, :] = (<phi_i|_1 <phi_k|_2 (x) I) psi
    contraction = np.einsum("xi,yk,xyz->ikz", b1.conj(), b2.conj(), t)
    weight = np.linalg.norm(contraction, axis=2)
    rows, cols = linear_sum_assignment(-weight)

    branches = []
    for i, k in zip(rows, cols):
        vec3 = contraction[i, k]
        norm3 = np.linalg.norm(vec3)
        if norm3 == 0:
            continue
        phi1, ph1 = _canonical_phase(b1[:, i])
        phi2, ph2 = _canonical_phase(b2[:, k])
        phi3, ph3 = _canonical_phase(vec3 / norm3)
        # psi-term = (ph1 phi1)(ph2 phi2)(norm3 ph3 phi3) after undoing conjugation in the contraction
        alpha = norm3 * ph1 * ph2 * ph3
        branches.append(TriBranch(complex(alpha), phi1, phi2, phi3))

    branches.sort(key=lambda b: -abs(b.alpha))
    residual = float(np.linalg.norm(reconstruct(branches, psi.layout) - psi.amplitudes)) if branches else float("inf")
    if residual > tol:
        return NotTridiagonal(residual=residual)
    return branches


def reconstruct(branches: Sequence[TriBranch], layout: SpaceLayout) -> np.ndarray:
    """sum_i alpha_i phi1_i (x) phi2_i (x) phi3_i as a flat vector."""
    out = np.zeros(layout.total_dim, dtype=complex)
    for b in branches:
        out += b.alpha * np.kron(np.kron(b.phi1, b.phi2), b.phi3)
    return out
