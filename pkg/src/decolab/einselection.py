"""
Environment-induced superselection in a diagonal system-environment model.

    H = sum_n delta_n |n><n| + sum_j eps_j |e_j><e_j| + sum_{n,j} gamma_nj |n><n| (x) |e_j><e_j|

All terms commute, so the product initial state evolves in closed form and
the reduced system coherences are rho_mn(t) = alpha_m alpha_n* e^{-i(delta_m - delta_n)t} z_mn(t)
with correlation amplitude z_mn(t) = sum_k |beta_k|^2 e^{-i(gamma_mk - gamma_nk) t}.
System indices with identical coupling rows form coherent subspaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import hilbert as hb
from .errors import ValidationError
from .hilbert import Operator, SpaceLayout, StateVector

NORM_TOL = 1e-12
FREQ_TOL = 1e-9
BLOCK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiagonalCouplingModel:
    delta: np.ndarray
    epsilon: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).ravel()
        eps = np.asarray(self.epsilon, dtype=float).ravel()
        gamma = np.asarray(self.gamma, dtype=float)
        alpha = np.asarray(self.alpha, dtype=complex).ravel()
        beta = np.asarray(self.beta, dtype=complex).ravel()
        if gamma.shape != (delta.size, eps.size):
            raise ValidationError(f"gamma must be n_sys x n_env = {delta.size} x {eps.size}, got {gamma.shape}")
        if alpha.size != delta.size or beta.size != eps.size:
            raise ValidationError("alpha must have n_sys entries and beta n_env entries")
        if not np.all(np.isfinite(gamma)):
            raise ValidationError("couplings must be finite")
        if abs(np.vdot(alpha, alpha).real - 1) > NORM_TOL or abs(np.vdot(beta, beta).real - 1) > NORM_TOL:
            raise ValidationError("system and environment amplitudes must be normalized")
        for name, arr in (("delta", delta), ("epsilon", eps), ("gamma", gamma), ("alpha", alpha), ("beta", beta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_sys(self) -> int:
        return self.delta.size

    @property
    def n_env(self) -> int:
        return self.epsilon.size

    @property
    def env_weights(self) -> np.ndarray:
        return np.abs(self.beta) ** 2

    def frequencies(self, m: int, n: int) -> np.ndarray:
        return self.gamma[m] - self.gamma[n]

    @classmethod
    def random(
        cls,
        n_sys: int,
        n_env: int,
        rng: np.random.Generator,
        equal_env_weights: bool = False,
        block_sizes: list[int] | None = None,
    ) -> DiagonalCouplingModel:
        """Random model; ``block_sizes`` repeats coupling rows to create coherent subspaces.

        Within a block delta_n is shared too, so pointer observables commute
        with the full Hamiltonian.
        """
        if block_sizes is None:
            block_sizes = [1] * n_sys
        if sum(block_sizes) != n_sys:
            raise ValidationError("block sizes must add up to n_sys")
        rows = rng.uniform(-1, 1, (len(block_sizes), n_env))
        deltas = rng.uniform(-1, 1, len(block_sizes))
        gamma = np.repeat(rows, block_sizes, axis=0)
        delta = np.repeat(deltas, block_sizes)
        eps = rng.uniform(-1, 1, n_env)
        alpha = hb.random_state([n_sys], rng).amplitudes
        if equal_env_weights:
            beta = np.exp(2j * np.pi * rng.uniform(size=n_env)) / np.sqrt(n_env)
        else:
            beta = hb.random_state([n_env], rng).amplitudes
        return cls(delta, eps, gamma, alpha, beta)


def interaction_hamiltonian(model: DiagonalCouplingModel) -> Operator:
    """H^{S'E} = sum gamma_nj |n><n| (x) |e_j><e_j| as a dense diagonal matrix."""
    return Operator(np.diag(model.gamma.ravel().astype(complex)), SpaceLayout((model.n_sys, model.n_env)))


def total_hamiltonian(model: DiagonalCouplingModel) -> Operator:
    diag = model.delta[:, None] + model.epsilon[None, :] + model.gamma
    return Operator(np.diag(diag.ravel().astype(complex)), SpaceLayout((model.n_sys, model.n_env)))


def initial_state(model: DiagonalCouplingModel) -> StateVector:
    return hb.tensor_product(StateVector(model.alpha), StateVector(model.beta))


def evolve_state(model: DiagonalCouplingModel, t: float) -> StateVector:
    """sum_{n,j} alpha_n beta_j exp[-i(delta_n + eps_j + gamma_nj) t] |n>|e_j>."""
    energy = model.delta[:, None] + model.epsilon[None, :] + model.gamma
    amps = np.outer(model.alpha, model.beta) * np.exp(-1j * energy * t)
    return StateVector(amps.ravel(), SpaceLayout((model.n_sys, model.n_env)))


def rho_matrix_elements(model: DiagonalCouplingModel, t: float) -> np.ndarray:
    """Reduced system density matrix from the closed-form coherences."""
    p = model.env_weights
    phase = np.exp(-1j * (model.gamma[:, None, :] - model.gamma[None, :, :]) * t)
    z = phase @ p
    rot = np.exp(-1j * (model.delta[:, None] - model.delta[None, :]) * t)
    rho = np.outer(model.alpha, model.alpha.conj()) * rot * z
    # diagonal is exactly |alpha_n|^2 sum_k p_k = |alpha_n|^2
    rho[np.diag_indices_from(rho)] = np.abs(model.alpha) ** 2
    return rho


def correlation_amplitude(model: DiagonalCouplingModel, m: int, n: int, t) -> np.ndarray | complex:
    """z_mn(t) = sum_k p_k exp(-i omega_k^{mn} t); ``t`` may be an array."""
    if m == n:
        raise ValidationError("correlation amplitude is defined for m != n only")
    omega = model.frequencies(m, n)
    t = np.asarray(t, dtype=float)
    z = np.exp(-1j * np.multiply.outer(t, omega)) @ model.env_weights
    return complex(z) if z.ndim == 0 else z


def mean_square_correlation(model: DiagonalCouplingModel, m: int, n: int, freq_tol: float = FREQ_TOL) -> float:
    """Long-time average of |z_mn|^2: sum of p_k p_k' over pairs with equal frequencies.

    Frequencies count as equal when they differ by at most
    ``freq_tol * max(1, max|omega|)``. With all frequencies distinct this is
    sum_k p_k^2, the squared spread of the correlation amplitude.
    """
    if m == n:
        raise ValidationError("correlation amplitude is defined for m != n only")
    omega = model.frequencies(m, n)
    p = model.env_weights
    tol = freq_tol * max(1.0, float(np.max(np.abs(omega), initial=0.0)))
    same = np.abs(omega[:, None] - omega[None, :]) <= tol
    return float(p @ same @ p)


@dataclass(frozen=True)
class CoherentPartition:
    blocks: tuple[tuple[int, ...], ...]

    @property
    def n_sys(self) -> int:
        return sum(len(b) for b in self.blocks)

    def block_of(self, index: int) -> int:
        for r, block in enumerate(self.blocks):
            if index in block:
                return r
        raise ValidationError(f"index {index} is not covered by the partition")

    def projectors(self) -> list[np.ndarray]:
        out = []
        for block in self.blocks:
            p = np.zeros((self.n_sys, self.n_sys))
            p[list(block), list(block)] = 1.0
            out.append(p)
        return out


def coherent_partition(model: DiagonalCouplingModel, merge_tol: float = 0.0) -> CoherentPartition:
    """Group system indices whose coupling rows agree within ``merge_tol`` (max norm).

    Near-equality is made transitive by taking connected components.
    Blocks are ordered by their smallest index.
    """
    if merge_tol < 0:
        raise ValidationError("merge_tol must be non-negative")
    g = model.gamma
    dist = np.max(np.abs(g[:, None, :] - g[None, :, :]), axis=2)
    n_blocks, labels = connected_components(csr_matrix(dist <= merge_tol), directed=False)
    blocks = [tuple(int(i) for i in np.flatnonzero(labels == r)) for r in range(n_blocks)]
    blocks.sort(key=lambda b: b[0])
    return CoherentPartition(tuple(blocks))


def pointer_observable(partition: CoherentPartition, zetas) -> Operator:
    """Lambda = sum_r zeta_r P_r with pairwise distinct real zeta_r."""
    zetas = np.asarray(zetas, dtype=float)
    if zetas.shape != (len(partition.blocks),):
        raise ValidationError(f"need one zeta per block ({len(partition.blocks)}), got {zetas.size}")
    if len(np.unique(zetas)) != zetas.size:
        raise ValidationError("zeta values must be pairwise distinct")
    lam = sum(z * p for z, p in zip(zetas, partition.projectors()))
    return Operator(lam)


def commutator_norm(system_op: Operator, hamiltonian: Operator) -> float:
    """Spectral norm of [A (x) I_E, H] for a system operator A."""
    n_env = hamiltonian.dim // system_op.dim
    big = np.kron(system_op.matrix, np.eye(n_env))
    return float(np.linalg.norm(big @ hamiltonian.matrix - hamiltonian.matrix @ big, 2))


def check_observable_compatibility(partition: CoherentPartition, obs: Operator, tol: float = BLOCK_TOL) -> bool:
    """True iff ``obs`` maps every coherent subspace into itself."""
    if obs.dim != partition.n_sys:
        raise ValidationError("observable dimension does not match the partition")
    labels = np.empty(partition.n_sys, dtype=int)
    for r, block in enumerate(partition.blocks):
        labels[list(block)] = r
    off_block = labels[:, None] != labels[None, :]
    return bool(np.max(np.abs(obs.matrix[off_block]), initial=0.0) <= tol)
