"""Discrete KvN Hamiltonian K = (P.v + v.P)/2 + W on a periodic grid.

Central schemes build a sparse matrix whose advection part along axis j has
entries ``-(i hbar / 2) D_ab (v_a + v_b)`` with ``D`` the periodic
central-difference stencil.  ``D`` is exactly antisymmetric, so the matrix
is Hermitian bit for bit.  The spectral scheme is applied matrix-free with
FFTs, ``P_j = F^-1 diag(hbar k_j) F``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import DynamicalSystem, PhaseGenerator
from .errors import OperatorError
from .grid import PhaseSpaceGrid

SCHEMES = ("central_fd2", "central_fd4", "spectral")

# one-sided stencil weights (offset, coefficient) before division by dx
_STENCILS = {
    "central_fd2": ((1, 0.5),),
    "central_fd4": ((1, 2.0 / 3.0), (2, -1.0 / 12.0)),
}


def derivative_matrix(levels: int, dx: float, scheme: str = "central_fd2") -> sp.csr_matrix:
    """Periodic first-derivative matrix; exactly antisymmetric."""
    try:
        stencil = _STENCILS[scheme]
    except KeyError:
        raise OperatorError(f"no finite-difference stencil for scheme {scheme!r}") from None
    rows, cols, vals = [], [], []
    i = np.arange(levels)
    for k, c in stencil:
        w = c / dx
        rows += [i, i]
        cols += [(i + k) % levels, (i - k) % levels]
        vals += [np.full(levels, w), np.full(levels, -w)]
    D = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(levels, levels)
    ).tocsr()
    D.sum_duplicates()
    return D


def _axis_derivative(grid: PhaseSpaceGrid, axis: int, scheme: str) -> sp.coo_matrix:
    D = derivative_matrix(grid.shape[axis], grid.dx[axis], scheme)
    before = math.prod(grid.shape[:axis])
    after = math.prod(grid.shape[axis + 1:])
    return sp.kron(sp.kron(sp.identity(before), D), sp.identity(after)).tocoo()


def advection_part(grid: PhaseSpaceGrid, velocity_j: np.ndarray, axis: int, scheme: str) -> sp.csr_matrix:
    """Hermitian matrix of ``(P_j v_j + v_j P_j)/2`` for one axis."""
    D = _axis_derivative(grid, axis, scheme)
    v = np.ravel(velocity_j)
    data = (-0.5j * grid.hbar) * (D.data * (v[D.row] + v[D.col]))
    return sp.csr_matrix((data, (D.row, D.col)), shape=D.shape)


@dataclass
class KvNOperator:
    grid: PhaseSpaceGrid
    system: DynamicalSystem
    w: PhaseGenerator
    scheme: str
    time: float
    matrix: sp.csr_matrix | None
    parts: list = field(default_factory=list, repr=False)
    velocity: np.ndarray | None = field(default=None, repr=False)
    w_values: np.ndarray | None = field(default=None, repr=False)
    _norm: float | None = field(default=None, repr=False)
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.grid.size

    @property
    def hbar(self) -> float:
        return self.grid.hbar

    @property
    def is_sparse(self) -> bool:
        return self.matrix is not None

    @property
    def time_dependent(self) -> bool:
        return self.system.time_dependent or self.w.time_dependent

    @property
    def has_w(self) -> bool:
        return self.w_values is not None and bool(np.any(self.w_values != 0))

    @property
    def sparsity(self) -> int:
        """Max nonzeros per row (dense row count for the spectral scheme)."""
        if self.matrix is None:
            return self.N
        return int(np.max(np.diff(self.matrix.indptr))) if self.N else 0

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """K @ psi for ``psi`` of shape ``(N,)`` or ``(N, B)``."""
        psi = np.asarray(psi, dtype=complex)
        if self.matrix is not None:
            return self.matrix @ psi
        return self._apply_spectral(psi)

    __matmul__ = apply

    def _apply_spectral(self, psi):
        g = self.grid
        batch = psi.shape[1:]
        x = psi.reshape(g.shape + batch)
        out = np.zeros_like(x)
        for j in range(g.ndim):
            p = g.momentum_grid(j).reshape([-1 if k == j else 1 for k in range(g.ndim)] + [1] * len(batch))
            v = self.velocity[j].reshape(g.shape + (1,) * len(batch))
            def P(y):
                return np.fft.ifft(p * np.fft.fft(y, axis=j), axis=j)
            out += 0.5 * (v * P(x) + P(v * x))
        if self.w_values is not None:
            out += self.w_values.reshape(g.shape + (1,) * len(batch)) * x
        return out.reshape(psi.shape)

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.toarray()
        return self.apply(np.eye(self.N, dtype=complex))

    def norm_bound(self, iterations: int = 20) -> float:
        """Power-iteration estimate of the spectral norm (cached)."""
        if self._norm is None:
            self._norm = _power_norm(self.apply, self.N, iterations)
        return self._norm

    def eigensystem(self):
        """Dense Hermitian eigendecomposition (cached)."""
        if self._eig is None:
            self._eig = np.linalg.eigh(self.to_dense())
        return self._eig

    def at_time(self, t: float) -> "KvNOperator":
        if not self.time_dependent or t == self.time:
            return self
        return build_kvn_operator(self.grid, self.system, self.w, self.scheme, t)

    def trotter_split(self) -> list["KvNOperator"]:
        return trotter_split(self)


def _power_norm(apply, N, iterations):
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iterations):
        y = apply(x)
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return lam


def build_kvn_operator(
    grid: PhaseSpaceGrid,
    system: DynamicalSystem,
    w: PhaseGenerator | None = None,
    scheme: str = "central_fd2",
    time: float = 0.0,
) -> KvNOperator:
    """Assemble K at ``time`` (use the step midpoint for time-dependent fields)."""
    if scheme not in SCHEMES:
        raise OperatorError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if grid.ndim != system.dim:
        raise OperatorError(f"grid has {grid.ndim} axes but system dimension is {system.dim}")
    w = w if w is not None else PhaseGenerator.zero()
    if w.mode == "lagrangian" and system.canonical is None:
        raise OperatorError(f"lagrangian W needs a canonical system; {system.name!r} is not")
    pts = grid.flat_points()
    vel = system.v(pts, time)
    if not np.all(np.isfinite(vel)):
        raise OperatorError("velocity field is not finite on the grid")
    wv = None if w.is_zero else np.asarray(w(pts, time), dtype=float)
    if wv is not None and not np.all(np.isfinite(wv)):
        raise OperatorError("phase generator is not finite on the grid")

    if scheme == "spectral":
        return KvNOperator(grid, system, w, scheme, time, None, velocity=vel, w_values=wv)

    parts = [advection_part(grid, vel[j], j, scheme) for j in range(grid.ndim)]
    if wv is not None and np.any(wv != 0):
        parts.append(sp.diags(wv.astype(complex), format="csr"))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    total = sp.csr_matrix(total)
    return KvNOperator(grid, system, w, scheme, time, total, parts=parts, velocity=vel, w_values=wv)


def hermiticity_defect(op: KvNOperator) -> float:
    """max |K - K^dagger| over all entries."""
    if op.matrix is not None:
        diff = op.matrix - op.matrix.conj().T
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
    K = op.to_dense()
    return float(np.max(np.abs(K - K.conj().T)))


def trotter_split(op: KvNOperator) -> list[KvNOperator]:
    """One operator per advection axis plus one for W when W is nonzero."""
    if op.matrix is None:
        raise OperatorError("the spectral scheme is applied matrix-free and cannot be split")
    out = []
    for j, part in enumerate(op.parts):
        out.append(
            KvNOperator(op.grid, op.system, op.w, op.scheme, op.time, part, parts=[part],
                        velocity=op.velocity, w_values=None)
        )
    return out


def commutator_norm(a: KvNOperator, b: KvNOperator, iterations: int = 30) -> float:
    """Spectral-norm estimate of [A, B] (anti-Hermitian, so i[A, B] is Hermitian)."""
    A, B = a.matrix, b.matrix
    if A is None or B is None:
        raise OperatorError("commutator_norm needs sparse operators")
    C = (A @ B - B @ A).tocsr()
    if C.nnz == 0 or np.max(np.abs(C.data)) == 0:
        return 0.0
    return _power_norm(lambda x: C @ x, C.shape[0], iterations)


@dataclass(frozen=True)
class ResourceReport:
    s: int
    ell: int
    particles: int
    dims_per_particle: int
    levels: int
    phase_space_dim: int
    n_qubits: int
    T_quantum: float
    quantum_cost: float
    epsilon: float | None = None
    trajectories: int | None = None
    r: int | None = None
    T_classical: float | None = None
    classical_cost: float | None = None

    def as_dict(self):
        return dict(self.__dict__)


def trajectories_for(epsilon: float) -> int:
    """K = ceil(1/eps^2), robust to eps values like 0.1 that are inexact in binary."""
    if not 0 < epsilon <= 1:
        raise OperatorError(f"epsilon must lie in (0, 1], got {epsilon}")
    k = 1.0 / (epsilon * epsilon)
    r = round(k)
    return int(r) if abs(k - r) <= 1e-9 * k else math.ceil(k)


def resource_estimate(
    s: int,
    ell: int,
    particles: int,
    dims_per_particle: int,
    *,
    epsilon: float | None = None,
    r: int | None = None,
    T_classical: float | None = None,
    T_quantum: float | None = None,
    op: KvNOperator | None = None,
    t: float | None = None,
) -> ResourceReport:
    """Quantum (s n T) and classical Monte Carlo (K r D T) cost formulas.

    ``D = 2 d M`` phase-space dimensions, ``L = 2**ell`` levels per axis,
    ``n = ell D`` qubits.  The quantum step count defaults to the
    kinetic-energy scaling ``T = d L^2`` (giving ``2 s ell M d^2 L^2``); with
    ``op`` and ``t`` it is instead ``||K t||`` from the operator norm
    estimate.  The classical cost uses ``K = ceil(1/eps^2)`` trajectories.
    """
    for name, val in (("s", s), ("ell", ell), ("particles", particles), ("dims_per_particle", dims_per_particle)):
        if int(val) != val or val <= 0:
            raise OperatorError(f"{name} must be a positive integer")
    L = 2 ** ell
    D = 2 * dims_per_particle * particles
    n = ell * D
    if T_quantum is None:
        if op is not None and t is not None:
            T_quantum = op.norm_bound() * abs(t) / op.hbar
        else:
            T_quantum = dims_per_particle * L * L
    quantum = s * n * T_quantum
    K = classical = None
    if epsilon is not None:
        K = trajectories_for(epsilon)
        if r is not None and T_classical is not None:
            classical = K * r * D * T_classical
    return ResourceReport(
        s=s, ell=ell, particles=particles, dims_per_particle=dims_per_particle, levels=L,
        phase_space_dim=D, n_qubits=n, T_quantum=T_quantum, quantum_cost=quantum,
        epsilon=epsilon, trajectories=K, r=r, T_classical=T_classical, classical_cost=classical,
    )
