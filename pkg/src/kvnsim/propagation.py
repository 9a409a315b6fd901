"""Unitary time stepping of KvN wavefunctions.

``propagate_exact`` diagonalises K once (small grids only) and is the
reference the other schemes are checked against.  ``propagate_cayley``
applies the Crank-Nicolson/Cayley map, which is unitary whenever K is
Hermitian.  ``propagate_trotter`` composes per-part unitaries in first
order (Lie) or symmetric second order (Strang) sequences.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PropagationError
from .grid import PhaseSpaceGrid
from .operator import KvNOperator

MAX_EXACT_N = 4096


@dataclass
class WaveFunction:
    """Complex amplitudes on the grid, normalised so sum |psi|^2 dV = 1."""

    grid: PhaseSpaceGrid
    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex).reshape(self.grid.size)

    @property
    def density(self) -> np.ndarray:
        return (np.abs(self.psi) ** 2).reshape(self.grid.shape)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.psi, self.psi).real * self.grid.cell_volume))

    def normalized(self) -> "WaveFunction":
        n = self.norm()
        if n == 0:
            raise PropagationError("cannot normalise a zero wavefunction")
        return WaveFunction(self.grid, self.psi / n, self.t)

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.psi.copy(), self.t)


@dataclass
class PropagationRecord:
    scheme: str
    dt: float
    steps: int
    norm_drift: np.ndarray = field(repr=False)
    wall_time: float = 0.0
    solver_iterations: int = 0

    @property
    def total_drift(self) -> float:
        return float(np.sum(self.norm_drift))


def unitarity_defect(record: PropagationRecord) -> float:
    """Largest per-step change of the norm."""
    return float(np.max(record.norm_drift)) if len(record.norm_drift) else 0.0


def default_dt(op: KvNOperator, courant: float = 0.5) -> float:
    """dt such that dt ||K|| / hbar = ``courant`` (accuracy, not stability)."""
    nb = op.norm_bound()
    return courant * op.hbar / nb if nb > 0 else 1.0


def propagate_exact(op: KvNOperator, psi: WaveFunction, t_span: float) -> WaveFunction:
    if op.N > MAX_EXACT_N:
        raise PropagationError(f"exact propagation is limited to N <= {MAX_EXACT_N} (got {op.N})")
    if op.time_dependent:
        raise PropagationError("exact propagation needs a time-independent operator")
    try:
        lam, V = op.eigensystem()
    except np.linalg.LinAlgError as exc:
        raise PropagationError(f"eigensolver failed: {exc}") from None
    c = V.conj().T @ psi.psi
    out = V @ (np.exp(-1j * lam * t_span / op.hbar) * c)
    return WaveFunction(psi.grid, out, psi.t + t_span)


class _CayleyStep:
    def __init__(self, op: KvNOperator, dt: float, solver: str, tol: float):
        a = 0.5j * dt / op.hbar
        self.solver = solver
        self.tol = tol
        self.iterations = 0
        if op.matrix is not None:
            I = sp.identity(op.N, dtype=complex, format="csc")
            K = op.matrix.tocsc()
            self.A = (I + a * K).tocsc()
            self.B = (I - a * K).tocsr()
            if solver == "lu":
                self.lu = spla.splu(self.A)
            diag = self.A.diagonal()
        else:
            if solver == "lu":
                self.solver = solver = "bicgstab"
            self.A = spla.LinearOperator((op.N, op.N), matvec=lambda x: x + a * op.apply(x), dtype=complex)
            self.B = spla.LinearOperator((op.N, op.N), matvec=lambda x: x - a * op.apply(x), dtype=complex)
            diag = np.ones(op.N, dtype=complex)
            if op.w_values is not None:
                diag = diag + a * op.w_values
        inv = 1.0 / diag
        self.M = spla.LinearOperator((op.N, op.N), matvec=lambda x: inv * x, dtype=complex)

    def __call__(self, psi):
        rhs = self.B @ psi
        if self.solver == "lu":
            return self.lu.solve(rhs)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = spla.bicgstab(self.A, rhs, x0=psi, rtol=self.tol, atol=0.0, M=self.M,
                                maxiter=10_000, callback=cb)
        self.iterations += count[0]
        if info != 0:
            raise PropagationError(f"Cayley linear solve did not converge (info={info}, {count[0]} iterations)")
        return x


def propagate_cayley(
    op: KvNOperator,
    psi: WaveFunction,
    dt: float,
    steps: int,
    solver: str = "lu",
    tol: float = 1e-12,
    callback=None,
) -> tuple[WaveFunction, PropagationRecord]:
    """``steps`` Cayley steps of size ``dt`` (negative dt runs backward).

    Time-dependent operators are rebuilt at each step midpoint.  ``solver``
    is ``"lu"`` (sparse factorisation reused across steps) or
    ``"bicgstab"`` (Jacobi-preconditioned, residual ``tol``).  ``callback``
    is called as ``callback(step_index, wavefunction)`` after every step.
    """
    if dt == 0:
        raise PropagationError("dt must be nonzero")
    if solver not in ("lu", "bicgstab"):
        raise PropagationError(f"unknown solver {solver!r}")
    start = _time.perf_counter()
    x = psi.psi.copy()
    t = psi.t
    drift = np.empty(steps)
    norm0 = np.linalg.norm(x)
    stepper = None
    iters = 0
    for n in range(steps):
        if stepper is None or op.time_dependent:
            if stepper is not None:
                iters += stepper.iterations
            stepper = _CayleyStep(op.at_time(t + 0.5 * dt), dt, solver, tol)
        x = stepper(x)
        t = psi.t + (n + 1) * dt
        norm1 = np.linalg.norm(x)
        drift[n] = abs(norm1 - norm0) * np.sqrt(psi.grid.cell_volume)
        norm0 = norm1
        if callback is not None:
            callback(n, WaveFunction(psi.grid, x, t))
    if stepper is not None:
        iters += stepper.iterations
    rec = PropagationRecord("cayley", dt, steps, drift, _time.perf_counter() - start, iters)
    return WaveFunction(psi.grid, x, t), rec


def _part_unitary(part: KvNOperator, tau: float, substep: str):
    if substep == "exact":
        if part.N > MAX_EXACT_N:
            raise PropagationError(f"exact sub-steps are limited to N <= {MAX_EXACT_N}")
        lam, V = part.eigensystem()
        U = (V * np.exp(-1j * lam * tau / part.hbar)) @ V.conj().T
        return lambda x: U @ x
    if substep == "cayley":
        return _CayleyStep(part, tau, "lu", 1e-12)
    raise PropagationError(f"unknown Trotter sub-step {substep!r}")


def propagate_trotter(
    parts: list[KvNOperator],
    psi: WaveFunction,
    dt: float,
    steps: int,
    order: int = 1,
    substep: str = "exact",
    callback=None,
) -> tuple[WaveFunction, PropagationRecord]:
    """Lie (order 1) or Strang (order 2) product of per-part unitaries.

    ``callback(step_index, wavefunction)`` runs after every step.
    """
    if order not in (1, 2):
        raise PropagationError(f"Trotter order must be 1 or 2 (got {order})")
    if not parts:
        raise PropagationError("no operator parts given")
    if any(p.time_dependent for p in parts):
        raise PropagationError("Trotter stepping supports time-independent parts only")
    start = _time.perf_counter()
    if order == 1:
        seq = [_part_unitary(p, dt, substep) for p in parts]
    else:
        halves = [_part_unitary(p, 0.5 * dt, substep) for p in parts[:-1]]
        seq = halves + [_part_unitary(parts[-1], dt, substep)] + halves[::-1]
    x = psi.psi.copy()
    drift = np.empty(steps)
    norm0 = np.linalg.norm(x)
    for n in range(steps):
        for U in seq:
            x = U(x)
        norm1 = np.linalg.norm(x)
        drift[n] = abs(norm1 - norm0) * np.sqrt(psi.grid.cell_volume)
        norm0 = norm1
        if callback is not None:
            callback(n, WaveFunction(psi.grid, x, psi.t + (n + 1) * dt))
    rec = PropagationRecord(f"trotter{order}", dt, steps, drift, _time.perf_counter() - start)
    return WaveFunction(psi.grid, x, psi.t + steps * dt), rec
