"""Classical flows x' = v(x, t) and their characteristics.

All field callables are vectorised: a point array ``x`` has shape
``(d, *batch)``; velocities come back with the same shape, divergences with
shape ``batch`` and velocity Jacobians with shape ``(d, d, *batch)`` where
``jac[k, j] = dv^k/dx^j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUpError, CausticError, DynamicsError
from .expressions import Expression
from .grid import PhaseSpaceGrid
from . import kernels

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class CanonicalStructure:
    """Hamiltonian H(q, p, t) with the axes that carry q's and p's."""

    hamiltonian: Field
    dH_dq: Field
    dH_dp: Field
    q_axes: tuple[int, ...]
    p_axes: tuple[int, ...]
    time_dependent: bool = False

    def velocity(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[list(self.q_axes)] = self.dH_dp(x, t)
        out[list(self.p_axes)] = -self.dH_dq(x, t)
        return out

    def lagrangian(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        p = x[list(self.p_axes)]
        return np.sum(p * self.dH_dp(x, t), axis=0) - self.hamiltonian(x, t)

    def cyclic_axes(self, points, t=0.0, tol=1e-12) -> tuple[int, ...]:
        """q axes along which H does not vary at the sampled points."""
        g = np.atleast_2d(self.dH_dq(points, t))
        return tuple(q for k, q in enumerate(self.q_axes) if np.max(np.abs(g[k])) <= tol)


@dataclass(frozen=True)
class DynamicalSystem:
    dim: int
    velocity: Field
    divergence: Field | None = None
    velocity_jacobian: Field | None = None
    name: str = "custom"
    is_divergence_free: bool = False
    canonical: CanonicalStructure | None = None
    time_dependent: bool = False
    fd_step: float | tuple[float, ...] = 1e-5
    params: dict = field(default_factory=dict, compare=False)

    def v(self, x, t=0.0) -> np.ndarray:
        return np.asarray(self.velocity(np.asarray(x, dtype=float), t), dtype=float)

    def jacobian(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.velocity_jacobian is not None:
            return np.asarray(self.velocity_jacobian(x, t), dtype=float)
        return finite_difference_jacobian(self.velocity, x, t, self._steps())

    def div(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_divergence_free:
            return np.zeros(x.shape[1:])
        if self.divergence is not None:
            return np.asarray(self.divergence(x, t), dtype=float)
        return np.trace(self.jacobian(x, t), axis1=0, axis2=1)

    def with_fd_scale(self, extents: Sequence[float]) -> "DynamicalSystem":
        """Set the finite-difference step to ``1e-5 * extent`` per axis."""
        return replace(self, fd_step=tuple(1e-5 * float(e) for e in extents))

    def _steps(self):
        return np.broadcast_to(np.asarray(self.fd_step, dtype=float), (self.dim,))


def finite_difference_jacobian(f: Field, x, t, steps) -> np.ndarray:
    d = x.shape[0]
    cols = []
    for j in range(d):
        e = np.zeros_like(x)
        e[j] = steps[j]
        cols.append((np.asarray(f(x + e, t)) - np.asarray(f(x - e, t))) / (2 * steps[j]))
    # cols[j][k] = dv^k/dx^j
    return np.stack(cols, axis=1)


def finite_difference_gradient(g: Field, x, t, steps) -> np.ndarray:
    d = x.shape[0]
    out = np.empty_like(x)
    for j in range(d):
        e = np.zeros_like(x)
        e[j] = steps[j]
        out[j] = (np.asarray(g(x + e, t)) - np.asarray(g(x - e, t))) / (2 * steps[j])
    return out


# ---------------------------------------------------------------------------
# phase generator W(x, t)


@dataclass(frozen=True)
class PhaseGenerator:
    """Gauge field W(x, t) driving the amplitude phase, phi' = -W/hbar.

    ``mode`` is ``"zero"``, ``"lagrangian"`` (W = -L, needs a canonical
    system) or ``"custom"`` (any real field).
    """

    mode: str = "zero"
    func: Field | None = None
    canonical: CanonicalStructure | None = None
    gradient_func: Field | None = None
    fd_step: float | tuple[float, ...] = 1e-5

    @classmethod
    def zero(cls) -> "PhaseGenerator":
        return cls("zero")

    @classmethod
    def lagrangian(cls, system: DynamicalSystem) -> "PhaseGenerator":
        if system.canonical is None:
            raise DynamicsError(
                f"lagrangian phase generator needs a canonical system; {system.name!r} has none"
            )
        return cls("lagrangian", canonical=system.canonical, fd_step=system.fd_step)

    @classmethod
    def custom(cls, func: Field | str, dim: int | None = None, aliases=None) -> "PhaseGenerator":
        if isinstance(func, str):
            if dim is None:
                raise DynamicsError("expression phase generators need the dimension")
            func = Expression(func, dim, aliases)
        return cls("custom", func=func)

    @property
    def is_zero(self) -> bool:
        return self.mode == "zero"

    @property
    def time_dependent(self) -> bool:
        if self.mode == "lagrangian":
            return self.canonical.time_dependent
        if self.mode == "custom":
            return bool(getattr(self.func, "depends_on_t", True))
        return False

    def __call__(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "zero":
            return np.zeros(x.shape[1:])
        if self.mode == "lagrangian":
            return -self.canonical.lagrangian(x, t)
        if self.mode == "custom":
            return np.broadcast_to(np.asarray(self.func(x, t), dtype=float), x.shape[1:])
        raise DynamicsError(f"unknown phase generator mode {self.mode!r}")

    def gradient(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "zero":
            return np.zeros_like(x)
        if self.gradient_func is not None:
            return np.asarray(self.gradient_func(x, t), dtype=float)
        steps = np.broadcast_to(np.asarray(self.fd_step, dtype=float), (x.shape[0],))
        return finite_difference_gradient(self, x, t, steps)


# ---------------------------------------------------------------------------
# builtin systems

BUILTIN_NAMES = (
    "scalar_autonomous",
    "exponential",
    "linear",
    "harmonic_oscillator",
    "pendulum",
    "duffing",
    "action_angle",
    "free_particle",
    "expression",
)


def _canonical_1dof(H, Hq, Hp, time_dependent=False) -> CanonicalStructure:
    return CanonicalStructure(H, Hq, Hp, q_axes=(0,), p_axes=(1,), time_dependent=time_dependent)


def make_builtin_system(name: str, **params) -> DynamicalSystem:
    """Construct one of the bundled flows.

    ============================  =============================================
    name                          parameters (defaults)
    ============================  =============================================
    ``scalar_autonomous``         ``expr`` in ``x``/``x1``, optional ``dexpr``
    ``exponential``               ``gamma`` (1.0)
    ``linear``                    ``A`` (square matrix)
    ``harmonic_oscillator``       ``omega0`` (1.0), ``modulation`` (0.0),
                                  ``mod_freq`` (1.0): omega(t) =
                                  omega0 (1 + modulation cos(mod_freq t))
    ``pendulum``                  ``omega0`` (1.0)
    ``duffing``                   ``alpha`` (1.0), ``beta`` (1.0), ``delta`` (0.0)
    ``action_angle``              ``omega0`` (1.0), ``alpha`` (0.0);
                                  H0(J) = omega0 J + alpha J^2 / 2
    ``free_particle``             ``mass`` (1.0)
    ``expression``                ``velocity`` (list of strings),
                                  optional ``divergence``
    ============================  =============================================
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise DynamicsError(f"unknown builtin system {name!r}; choose from {BUILTIN_NAMES}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise DynamicsError(f"bad parameters for {name!r}: {exc}") from None


def _scalar_autonomous(expr, dexpr=None):
    aliases = {"x": 0}
    if callable(expr):
        v = expr
        vfield = lambda x, t: v(x[0])
        dv = dexpr
    else:
        e = Expression(expr, 1, aliases)
        if e.depends_on_t:
            raise DynamicsError("scalar_autonomous fields may not depend on t")
        vfield = lambda x, t: e(x, t)
        dv = None
        if dexpr is not None:
            de = Expression(dexpr, 1, aliases)
            dv = lambda y: de(np.asarray(y)[None], 0.0)
    velocity = lambda x, t: np.asarray(vfield(x, t))[None]
    if dv is None:
        return DynamicalSystem(1, velocity, name="scalar_autonomous", params={"expr": expr})
    return DynamicalSystem(
        1,
        velocity,
        divergence=lambda x, t: np.asarray(dv(x[0])),
        velocity_jacobian=lambda x, t: np.asarray(dv(x[0]))[None, None],
        name="scalar_autonomous",
        params={"expr": expr},
    )


def _exponential(gamma=1.0):
    g = float(gamma)
    return DynamicalSystem(
        1,
        lambda x, t: g * x,
        divergence=lambda x, t: np.full(x.shape[1:], g),
        velocity_jacobian=lambda x, t: np.full((1, 1) + x.shape[1:], g),
        name="exponential",
        params={"gamma": g},
    )


def _linear(A):
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise DynamicsError(f"linear system needs a square matrix, got shape {A.shape}")
    d = A.shape[0]
    tr = float(np.trace(A))

    def jac(x, t):
        return np.broadcast_to(A.reshape(d, d, *([1] * (x.ndim - 1))), (d, d) + x.shape[1:]).copy()

    return DynamicalSystem(
        d,
        lambda x, t: np.tensordot(A, x, axes=1),
        divergence=lambda x, t: np.full(x.shape[1:], tr),
        velocity_jacobian=jac,
        name="linear",
        is_divergence_free=(tr == 0.0),
        params={"A": A.tolist()},
    )


def _harmonic_oscillator(omega0=1.0, modulation=0.0, mod_freq=1.0):
    w0, m, nu = float(omega0), float(modulation), float(mod_freq)
    td = m != 0.0
    omega = (lambda t: w0 * (1.0 + m * math.cos(nu * t))) if td else (lambda t: w0)

    def velocity(x, t):
        w = omega(t)
        return np.stack([w * x[1], -w * x[0]])

    def jac(x, t):
        w = omega(t)
        out = np.zeros((2, 2) + x.shape[1:])
        out[0, 1] = w
        out[1, 0] = -w
        return out

    canon = _canonical_1dof(
        lambda x, t: 0.5 * omega(t) * (x[0] ** 2 + x[1] ** 2),
        lambda x, t: omega(t) * x[0][None],
        lambda x, t: omega(t) * x[1][None],
        time_dependent=td,
    )
    return DynamicalSystem(
        2, velocity, velocity_jacobian=jac, name="harmonic_oscillator", is_divergence_free=True,
        canonical=canon, time_dependent=td,
        params={"omega0": w0, "modulation": m, "mod_freq": nu},
    )


def _pendulum(omega0=1.0):
    w2 = float(omega0) ** 2

    def jac(x, t):
        out = np.zeros((2, 2) + x.shape[1:])
        out[0, 1] = 1.0
        out[1, 0] = -w2 * np.cos(x[0])
        return out

    canon = _canonical_1dof(
        lambda x, t: 0.5 * x[1] ** 2 - w2 * np.cos(x[0]),
        lambda x, t: (w2 * np.sin(x[0]))[None],
        lambda x, t: x[1][None],
    )
    return DynamicalSystem(
        2, lambda x, t: np.stack([x[1], -w2 * np.sin(x[0])]), velocity_jacobian=jac,
        name="pendulum", is_divergence_free=True, canonical=canon, params={"omega0": float(omega0)},
    )


def _duffing(alpha=1.0, beta=1.0, delta=0.0):
    a, b, c = float(alpha), float(beta), float(delta)

    def jac(x, t):
        out = np.zeros((2, 2) + x.shape[1:])
        out[0, 1] = 1.0
        out[1, 0] = -a - 3 * b * x[0] ** 2
        out[1, 1] = -c
        return out

    canon = None
    if c == 0.0:
        canon = _canonical_1dof(
            lambda x, t: 0.5 * x[1] ** 2 + 0.5 * a * x[0] ** 2 + 0.25 * b * x[0] ** 4,
            lambda x, t: (a * x[0] + b * x[0] ** 3)[None],
            lambda x, t: x[1][None],
        )
    return DynamicalSystem(
        2,
        lambda x, t: np.stack([x[1], -a * x[0] - b * x[0] ** 3 - c * x[1]]),
        divergence=lambda x, t: np.full(x.shape[1:], -c),
        velocity_jacobian=jac,
        name="duffing",
        is_divergence_free=(c == 0.0),
        canonical=canon,
        params={"alpha": a, "beta": b, "delta": c},
    )


def _action_angle(omega0=1.0, alpha=0.0):
    w0, a = float(omega0), float(alpha)

    def jac(x, t):
        out = np.zeros((2, 2) + x.shape[1:])
        out[0, 1] = a
        return out

    canon = _canonical_1dof(
        lambda x, t: w0 * x[1] + 0.5 * a * x[1] ** 2,
        lambda x, t: np.zeros((1,) + x.shape[1:]),
        lambda x, t: (w0 + a * x[1])[None],
    )
    return DynamicalSystem(
        2, lambda x, t: np.stack([w0 + a * x[1], np.zeros_like(x[1])]), velocity_jacobian=jac,
        name="action_angle", is_divergence_free=True, canonical=canon,
        params={"omega0": w0, "alpha": a},
    )


def _free_particle(mass=1.0):
    m = float(mass)

    def jac(x, t):
        out = np.zeros((2, 2) + x.shape[1:])
        out[0, 1] = 1.0 / m
        return out

    canon = _canonical_1dof(
        lambda x, t: x[1] ** 2 / (2 * m),
        lambda x, t: np.zeros((1,) + x.shape[1:]),
        lambda x, t: (x[1] / m)[None],
    )
    return DynamicalSystem(
        2, lambda x, t: np.stack([x[1] / m, np.zeros_like(x[1])]), velocity_jacobian=jac,
        name="free_particle", is_divergence_free=True, canonical=canon, params={"mass": m},
    )


def _expression(velocity, divergence=None, aliases=None):
    if isinstance(velocity, str):
        velocity = [velocity]
    d = len(velocity)
    comps = [Expression(s, d, aliases) for s in velocity]
    td = any(c.depends_on_t for c in comps)

    def vfield(x, t):
        return np.stack([c(x, t) for c in comps])

    div = None
    if divergence is not None:
        div = Expression(divergence, d, aliases)
    return DynamicalSystem(
        d, vfield, divergence=div, name="expression", time_dependent=td,
        params={"velocity": list(velocity), "divergence": divergence},
    )


_BUILDERS = {
    "scalar_autonomous": _scalar_autonomous,
    "exponential": _exponential,
    "linear": _linear,
    "harmonic_oscillator": _harmonic_oscillator,
    "pendulum": _pendulum,
    "duffing": _duffing,
    "action_angle": _action_angle,
    "free_particle": _free_particle,
    "expression": _expression,
}


# ---------------------------------------------------------------------------
# diagnostics


def divergence_check(system: DynamicalSystem, sample_points) -> float:
    """Max |div v - tr(dv/dx)| over the sample points, shape ``(d, M)``."""
    x = np.asarray(sample_points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    defect = system.div(x) - np.trace(system.jacobian(x), axis1=0, axis2=1)
    return float(np.max(np.abs(defect))) if defect.size else 0.0


def canonical_consistency(system: DynamicalSystem, sample_points, t=0.0) -> float:
    """Max mismatch between Hamilton's equations and ``system.velocity``."""
    if system.canonical is None:
        raise DynamicsError(f"{system.name!r} has no canonical structure")
    x = np.asarray(sample_points, dtype=float)
    return float(np.max(np.abs(system.canonical.velocity(x, t) - system.v(x, t))))


# ---------------------------------------------------------------------------
# characteristics


@dataclass
class CharacteristicsBundle:
    """One integrated trajectory with its tangent data.

    ``jacobian_full`` is det(dx0/dx), the factor multiplying transported
    densities; ``det_forward`` is its reciprocal det(dx/dx0), which stays
    finite and is the series that changes sign at caustics.
    ``jacobian_config`` is det(dq/dq0) at fixed p0 for canonical systems.
    """

    times: np.ndarray
    states: np.ndarray
    det_forward: np.ndarray
    jacobian_full: np.ndarray
    multipliers: np.ndarray | None = None
    jacobian_config: np.ndarray | None = None
    maslov: int | None = None
    w_values: np.ndarray | None = None
    phase: np.ndarray | None = None
    hbar: float = 1.0

    @property
    def monitored_jacobian(self) -> np.ndarray:
        """Series the Maslov count runs on: configuration space when available."""
        return self.jacobian_config if self.jacobian_config is not None else self.det_forward


def _n_steps(t0, t1, dt):
    if not dt > 0:
        raise DynamicsError(f"dt must be positive (got {dt})")
    span = abs(t1 - t0)
    if span == 0:
        return 0, 0.0
    n = max(1, math.ceil(span / dt - 1e-9))
    return n, (t1 - t0) / n


def _rhs(system, x, M, P, t, w):
    J = system.jacobian(x, t)
    dx = system.v(x, t)
    dM = np.einsum("ij...,jk...->ik...", J, M)
    dP = None
    if P is not None:
        dP = -np.einsum("kj...,k...->j...", J, P)
        if w is not None and not w.is_zero:
            dP = dP - w.gradient(x, t)
    return dx, dM, dP


def _rk4_step(system, x, M, P, t, h, w):
    k1 = _rhs(system, x, M, P, t, w)
    def shift(k, a):
        return (x + a * k[0], M + a * k[1], None if P is None else P + a * k[2])
    k2 = _rhs(system, *shift(k1, h / 2), t + h / 2, w)
    k3 = _rhs(system, *shift(k2, h / 2), t + h / 2, w)
    k4 = _rhs(system, *shift(k3, h), t + h, w)
    x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    M = M + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if P is not None:
        P = P + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return x, M, P


def flow_map(system: DynamicalSystem, x0, t0: float, t1: float, dt: float, with_jacobian=True):
    """Push a batch of points ``(d, B)`` from t0 to t1 (either direction).

    Returns ``(x1, M)`` with ``M = dx1/dx0`` of shape ``(d, d, B)`` or None.
    """
    x = np.array(x0, dtype=float)
    n, h = _n_steps(t0, t1, dt)
    d = x.shape[0]
    if with_jacobian:
        M = np.broadcast_to(np.eye(d).reshape(d, d, *([1] * (x.ndim - 1))), (d, d) + x.shape[1:]).copy()
    t = t0
    for i in range(n):
        with np.errstate(over="ignore", invalid="ignore"):
            if with_jacobian:
                x, M, _ = _rk4_step(system, x, M, None, t, h, None)
            else:
                x = _rk4_position_step(system, x, t, h)
        t = t0 + (i + 1) * h
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"non-finite state at t={t:.6g}", time=t)
    return x, (M if with_jacobian else None)


def _rk4_position_step(system, x, t, h):
    k1 = system.v(x, t)
    k2 = system.v(x + h / 2 * k1, t + h / 2)
    k3 = system.v(x + h / 2 * k2, t + h / 2)
    k4 = system.v(x + h * k3, t + h)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(system, x0, P0, t0, t1, dt, w, hbar):
    x = np.array(x0, dtype=float).reshape(system.dim)
    d = system.dim
    P = None if P0 is None else np.array(P0, dtype=float).reshape(d)
    M = np.eye(d)
    n, h = _n_steps(t0, t1, dt)
    times = t0 + h * np.arange(n + 1)
    states = np.empty((n + 1, d))
    mats = np.empty((n + 1, d, d))
    mult = None if P is None else np.empty((n + 1, d))
    states[0], mats[0] = x, M
    if P is not None:
        mult[0] = P
    for i in range(n):
        with np.errstate(over="ignore", invalid="ignore"):
            x, M, P = _rk4_step(system, x, M, P, times[i], h, w)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(M))):
            raise BlowUpError(f"non-finite state at t={times[i + 1]:.6g}", time=float(times[i + 1]))
        states[i + 1], mats[i + 1] = x, M
        if P is not None:
            mult[i + 1] = P
    det_fwd = np.linalg.det(mats)
    config = None
    if system.canonical is not None:
        q = list(system.canonical.q_axes)
        config = np.linalg.det(mats[:, q][:, :, q])
    with np.errstate(divide="ignore"):
        jac_full = 1.0 / det_fwd

    bundle = CharacteristicsBundle(
        times=times, states=states, det_forward=det_fwd, jacobian_full=jac_full,
        multipliers=mult, jacobian_config=config, hbar=hbar,
    )
    from .semiclassical import cumulative_phase, maslov_count

    try:
        bundle.maslov = maslov_count(bundle.monitored_jacobian).nu
    except CausticError:
        bundle.maslov = None
    if w is not None:
        if w.time_dependent:
            bundle.w_values = np.array([w(states[i][:, None], times[i])[0] for i in range(n + 1)])
        else:
            bundle.w_values = np.asarray(w(states.T, t0), dtype=float)
        bundle.phase = cumulative_phase(times, bundle.w_values, hbar)
    return bundle


def integrate_characteristics(
    system: DynamicalSystem,
    x0,
    t0: float,
    t1: float,
    dt: float,
    w: PhaseGenerator | None = None,
    hbar: float = 1.0,
) -> CharacteristicsBundle:
    """RK4 trajectory from ``x0`` with the variational matrix dx/dx0.

    If a phase generator is given, W is sampled along the path and the phase
    phi(t) = -int W dt / hbar is accumulated (phi0 = 0).
    """
    return _integrate(system, x0, None, t0, t1, dt, w, hbar)


def lagrange_multiplier_flow(
    system: DynamicalSystem,
    w: PhaseGenerator | None,
    x0,
    P0,
    t0: float,
    t1: float,
    dt: float,
    hbar: float = 1.0,
) -> CharacteristicsBundle:
    """Trajectory plus multipliers obeying P' = -(grad v) . P - grad W."""
    w = w if w is not None else PhaseGenerator.zero()
    return _integrate(system, x0, P0, t0, t1, dt, w, hbar)


# ---------------------------------------------------------------------------
# Liouville oracle


@dataclass
class GridDensity:
    grid: PhaseSpaceGrid
    values: np.ndarray
    time: float = 0.0
    renormalization: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if np.any(self.values < 0):
            raise DynamicsError("density values must be non-negative")

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def normalized(self) -> "GridDensity":
        m = self.mass
        if m <= 0:
            raise DynamicsError("cannot normalize a zero density")
        return GridDensity(self.grid, self.values / m, self.time, 1.0 / m)


def liouville_oracle(system: DynamicalSystem, f0: GridDensity, t: float, substeps: int = 200) -> GridDensity:
    """Transport ``f0`` to ``f0.time + t`` along backward characteristics.

    Each node is traced back to its foot point x0, ``f0`` is interpolated
    there (periodic multilinear), and the result is weighted by
    |det(dx0/dx)|.  The returned density is renormalized; the factor applied
    is stored in ``renormalization`` (1 + the interpolation mass error).
    """
    grid = f0.grid
    if grid.ndim != system.dim:
        raise DynamicsError(f"grid has {grid.ndim} axes but system dimension is {system.dim}")
    t_start = f0.time
    t_end = f0.time + t
    pts = grid.flat_points()
    if t == 0:
        return GridDensity(grid, f0.values.copy(), t_end, 1.0)
    dt = abs(t) / int(substeps)
    foot, M = flow_map(system, pts, t_end, t_start, dt)
    det = np.linalg.det(np.moveaxis(M, -1, 0))
    vals = kernels.periodic_interp(
        np.ascontiguousarray(f0.values, dtype=float), grid.x_min, grid.dx, foot
    )
    f = np.abs(det) * vals
    out = GridDensity(grid, f.reshape(grid.shape), t_end)
    mass = out.mass
    if not mass > 0:
        raise DynamicsError("oracle produced an empty density")
    out.values /= mass
    out.renormalization = 1.0 / mass
    return out
