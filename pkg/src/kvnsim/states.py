"""Initial states, expectation values, uncertainties and conservation checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ObservableError
from .grid import PhaseSpaceGrid
from .propagation import WaveFunction

MAXWELLIAN_TRUNCATION = 1e-6
OBSERVABLE_KINDS = ("grid_function", "indicator", "moment", "kvn_energy")


def _min_image(grid: PhaseSpaceGrid, axis: int, x, c):
    X = grid.axes[axis].extent
    return (np.asarray(x) - c + 0.5 * X) % X - 0.5 * X


def gaussian_state(grid: PhaseSpaceGrid, center, sigmas, momentum_tilt=None) -> WaveFunction:
    """psi ~ prod_j exp(-(x_j - c_j)^2 / (4 sigma_j^2)) exp(i k.(x - c)).

    Distances are taken with the minimum-image convention so the blob wraps
    around the periodic box.  ``sigmas`` is the standard deviation of
    |psi|^2; ``momentum_tilt`` is a wavenumber per axis.
    """
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.ndim,))
    s = np.broadcast_to(np.asarray(sigmas, dtype=float), (grid.ndim,))
    lo, hi = grid.x_min, grid.x_min + grid.extents
    if np.any(c < lo) or np.any(c >= hi):
        raise ObservableError(f"center {c.tolist()} lies outside the box")
    if np.any(s < grid.dx * (1 - 1e-12)):
        raise ObservableError(f"widths {s.tolist()} are below the grid spacing {grid.dx.tolist()}")
    logamp = np.zeros(grid.shape)
    phase = np.zeros(grid.shape)
    k = None if momentum_tilt is None else np.broadcast_to(np.asarray(momentum_tilt, dtype=float), (grid.ndim,))
    for j in range(grid.ndim):
        d = _min_image(grid, j, grid.positions(j), c[j])
        shape = [1] * grid.ndim
        shape[j] = -1
        logamp = logamp - (d ** 2 / (4 * s[j] ** 2)).reshape(shape)
        if k is not None:
            phase = phase + (k[j] * d).reshape(shape)
    psi = np.exp(logamp + 1j * phase)
    return WaveFunction(grid, psi.ravel()).normalized()


def coherent_width(grid: PhaseSpaceGrid, axis: int) -> float:
    """Width at which position and momentum spreads are equal in grid units."""
    a = grid.axes[axis]
    return a.dx * math.sqrt(a.levels / (4 * math.pi))


def _split_axes(grid, q_axes, p_axes):
    if q_axes is None and p_axes is None:
        if grid.ndim % 2:
            raise ObservableError("maxwellian needs an even number of axes (q's then p's)")
        d = grid.ndim // 2
        return tuple(range(d)), tuple(range(d, 2 * d))
    return tuple(q_axes), tuple(p_axes)


def maxwellian_state(
    grid: PhaseSpaceGrid,
    mass: float = 1.0,
    temperature: float = 1.0,
    phase_mode: str = "none",
    k: Sequence[float] | None = None,
    q_axes=None,
    p_axes=None,
) -> WaveFunction:
    """Uniform in q, Maxwellian exp(-p^2/2mT) in p.

    ``phase_mode="conjugate"`` attaches hbar phi = (k.q / k.v) T with
    v = p/m; on rows where k.v vanishes the phase is set to zero.
    """
    q_axes, p_axes = _split_axes(grid, q_axes, p_axes)
    mT = mass * temperature
    if not mT > 0:
        raise ObservableError("mass and temperature must be positive")
    lost = 0.0
    for j in p_axes:
        a = grid.axes[j]
        lost += ndtr(a.x_min / math.sqrt(mT)) + ndtr(-(a.x_min + a.extent) / math.sqrt(mT))
    if lost > MAXWELLIAN_TRUNCATION:
        raise ObservableError(f"momentum box truncates {lost:.3g} of the Maxwellian (limit {MAXWELLIAN_TRUNCATION})")
    X = grid.mesh()
    p2 = sum(X[j] ** 2 for j in p_axes)
    amp = np.exp(-p2 / (4 * mT))
    phase = np.zeros(grid.shape)
    if phase_mode == "conjugate":
        kk = np.broadcast_to(np.asarray(k if k is not None else 1.0, dtype=float), (len(q_axes),))
        kq = sum(kk[i] * X[j] for i, j in enumerate(q_axes))
        kv = sum(kk[i] * X[j] / mass for i, j in enumerate(p_axes))
        with np.errstate(divide="ignore", invalid="ignore"):
            phase = np.where(kv != 0, kq * temperature / (grid.hbar * kv), 0.0)
    elif phase_mode != "none":
        raise ObservableError(f"unknown phase_mode {phase_mode!r}")
    return WaveFunction(grid, (amp * np.exp(1j * phase)).ravel()).normalized()


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class ObservableSpec:
    """What to measure.

    ``grid_function``: ``func(x, t)`` on points ``(d, M)``; ``indicator``:
    ``region`` is a (lo, hi) pair per axis, ``None`` meaning unrestricted;
    ``moment``: ``axis`` and ``power``; ``kvn_energy``: <psi|K psi>.
    ``bounds`` is (O_min, O_max) when known.
    """

    kind: str
    name: str = ""
    func: Callable | None = None
    region: tuple | None = None
    axis: int = 0
    power: int = 1
    bounds: tuple[float, float] | None = None
    periodic: str = "auto"

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ObservableError(f"unknown observable kind {self.kind!r}")
        if self.kind == "grid_function" and self.func is None:
            raise ObservableError("grid_function observables need func")
        if self.kind == "indicator":
            if self.region is None:
                raise ObservableError("indicator observables need a region")
            if self.bounds is None:
                object.__setattr__(self, "bounds", (0.0, 1.0))
        if self.bounds is not None and not self.bounds[0] < self.bounds[1]:
            raise ObservableError(f"bounds must satisfy O_min < O_max, got {self.bounds}")

    def evaluate(self, points, t=0.0) -> np.ndarray:
        """O at raw points ``(d, M)`` (no periodic unwrapping)."""
        x = np.asarray(points, dtype=float)
        if self.kind == "grid_function":
            return np.broadcast_to(np.asarray(self.func(x, t), dtype=float), x.shape[1:]).copy()
        if self.kind == "indicator":
            inside = np.ones(x.shape[1:], dtype=bool)
            for j, r in enumerate(self.region):
                if r is None:
                    continue
                lo, hi = r
                inside &= (x[j] >= lo) & (x[j] < hi)
            return inside.astype(float)
        if self.kind == "moment":
            return x[self.axis] ** self.power
        raise ObservableError("kvn_energy is not a pointwise observable")


def indicator(region, name="") -> ObservableSpec:
    return ObservableSpec("indicator", name=name, region=tuple(region))


def moment(axis: int, power: int = 1, name="") -> ObservableSpec:
    return ObservableSpec("moment", name=name, axis=axis, power=power)


def _axis_marginal(psi: WaveFunction, axis: int) -> np.ndarray:
    f = psi.density
    others = tuple(k for k in range(psi.grid.ndim) if k != axis)
    m = f.sum(axis=others) if others else f
    return m / m.sum()


def unwrapped_positions(psi: WaveFunction, axis: int, mode: str = "auto") -> np.ndarray:
    """Axis coordinates, re-centred on the circular mean when the blob wraps.

    ``auto`` switches to circular statistics when the plain spread exceeds a
    quarter of the period and the distribution has a well-defined circular
    mean (resultant length above 0.5).
    """
    g = psi.grid
    x = g.positions(axis)
    if mode == "plain":
        return x
    X = g.axes[axis].extent
    w = _axis_marginal(psi, axis)
    z = np.sum(w * np.exp(2j * np.pi * (x - g.axes[axis].x_min) / X))
    if mode == "auto":
        mean = np.sum(w * x)
        spread = math.sqrt(max(np.sum(w * (x - mean) ** 2), 0.0))
        if spread <= X / 4 or abs(z) < 0.5:
            return x
    elif mode != "circular":
        raise ObservableError(f"unknown periodic mode {mode!r}")
    mu = g.axes[axis].x_min + (np.angle(z) % (2 * np.pi)) * X / (2 * np.pi)
    return mu + _min_image(g, axis, x, mu)


def expectation(psi: WaveFunction, obs: ObservableSpec, op=None, t: float | None = None) -> float:
    """sum O |psi|^2 dV (real part of <psi|K psi> for ``kvn_energy``)."""
    g = psi.grid
    t = psi.t if t is None else t
    if obs.kind == "kvn_energy":
        if op is None:
            raise ObservableError("kvn_energy needs the operator")
        return kvn_energy(psi, op)[0]
    f = psi.density
    if obs.kind == "moment":
        x = unwrapped_positions(psi, obs.axis, obs.periodic)
        shape = [1] * g.ndim
        shape[obs.axis] = -1
        vals = np.broadcast_to((x ** obs.power).reshape(shape), g.shape)
    else:
        vals = obs.evaluate(g.flat_points(), t).reshape(g.shape)
    if not np.all(np.isfinite(vals)):
        raise ObservableError(f"observable {obs.name or obs.kind} is not finite on the grid")
    return float(np.sum(vals * f) * g.cell_volume)


def kvn_energy(psi: WaveFunction, op) -> tuple[float, float]:
    """(Re, Im) of <psi|K psi> dV; the imaginary part is a Hermiticity defect."""
    e = np.vdot(psi.psi, op.apply(psi.psi)) * psi.grid.cell_volume
    return float(e.real), float(e.imag)


def uncertainty(psi: WaveFunction, axis: int, kind: str = "x", periodic: str = "auto") -> float:
    """Standard deviation of x_axis (from |psi|^2) or P_axis (from |FFT psi|^2)."""
    g = psi.grid
    if kind == "x":
        x = unwrapped_positions(psi, axis, periodic)
        w = _axis_marginal(psi, axis)
    elif kind == "P":
        phat = np.fft.fft(psi.psi.reshape(g.shape), axis=axis)
        prob = np.abs(phat) ** 2
        others = tuple(k for k in range(g.ndim) if k != axis)
        w = prob.sum(axis=others) if others else prob
        w = w / w.sum()
        x = g.momentum_grid(axis)
    else:
        raise ObservableError(f"kind must be 'x' or 'P', got {kind!r}")
    mean = np.sum(w * x)
    return float(math.sqrt(max(np.sum(w * (x - mean) ** 2), 0.0)))


# ---------------------------------------------------------------------------
# conservation diagnostics

DEFAULT_TOLERANCES = {
    "norm": 1e-10,
    "kvn_energy": 1e-9,
    "classical_energy": 1e-2,
    "momentum": 1e-10,
}


@dataclass
class ConservedQuantity:
    name: str
    values: np.ndarray
    expected: bool
    tolerance: float
    relative: bool

    @property
    def drift(self) -> float:
        v = self.values
        dev = float(np.max(np.abs(v - v[0]))) if len(v) else 0.0
        if self.relative and abs(v[0]) > 1e-12:
            return dev / float(abs(v[0]))
        return dev

    @property
    def passed(self) -> bool | None:
        return None if not self.expected else bool(self.drift <= self.tolerance)


@dataclass
class ConservationReport:
    times: np.ndarray
    quantities: dict[str, ConservedQuantity] = field(default_factory=dict)

    @property
    def flagged(self) -> list[str]:
        """Quantities expected to be conserved whose drift exceeds tolerance."""
        return [k for k, q in self.quantities.items() if q.passed is False]

    @property
    def ok(self) -> bool:
        return not self.flagged

    def summary(self) -> dict:
        return {
            k: {"expected": q.expected, "drift": q.drift, "tolerance": q.tolerance, "passed": q.passed}
            for k, q in self.quantities.items()
        }


def conservation_report(snapshots: Sequence[WaveFunction], system=None, op=None, tolerances=None) -> ConservationReport:
    """Track norm, <K>, <H f> and cyclic <p_j f> over a snapshot series.

    A quantity is only held to its tolerance when its conservation condition
    holds: time-independent K for <K>, time-independent H for <H f>, and
    H independent of q_j for <p_j f>.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    if not snapshots:
        raise ObservableError("no snapshots given")
    g = snapshots[0].grid
    times = np.array([s.t for s in snapshots])
    rep = ConservationReport(times)
    norm2 = np.array([s.norm() ** 2 for s in snapshots])
    rep.quantities["norm"] = ConservedQuantity("norm", norm2, True, tol["norm"], relative=False)
    if op is not None:
        e = np.array([kvn_energy(s, op.at_time(s.t))[0] for s in snapshots])
        rep.quantities["kvn_energy"] = ConservedQuantity(
            "kvn_energy", e, not op.time_dependent, tol["kvn_energy"], relative=True
        )
    can = getattr(system, "canonical", None)
    if can is not None:
        pts = g.flat_points()
        H = [np.sum(can.hamiltonian(pts, s.t) * s.density.ravel()) * g.cell_volume for s in snapshots]
        rep.quantities["classical_energy"] = ConservedQuantity(
            "classical_energy", np.array(H), not can.time_dependent, tol["classical_energy"], relative=True
        )
        cyclic = can.cyclic_axes(pts, snapshots[0].t)
        for k, qa in enumerate(can.q_axes):
            pa = can.p_axes[k]
            vals = np.array([np.sum(pts[pa] * s.density.ravel()) * g.cell_volume for s in snapshots])
            name = f"momentum_{g.labels[pa]}"
            rep.quantities[name] = ConservedQuantity(
                name, vals, qa in cyclic and not can.time_dependent, tol["momentum"], relative=False
            )
    return rep
