"""Semiclassical phase bookkeeping along characteristics.

The amplitude carried by a trajectory is

    psi(x, t) = b(t) |J0|^(1/2) exp(i phi(t)) psi(x0, t0),

with phi' = -W/hbar and b = exp(-i pi nu / 2), where nu counts the sign
changes of the monitored Jacobian (the Maslov index).  The square root steps
through the branches 1, -i, -1, i as caustics are crossed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CausticError, DynamicsError

BRANCHES = (1 + 0j, -1j, -1 + 0j, 1j)


def branch_factor(nu: int) -> complex:
    return BRANCHES[int(nu) % 4]


def cumulative_simpson(times, values) -> np.ndarray:
    """Running integral of ``values`` on a uniform time grid.

    Even nodes use composite Simpson; odd nodes add one interval of the
    four-point cubic rule to the preceding even node, keeping the whole
    series fourth-order accurate.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    n = len(t) - 1
    out = np.zeros(n + 1)
    if n == 0:
        return out
    h = (t[-1] - t[0]) / n
    if not np.allclose(np.diff(t), h, rtol=1e-9, atol=1e-12 * max(1.0, abs(h))):
        raise DynamicsError("cumulative_simpson needs a uniform time grid")
    if n < 3:
        out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]))
        return out
    pairs = h / 3.0 * (y[0:-2:2] + 4.0 * y[1:-1:2] + y[2::2])
    out[2::2] = np.cumsum(pairs)
    for i in range(1, n + 1, 2):
        # interval [i-1, i] from a cubic through four neighbouring samples
        if i - 2 >= 0 and i + 1 <= n:
            part = h * (-y[i - 2] + 13 * y[i - 1] + 13 * y[i] - y[i + 1]) / 24.0
        elif i + 2 <= n:
            part = h * (9 * y[i - 1] + 19 * y[i] - 5 * y[i + 1] + y[i + 2]) / 24.0
        else:
            part = h * (y[i - 3] - 5 * y[i - 2] + 19 * y[i - 1] + 9 * y[i]) / 24.0
        out[i] = out[i - 1] + part
    return out


def cumulative_phase(times, w_values, hbar=1.0, phi0=0.0) -> np.ndarray:
    w = np.asarray(w_values, dtype=float)
    if not np.all(np.isfinite(w)):
        raise DynamicsError("phase generator produced non-finite values along the trajectory")
    return phi0 - cumulative_simpson(times, w) / hbar


@dataclass
class MaslovResult:
    nu: int
    counts: np.ndarray
    zero_times: np.ndarray
    branches: np.ndarray

    @property
    def branch(self) -> complex:
        return branch_factor(self.nu)


def maslov_count(series, times=None) -> MaslovResult:
    """Count simple zeros of a sampled Jacobian by sign change.

    Zero times are located by linear interpolation between bracketing
    samples.  A run of exact zeros, or an exact zero whose neighbours share a
    sign, is a higher-order caustic and raises :class:`CausticError`.
    """
    s = np.asarray(series, dtype=float)
    n = len(s)
    t = np.arange(n, dtype=float) if times is None else np.asarray(times, dtype=float)
    if not np.all(np.isfinite(s)):
        raise CausticError("Jacobian series contains non-finite samples")
    sign = np.sign(s)
    zeros = np.flatnonzero(sign == 0)
    if len(zeros):
        if np.any(np.diff(zeros) == 1):
            raise CausticError(f"Jacobian vanishes on a plateau near t={t[zeros[0]]:.6g}")
        for i in zeros:
            if i == 0 or i == n - 1:
                raise CausticError(f"Jacobian is exactly zero at the endpoint t={t[i]:.6g}")
            if sign[i - 1] == sign[i + 1]:
                raise CausticError(f"Jacobian touches zero without crossing at t={t[i]:.6g}")
    crossing = np.zeros(n, dtype=np.int64)
    zero_times = []
    i = 0
    while i < n - 1:
        if sign[i] != 0 and sign[i + 1] != 0 and sign[i] != sign[i + 1]:
            crossing[i + 1] = 1
            zero_times.append(t[i] + (t[i + 1] - t[i]) * s[i] / (s[i] - s[i + 1]))
        elif sign[i + 1] == 0:
            crossing[i + 1] = 1
            zero_times.append(t[i + 1])
            i += 1  # the sample after the zero closes this crossing
        i += 1
    counts = np.cumsum(crossing)
    branches = np.array([branch_factor(c) for c in counts])
    return MaslovResult(int(counts[-1]) if n else 0, counts, np.array(zero_times), branches)


@dataclass
class PhaseLedger:
    """Phase history along one trajectory."""

    times: np.ndarray
    w_values: np.ndarray
    phase: np.ndarray
    nu: np.ndarray | None
    branch: np.ndarray | None
    mode: str = "zero"
    hbar: float = 1.0
    caustic: str | None = None

    def rows(self):
        """(t, W, phi, nu, Re b, Im b) per sample, for CSV export."""
        nu = self.nu if self.nu is not None else np.full(len(self.times), -1)
        b = self.branch if self.branch is not None else np.full(len(self.times), np.nan + 0j)
        for i in range(len(self.times)):
            yield (self.times[i], self.w_values[i], self.phase[i], int(nu[i]), b[i].real, b[i].imag)


def accumulate_phase(bundle, w, hbar: float | None = None, phi0: float = 0.0, jacobian: str = "auto") -> PhaseLedger:
    """Evaluate W along ``bundle`` and integrate phi' = -W/hbar (Simpson).

    ``jacobian`` picks the series for the Maslov count: ``"config"``,
    ``"full"`` or ``"auto"`` (configuration space when the system is
    canonical).
    """
    hbar = bundle.hbar if hbar is None else hbar
    times, states = bundle.times, bundle.states
    if w.time_dependent:
        wv = np.array([w(states[i][:, None], times[i])[0] for i in range(len(times))])
    else:
        wv = np.asarray(w(states.T, times[0]), dtype=float)
    phase = cumulative_phase(times, wv, hbar, phi0)
    if jacobian == "full":
        series = bundle.det_forward
    elif jacobian == "config":
        if bundle.jacobian_config is None:
            raise DynamicsError("configuration Jacobian is only available for canonical systems")
        series = bundle.jacobian_config
    else:
        series = bundle.monitored_jacobian
    try:
        m = maslov_count(series, times)
        nu, branch, caustic = m.counts, m.branches, None
    except CausticError as exc:
        nu, branch, caustic = None, None, str(exc)
    return PhaseLedger(times, wv, phase, nu, branch, w.mode, hbar, caustic)


def semiclassical_amplitude(bundle, ledger: PhaseLedger, psi0_value: complex, series: bool = False):
    """Transport the amplitude ``psi0_value`` along the trajectory.

    Returns b |J0|^(1/2) e^(i phi) psi0 at the final time, or at every sample
    when ``series`` is true.
    """
    if ledger.caustic is not None:
        raise CausticError(ledger.caustic)
    if len(ledger.times) != len(bundle.times):
        raise DynamicsError("ledger and bundle have different time grids")
    amp = ledger.branch * np.sqrt(np.abs(bundle.jacobian_full)) * np.exp(1j * ledger.phase) * psi0_value
    return amp if series else complex(amp[-1])


def hamilton_jacobi_residual(system, bundle, ledger: PhaseLedger) -> float:
    """Max violation of the Hamilton-Jacobi and action relations on a path.

    With the eikonal relation hbar d_q phi = p, the partial time derivative is
    hbar d_t phi = hbar phi' - p.q'.  Returned is
    max_t |hbar phi' - p.q' + H| + |hbar phi' - L|, where phi' and q' are
    differentiated numerically from the ledger and the trajectory.
    """
    if system.canonical is None:
        raise DynamicsError(f"{system.name!r} is not canonical")
    if ledger.mode != "lagrangian":
        raise DynamicsError("Hamilton-Jacobi residual needs the lagrangian phase generator")
    can = system.canonical
    t = ledger.times
    hphi_dot = np.gradient(ledger.hbar * ledger.phase, t, edge_order=2)
    q = bundle.states[:, list(can.q_axes)]
    p = bundle.states[:, list(can.p_axes)]
    q_dot = np.gradient(q, t, axis=0, edge_order=2)
    if can.time_dependent:
        H = np.array([can.hamiltonian(bundle.states[i][:, None], t[i])[0] for i in range(len(t))])
        L = np.array([can.lagrangian(bundle.states[i][:, None], t[i])[0] for i in range(len(t))])
    else:
        H = can.hamiltonian(bundle.states.T, t[0])
        L = can.lagrangian(bundle.states.T, t[0])
    hj = np.abs(hphi_dot - np.sum(p * q_dot, axis=1) + H)
    action = np.abs(hphi_dot - L)
    return float(np.max(hj + action))
