import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kvnsim.dynamics import PhaseGenerator, integrate_characteristics, make_builtin_system
from kvnsim.errors import CausticError, DynamicsError
from kvnsim.semiclassical import (
    BRANCHES,
    accumulate_phase,
    branch_factor,
    cumulative_phase,
    cumulative_simpson,
    hamilton_jacobi_residual,
    maslov_count,
    semiclassical_amplitude,
)

TWO_PI = 2 * math.pi


def test_simpson_fourth_order():
    ns = np.array([20, 40, 80, 160])
    errs = []
    for n in ns:
        t = np.linspace(0.0, 2.0, n + 1)
        errs.append(np.max(np.abs(cumulative_simpson(t, np.cos(t)) - np.sin(t))))
    slope = np.polyfit(np.log(2.0 / ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.3)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7])
def test_simpson_exact_on_cubics(n):
    t = np.linspace(-1.0, 1.5, n + 1)
    y = 1 + t - 2 * t ** 2 + t ** 3
    exact = lambda s: s + s ** 2 / 2 - 2 * s ** 3 / 3 + s ** 4 / 4
    got = cumulative_simpson(t, y)
    if n < 3:
        assert got[-1] == pytest.approx(np.trapezoid(y, t))
    else:
        np.testing.assert_allclose(got, exact(t) - exact(t[0]), atol=1e-13)


def test_simpson_needs_uniform_grid():
    with pytest.raises(DynamicsError, match="uniform"):
        cumulative_simpson([0.0, 0.1, 0.3, 0.4], [1, 1, 1, 1])


def test_phase_rejects_non_finite():
    with pytest.raises(DynamicsError):
        cumulative_phase([0, 1, 2], [0.0, np.inf, 0.0])


def test_zero_generator_keeps_phase():
    b = integrate_characteristics(make_builtin_system("pendulum"), [1.0, 0.0], 0.0, 2.0, 1e-2)
    ledger = accumulate_phase(b, PhaseGenerator.zero(), phi0=0.7)
    assert np.all(ledger.phase == 0.7)


@pytest.mark.parametrize("mass,p0,hbar", [(1.0, 0.5, 1.0), (2.0, -1.5, 0.3)])
def test_free_particle_phase(mass, p0, hbar):
    s = make_builtin_system("free_particle", mass=mass)
    b = integrate_characteristics(s, [0.2, p0], 0.0, 3.0, 1e-3, hbar=hbar)
    ledger = accumulate_phase(b, PhaseGenerator.lagrangian(s))
    np.testing.assert_allclose(ledger.phase, p0 ** 2 / (2 * mass) * b.times / hbar, rtol=1e-12, atol=1e-13)


def test_action_angle_phase():
    s = make_builtin_system("action_angle", omega0=1.3, alpha=0.4)
    theta0, J = 0.2, 1.5
    b = integrate_characteristics(s, [theta0, J], 0.0, 2.0, 1e-3)
    ledger = accumulate_phase(b, PhaseGenerator.lagrangian(s))
    H0 = 1.3 * J + 0.2 * J ** 2
    expected = J * (b.states[:, 0] - theta0) - H0 * b.times
    np.testing.assert_allclose(ledger.phase, expected, atol=1e-10)


def test_maslov_cosine():
    t = np.arange(0.0, TWO_PI, 1e-3)
    m = maslov_count(np.cos(t), t)
    assert m.nu == 2
    assert m.branch == -1
    np.testing.assert_allclose(m.zero_times, [math.pi / 2, 3 * math.pi / 2], atol=1e-6)


def test_maslov_constant():
    m = maslov_count(np.ones(50))
    assert m.nu == 0 and m.branch == 1


def test_maslov_interior_exact_zero_counts_once():
    m = maslov_count([1.0, 0.5, 0.0, -0.5, -1.0])
    assert m.nu == 1
    assert m.zero_times.tolist() == [2.0]
    assert m.counts.tolist() == [0, 0, 1, 1, 1]


def test_maslov_plateau_rejected():
    with pytest.raises(CausticError, match="plateau"):
        maslov_count([1.0, 0.0, 0.0, -1.0])


def test_maslov_touch_rejected():
    with pytest.raises(CausticError, match="without crossing"):
        maslov_count([1.0, 0.0, 1.0])


def test_maslov_endpoint_zero_rejected():
    with pytest.raises(CausticError, match="endpoint"):
        maslov_count([1.0, 0.5, 0.0])


def test_maslov_non_finite_rejected():
    with pytest.raises(CausticError):
        maslov_count([1.0, np.nan, -1.0])


def test_branch_cycle():
    assert [branch_factor(k) for k in range(5)] == [1, -1j, -1, 1j, 1]
    for k in range(8):
        assert branch_factor(k) == pytest.approx(np.exp(-0.5j * math.pi * k))


@given(st.integers(0, 12))
def test_branch_returns_after_four_zeros(k):
    t = np.linspace(0.0, 4 * k * math.pi, 400 * max(k, 1) + 1) + 0.1
    m = maslov_count(np.cos(t), t)
    assert m.nu == 4 * k
    assert m.branch == 1
    assert m.branches.tolist() == [BRANCHES[c % 4] for c in m.counts]


def test_oscillator_config_jacobian_zeros():
    s = make_builtin_system("harmonic_oscillator")
    b = integrate_characteristics(s, [1.0, 0.3], 0.0, TWO_PI, 1e-3)
    np.testing.assert_allclose(b.jacobian_config, np.cos(b.times), atol=1e-10)
    assert maslov_count(b.jacobian_config, b.times).nu == 2


def test_amplitude_identity_for_null_flow():
    s = make_builtin_system("linear", A=np.zeros((2, 2)))
    b = integrate_characteristics(s, [0.5, 0.5], 0.0, 1.0, 1e-2)
    ledger = accumulate_phase(b, PhaseGenerator.zero(), jacobian="full")
    assert semiclassical_amplitude(b, ledger, 0.3 - 0.2j) == 0.3 - 0.2j


def test_amplitude_exponential():
    b = integrate_characteristics(make_builtin_system("exponential"), [1.0], 0.0, 1.0, 1e-3)
    ledger = accumulate_phase(b, PhaseGenerator.zero())
    amp = semiclassical_amplitude(b, ledger, 2.0 + 0j)
    assert amp == pytest.approx(2.0 * math.exp(-0.5), rel=1e-12)


def test_amplitude_oscillator_full_period():
    s = make_builtin_system("harmonic_oscillator")
    b = integrate_characteristics(s, [1.0, 0.0], 0.0, TWO_PI, 1e-3)
    ledger = accumulate_phase(b, PhaseGenerator.zero(), jacobian="config")
    amp = semiclassical_amplitude(b, ledger, 0.8j)
    assert amp == pytest.approx(-0.8j, abs=1e-10)


def test_amplitude_series_transports_probability():
    s = make_builtin_system("duffing", alpha=-1.0, beta=1.0, delta=0.2)
    b = integrate_characteristics(s, [0.5, 0.5], 0.0, 3.0, 1e-3)
    ledger = accumulate_phase(b, PhaseGenerator.zero())
    psi0 = 0.6 + 0.3j
    amp = semiclassical_amplitude(b, ledger, psi0, series=True)
    np.testing.assert_allclose(np.abs(amp) ** 2, np.abs(b.jacobian_full) * abs(psi0) ** 2, rtol=1e-12)


def test_gauge_invariance_of_modulus():
    s = make_builtin_system("pendulum")
    b = integrate_characteristics(s, [1.0, 0.4], 0.0, 5.0, 1e-3)
    zero = semiclassical_amplitude(b, accumulate_phase(b, PhaseGenerator.zero()), 0.5, series=True)
    lag = semiclassical_amplitude(b, accumulate_phase(b, PhaseGenerator.lagrangian(s)), 0.5, series=True)
    np.testing.assert_allclose(np.abs(zero), np.abs(lag), rtol=1e-14)
    assert np.max(np.abs(zero - lag)) > 0.1


def test_caustic_propagates_to_amplitude():
    b = integrate_characteristics(make_builtin_system("exponential"), [1.0], 0.0, 1.0, 0.1)
    ledger = accumulate_phase(b, PhaseGenerator.zero())
    ledger.caustic = "degenerate"
    with pytest.raises(CausticError):
        semiclassical_amplitude(b, ledger, 1.0)


def test_ledger_rows():
    s = make_builtin_system("harmonic_oscillator")
    b = integrate_characteristics(s, [1.0, 0.0], 0.0, TWO_PI, 1e-2)
    rows = list(accumulate_phase(b, PhaseGenerator.lagrangian(s)).rows())
    assert len(rows) == len(b.times)
    assert len(rows[0]) == 6
    assert rows[-1][3] == 2
    assert (rows[-1][4], rows[-1][5]) == (-1.0, 0.0)


def test_config_jacobian_needs_canonical_system():
    b = integrate_characteristics(make_builtin_system("exponential"), [1.0], 0.0, 1.0, 0.1)
    with pytest.raises(DynamicsError):
        accumulate_phase(b, PhaseGenerator.zero(), jacobian="config")


def test_hamilton_jacobi_free_particle():
    s = make_builtin_system("free_particle", mass=1.5)
    b = integrate_characteristics(s, [0.0, 0.8], 0.0, 2.0, 1e-3)
    assert hamilton_jacobi_residual(s, b, accumulate_phase(b, PhaseGenerator.lagrangian(s))) <= 1e-6


def test_hamilton_jacobi_oscillator_period():
    s = make_builtin_system("harmonic_oscillator")
    b = integrate_characteristics(s, [1.0, 0.5], 0.0, TWO_PI, 1e-3)
    ledger = accumulate_phase(b, PhaseGenerator.lagrangian(s))
    assert hamilton_jacobi_residual(s, b, ledger) <= 1e-5
    # action over one period: hbar*phi = (q p)/2 - (q0 p0)/2 with the periodic orbit closing to zero
    q, p = b.states[:, 0], b.states[:, 1]
    np.testing.assert_allclose(ledger.phase, 0.5 * (q * p - q[0] * p[0]), atol=1e-9)


def test_hamilton_jacobi_needs_lagrangian_mode():
    s = make_builtin_system("harmonic_oscillator")
    b = integrate_characteristics(s, [1.0, 0.0], 0.0, 1.0, 1e-3)
    with pytest.raises(DynamicsError, match="lagrangian"):
        hamilton_jacobi_residual(s, b, accumulate_phase(b, PhaseGenerator.zero()))


def test_hamilton_jacobi_needs_canonical_system():
    s = make_builtin_system("exponential")
    b = integrate_characteristics(s, [1.0], 0.0, 1.0, 1e-2)
    with pytest.raises(DynamicsError, match="canonical"):
        hamilton_jacobi_residual(s, b, accumulate_phase(b, PhaseGenerator.zero()))
