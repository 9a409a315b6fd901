import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvnsim.dynamics import PhaseGenerator, make_builtin_system
from kvnsim.errors import OperatorError
from kvnsim.grid import AxisSpec, build_grid
from kvnsim.operator import (
    build_kvn_operator,
    commutator_norm,
    derivative_matrix,
    hermiticity_defect,
    resource_estimate,
    trajectories_for,
    trotter_split,
)
from kvnsim.states import gaussian_state

from conftest import square_grid


def ring(levels):
    return build_grid([AxisSpec("x", levels, 2 * np.pi, 0.0)])


def test_zero_operator(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("linear", A=np.zeros((2, 2))))
    assert op.matrix.count_nonzero() == 0
    assert hermiticity_defect(op) == 0.0


@pytest.mark.parametrize("scheme", ["central_fd2", "central_fd4"])
def test_derivative_matrix_antisymmetric(scheme):
    D = derivative_matrix(17, 0.3, scheme)
    assert abs(D + D.T).max() == 0


def test_unknown_scheme(grid32):
    with pytest.raises(OperatorError, match="unknown scheme"):
        build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"), scheme="upwind")


def test_dimension_mismatch(grid32):
    with pytest.raises(OperatorError, match="system dimension"):
        build_kvn_operator(grid32, make_builtin_system("exponential"))


def test_lagrangian_needs_canonical_system(grid32):
    s = make_builtin_system("linear", A=np.array([[0.0, 1.0], [-1.0, -0.5]]))
    w = PhaseGenerator("lagrangian")
    with pytest.raises(OperatorError, match="canonical"):
        build_kvn_operator(grid32, s, w)


@pytest.mark.parametrize("scheme", ["central_fd2", "central_fd4"])
@pytest.mark.parametrize("name,params,w", [
    ("harmonic_oscillator", {}, None),
    ("pendulum", {"omega0": 1.4}, "lagrangian"),
    ("duffing", {"delta": 0.3}, None),
    ("linear", {"A": np.array([[0.5, 1.0], [-2.0, -0.7]])}, None),
])
def test_central_schemes_exactly_hermitian(grid32, scheme, name, params, w):
    s = make_builtin_system(name, **params)
    wg = PhaseGenerator.lagrangian(s) if w == "lagrangian" else None
    assert hermiticity_defect(build_kvn_operator(grid32, s, wg, scheme)) == 0.0


@settings(max_examples=100)
@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
    st.sampled_from(["central_fd2", "central_fd4"]),
)
def test_hermiticity_random_linear_systems(a, b, c, d, scheme):
    g = square_grid(8)
    op = build_kvn_operator(g, make_builtin_system("linear", A=np.array([[a, b], [c, d]])), scheme=scheme)
    assert hermiticity_defect(op) == 0.0


@settings(max_examples=100)
@given(st.floats(0.1, 3.0), st.floats(-2, 2), st.floats(0, 1))
def test_hermiticity_random_duffing(omega, alpha, delta):
    g = square_grid(8)
    s = make_builtin_system("duffing", alpha=alpha, beta=omega, delta=delta)
    assert hermiticity_defect(build_kvn_operator(g, s, PhaseGenerator.custom("x1*x2", 2))) == 0.0


def test_spectral_hermitian_on_basis():
    g = square_grid(16)
    op = build_kvn_operator(g, make_builtin_system("pendulum"), scheme="spectral")
    assert hermiticity_defect(op) <= 1e-12


@pytest.mark.parametrize("scheme,order,tol", [("central_fd2", 2.0, 0.2), ("central_fd4", 4.0, 0.3)])
def test_consistency_order(scheme, order, tol):
    s = make_builtin_system("expression", velocity=["sin(x1)"], divergence="cos(x1)")
    sizes = [32, 64, 128, 256]
    errs = []
    for L in sizes:
        g = ring(L)
        x = g.positions(0)
        f = np.exp(np.cos(x))
        exact = -1j * (np.sin(x) * (-np.sin(x) * f) + 0.5 * np.cos(x) * f)
        errs.append(np.max(np.abs(build_kvn_operator(g, s, scheme=scheme).apply(f) - exact)))
    assert -np.polyfit(np.log(sizes), np.log(errs), 1)[0] == pytest.approx(order, abs=tol)


def test_spectral_scheme_is_exact_for_band_limited_fields():
    g = ring(32)
    s = make_builtin_system("expression", velocity=["sin(x1)"], divergence="cos(x1)")
    x = g.positions(0)
    f = np.cos(2 * x)
    exact = -1j * (np.sin(x) * (-2 * np.sin(2 * x)) + 0.5 * np.cos(x) * f)
    np.testing.assert_allclose(build_kvn_operator(g, s, scheme="spectral").apply(f), exact, atol=1e-12)


def test_exponential_plane_wave_symbol():
    # K ~ -i(x d/dx + 1/2): on a localized plane wave the interior matches the symbol
    g = build_grid([AxisSpec("x", 512, 16.0, -8.0)])
    op = build_kvn_operator(g, make_builtin_system("exponential"), scheme="central_fd4")
    x = g.positions(0)
    k = 2.0
    env = np.exp(-x ** 2 / 2)
    f = env * np.exp(1j * k * x)
    df = (1j * k - x) * f
    exact = -1j * (x * df + 0.5 * f)
    inner = np.abs(x) < 4
    err = np.max(np.abs(op.apply(f) - exact)[inner]) / np.max(np.abs(exact[inner]))
    assert err < 1e-4


@pytest.mark.parametrize("scheme,tol", [("central_fd2", 0.02), ("central_fd4", 2e-3), ("spectral", 1e-6)])
def test_oscillator_spectrum_sits_on_integers(scheme, tol):
    # spectral weight of smooth blobs lies on hbar*omega0*integers
    omega = 1.5
    g = square_grid(32)
    op = build_kvn_operator(g, make_builtin_system("harmonic_oscillator", omega0=omega), scheme=scheme)
    lam, V = np.linalg.eigh(op.to_dense())
    offset = np.abs(lam / omega - np.round(lam / omega))
    for center, sigma in (((1.0, 0.0), 0.5), ((0.5, 0.5), 0.7)):
        w = np.abs(V.conj().T @ gaussian_state(g, center, (sigma, sigma)).psi) ** 2
        assert (w * offset).sum() / w.sum() < tol


def test_divergence_free_fd2_has_zero_diagonal(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("pendulum"))
    assert np.all(op.matrix.diagonal() == 0)


def test_trotter_split_oscillator(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"))
    parts = trotter_split(op)
    assert len(parts) == 2
    assert all(hermiticity_defect(p) == 0.0 for p in parts)
    assert abs(parts[0].matrix + parts[1].matrix - op.matrix).max() == 0


def test_trotter_split_with_phase(line256):
    op = build_kvn_operator(line256, make_builtin_system("exponential"), PhaseGenerator.custom("x1^2", 1))
    parts = trotter_split(op)
    assert len(parts) == 2
    assert abs(parts[0].matrix + parts[1].matrix - op.matrix).max() == 0


def test_trotter_split_rejects_spectral(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"), scheme="spectral")
    with pytest.raises(OperatorError):
        trotter_split(op)


def test_parts_do_not_commute():
    op = build_kvn_operator(square_grid(16), make_builtin_system("harmonic_oscillator"))
    a, b = trotter_split(op)
    assert commutator_norm(a, b) > 0
    assert commutator_norm(a, a) == 0


def test_norm_bound_against_dense(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"))
    exact = np.max(np.abs(np.linalg.eigvalsh(op.to_dense())))
    assert 0.8 * exact <= op.norm_bound() <= exact * (1 + 1e-12)


def test_time_dependent_operator_rebuilds(grid32):
    s = make_builtin_system("harmonic_oscillator", modulation=0.3, mod_freq=2.0)
    op = build_kvn_operator(grid32, s)
    later = op.at_time(0.7)
    assert later.time == 0.7
    assert abs(later.matrix - op.matrix).max() > 0
    assert hermiticity_defect(later) == 0.0


def test_sparsity(grid32):
    assert build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator")).sparsity == 4
    assert build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"), scheme="central_fd4").sparsity == 8


def test_quantum_cost_example():
    r = resource_estimate(2, 5, 1, 1)
    assert r.levels == 32
    assert r.quantum_cost == 20480


def test_classical_cost_example():
    r = resource_estimate(2, 5, 1, 1, epsilon=0.1, r=2, T_classical=100)
    assert r.phase_space_dim == 2
    assert r.trajectories == 100
    assert r.classical_cost == 40000


def test_single_trajectory_at_unit_epsilon():
    assert trajectories_for(1.0) == 1


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
def test_epsilon_range(eps):
    with pytest.raises(OperatorError):
        trajectories_for(eps)


def test_resource_inputs_must_be_positive_integers():
    with pytest.raises(OperatorError):
        resource_estimate(2, 0, 1, 1)
    with pytest.raises(OperatorError):
        resource_estimate(2.5, 3, 1, 1)


def test_resource_time_from_operator(grid32):
    op = build_kvn_operator(grid32, make_builtin_system("harmonic_oscillator"))
    r = resource_estimate(4, 5, 1, 1, op=op, t=2.0)
    assert r.T_quantum == pytest.approx(2.0 * op.norm_bound())
