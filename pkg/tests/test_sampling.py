import math

import numpy as np
import pytest

from kvnsim.dynamics import make_builtin_system
from kvnsim.errors import EstimationError, ObservableError
from kvnsim.operator import build_kvn_operator
from kvnsim.propagation import WaveFunction, propagate_cayley
from kvnsim.sampling import (
    KVN_CALLS_PER_GROVER_STEP,
    AncillaState,
    EstimationResult,
    GaussianSampler,
    amplitude_estimate,
    build_ancilla_split,
    classical_mc_estimate,
    default_max_iterations,
    exponential_schedule,
    grover_statevector_probability,
    reference_expectation,
    scaling_study,
)
from kvnsim.states import ObservableSpec, gaussian_state, indicator, moment

from conftest import square_grid

OSC = make_builtin_system("harmonic_oscillator")
ONE = ObservableSpec("grid_function", name="one", func=lambda x, t: np.ones(x.shape[1:]), bounds=(0.0, 1.0))
SMOOTH = ObservableSpec("grid_function", name="tanh_q", func=lambda x, t: 2 * np.tanh(x[0]), bounds=(-2.0, 2.0))


def blob_sampler():
    return GaussianSampler.isotropic([1.0, 0.0], 0.5)


def test_mc_constant_observable():
    r = classical_mc_estimate(OSC, blob_sampler(), ONE, 1.0, 50, seed=3)
    assert r.estimate == 1.0
    assert r.error == 0.0
    assert r.queries == 50 and r.method == "classical_mc"


def test_mc_oscillator_quarter_turn():
    r = classical_mc_estimate(OSC, blob_sampler(), moment(0), math.pi / 2, 4000, seed=11)
    assert abs(r.estimate) <= 3 * r.error


def test_mc_standard_error_slope():
    Ks = np.array([100, 1000, 10000, 100000])
    errs = [classical_mc_estimate(OSC, blob_sampler(), moment(0), 0.5, int(K), seed=int(K)).error for K in Ks]
    assert np.polyfit(np.log(Ks), np.log(errs), 1)[0] == pytest.approx(-0.5, abs=0.1)


def test_mc_argument_errors():
    with pytest.raises(EstimationError):
        classical_mc_estimate(OSC, blob_sampler(), moment(0), 1.0, 1)
    with pytest.raises(ObservableError):
        classical_mc_estimate(OSC, blob_sampler(), ObservableSpec("kvn_energy"), 1.0, 10)


def test_reference_matches_rotation():
    mean, var = reference_expectation(OSC, blob_sampler(), moment(0), math.pi / 2, 1e-2)
    assert mean == pytest.approx(0.0, abs=1e-9)
    assert var == pytest.approx(0.25, rel=1e-6)


def test_sampler_moments(rng):
    s = GaussianSampler([1.0, -1.0], [[1.0, 0.3], [0.3, 0.5]])
    x = s.sample(rng, 200000)
    np.testing.assert_allclose(x.mean(axis=1), s.mean, atol=1e-2)
    np.testing.assert_allclose(np.cov(x), s.cov, atol=1e-2)
    nodes, w = s.quadrature(8)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(nodes @ w, s.mean, atol=1e-12)
    with pytest.raises(EstimationError):
        GaussianSampler([0.0, 0.0], np.eye(3))


def test_ancilla_for_unit_observable(grid32):
    psi = gaussian_state(grid32, (1.0, 0.0), (0.5, 0.5))
    anc = build_ancilla_split(psi, ONE)
    assert anc.a == pytest.approx(1.0, abs=1e-14)
    assert anc.theta == pytest.approx(math.pi / 2, abs=1e-7)
    assert anc.N == grid32.size


def test_ancilla_half_box(grid32):
    psi = WaveFunction(grid32, np.ones(grid32.size)).normalized()
    half = build_ancilla_split(psi, indicator([(0.0, 4.0), None]))
    full = build_ancilla_split(psi, ONE)
    assert half.a == pytest.approx(0.5 * full.a, abs=1e-14)


def test_quarter_amplitude_angle():
    assert AncillaState.from_amplitude(0.25).theta == pytest.approx(math.pi / 6, abs=1e-15)


def test_ancilla_errors(grid32):
    psi = gaussian_state(grid32, (1.0, 0.0), (0.5, 0.5))
    with pytest.raises(ObservableError, match="no declared bounds"):
        build_ancilla_split(psi, moment(0))
    with pytest.raises(ObservableError, match="leaves its bounds"):
        build_ancilla_split(psi, ObservableSpec("moment", axis=0, bounds=(-1.0, 1.0)))
    with pytest.raises(EstimationError):
        AncillaState(1, 1.5, 0.0, (0.0, 1.0))


def test_unscale_round_trip(grid32):
    psi = gaussian_state(grid32, (1.0, 0.0), (0.5, 0.5))
    anc = build_ancilla_split(psi, SMOOTH)
    grid_mean = float(np.sum(2 * np.tanh(grid32.flat_points()[0]) * np.abs(psi.psi) ** 2) * grid32.cell_volume)
    assert anc.unscale(anc.a) == pytest.approx(grid_mean, abs=1e-13)


def test_two_subspace_law_matches_statevector(grid32):
    psi = gaussian_state(grid32, (0.5, 0.5), (0.5, 0.5))
    obs = indicator([(0.0, 2.0), (-1.0, 4.0)])
    anc = build_ancilla_split(psi, obs)
    for m in range(8):
        assert grover_statevector_probability(psi, obs, m) == pytest.approx(float(anc.success_probability(m)), abs=1e-12)


def test_schedule():
    assert exponential_schedule(10) == [0, 1, 2, 4, 8, 10]
    assert exponential_schedule(8) == [0, 1, 2, 4, 8]
    assert exponential_schedule(0) == [0]
    assert exponential_schedule(27, growth=3) == [0, 1, 3, 9, 27]
    with pytest.raises(EstimationError):
        exponential_schedule(-1)
    assert default_max_iterations(0.01) == 50
    assert default_max_iterations(0.49) == 2


def test_ae_calibration():
    anc = AncillaState.from_amplitude(0.25)
    hits = sum(abs(amplitude_estimate(anc, 0.01, seed=s, shots=32, m_max=64).estimate - 0.25) <= 0.01
               for s in range(100))
    assert hits >= 95


def test_ae_zero_amplitude():
    r = amplitude_estimate(AncillaState.from_amplitude(0.0), 0.01, seed=1)
    assert r.estimate == 0.0


def test_ae_unit_amplitude():
    r = amplitude_estimate(AncillaState.from_amplitude(1.0), 0.01, seed=1)
    assert r.estimate == 1.0


@pytest.mark.parametrize("eps", [0.0, 1e-5, 0.5, 0.7])
def test_ae_epsilon_range(eps):
    with pytest.raises(EstimationError):
        amplitude_estimate(AncillaState.from_amplitude(0.3), eps)


def test_ae_argument_errors():
    anc = AncillaState.from_amplitude(0.3)
    with pytest.raises(EstimationError):
        amplitude_estimate(anc, 0.01, shots=0)
    with pytest.raises(EstimationError):
        amplitude_estimate(anc, 0.01, method="iterative")


def test_ae_query_accounting():
    r = amplitude_estimate(AncillaState.from_amplitude(0.3), 0.02, seed=4, shots=8)
    sched = r.details["schedule"]
    assert sched == exponential_schedule(default_max_iterations(0.02))
    assert r.queries == sum(8 * (2 * m + 1) for m in sched)
    assert r.grover_steps == 8 * sum(sched)
    assert r.kvn_invocations == KVN_CALLS_PER_GROVER_STEP * r.grover_steps == 4 * r.grover_steps


def test_ae_reproducible():
    anc = AncillaState.from_amplitude(0.37, scale=(-1.0, 2.0))
    a = amplitude_estimate(anc, 0.005, seed=99)
    b = amplitude_estimate(anc, 0.005, seed=99)
    assert a == b
    c = classical_mc_estimate(OSC, blob_sampler(), moment(0), 1.0, 500, seed=7)
    d = classical_mc_estimate(OSC, blob_sampler(), moment(0), 1.0, 500, seed=7)
    assert c == d


def test_ae_error_tracks_epsilon():
    anc = AncillaState.from_amplitude(0.3)
    e1 = amplitude_estimate(anc, 0.01, seed=0).error
    e2 = amplitude_estimate(anc, 0.001, seed=0).error
    assert 5 < e1 / e2 < 20


def test_canonical_phase_estimation():
    anc = AncillaState.from_amplitude(0.25)
    runs = [amplitude_estimate(anc, 0.01, seed=s, shots=9, method="canonical") for s in range(50)]
    assert sum(abs(r.estimate - 0.25) <= 0.01 for r in runs) >= 45
    r = runs[0]
    M = 2 ** r.details["bits"]
    assert math.pi / M + (math.pi / M) ** 2 <= 0.01
    assert r.grover_steps == 9 * (M - 1)
    assert r.kvn_invocations == 4 * r.grover_steps


def test_unscaling_consistency():
    # grid AE and trajectory MC agree on a bounded observable at t = pi/4
    g = square_grid(64)
    t = math.pi / 4
    op = build_kvn_operator(g, OSC, scheme="central_fd4")
    psi0 = gaussian_state(g, (1.0, 0.0), (0.5, 0.5))
    psi, _ = propagate_cayley(op, psi0, t / 80, 80)
    anc = build_ancilla_split(psi, SMOOTH)
    ae = np.array([amplitude_estimate(anc, 0.002, seed=s).estimate for s in range(40)])
    ae_se = ae.std(ddof=1) / math.sqrt(len(ae))
    mc = classical_mc_estimate(OSC, blob_sampler(), SMOOTH, t, 200000, seed=6)
    assert abs(ae.mean() - mc.estimate) <= ae_se + mc.error


def test_estimation_result_needs_queries():
    with pytest.raises(EstimationError):
        EstimationResult(0.0, 0.1, 0.0, 0, "classical_mc")


def test_scaling_study_validation(grid32):
    psi = gaussian_state(grid32, (1.0, 0.0), (0.5, 0.5))
    kw = dict(sampler=blob_sampler(), psi_t=psi)
    with pytest.raises(EstimationError, match="two decades"):
        scaling_study(OSC, SMOOTH, 0.0, [0.1, 0.05, 0.01], **kw)
    with pytest.raises(EstimationError, match="repetitions"):
        scaling_study(OSC, SMOOTH, 0.0, [0.1, 0.001], repetitions=1, **kw)
