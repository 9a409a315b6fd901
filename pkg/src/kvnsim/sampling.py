"""Observable estimation: classical Monte Carlo vs emulated amplitude estimation.

The quantum side never simulates the full Grover circuit.  Appending an
ancilla to the KvN state gives

    |Psi> = sum_x psi(x) |x> (sqrt(O(x)) |1> + sqrt(1 - O(x)) |0>),

with O rescaled to [0, 1].  The Grover iterate rotates inside the
two-dimensional span of the good (ancilla 1) and bad components, so after
``m`` iterations the good outcome has probability sin^2((2m + 1) theta) with
sin^2 theta = a = sum O |psi|^2 dV.  The emulator samples that law directly.
Each Grover step costs four KvN simulations (forward and backward runs in
each of the two reflections).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import DynamicalSystem, flow_map
from .errors import EstimationError, ObservableError
from .kernels import ae_loglik
from .propagation import WaveFunction
from .states import ObservableSpec

KVN_CALLS_PER_GROVER_STEP = 4
MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class AncillaState:
    """Two-subspace summary of the ancilla-extended KvN state.

    ``a`` is the probability of the good ancilla outcome and ``theta`` the
    rotation angle, sin^2 theta = a.  ``scale`` is the affine map (lo, hi)
    used to bring O into [0, 1]; :meth:`unscale` maps estimates back.
    """

    N: int
    a: float
    theta: float
    scale: tuple[float, float]
    description: str = ""

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise EstimationError(f"good amplitude must lie in [0, 1], got {self.a}")

    @classmethod
    def from_amplitude(cls, a: float, scale=(0.0, 1.0), N: int = 1, description: str = "") -> "AncillaState":
        a = float(min(max(a, 0.0), 1.0))
        return cls(N, a, float(math.asin(math.sqrt(a))), tuple(scale), description)

    def unscale(self, value):
        lo, hi = self.scale
        return lo + (hi - lo) * value

    def success_probability(self, m) -> np.ndarray:
        """P(good) after ``m`` Grover iterations (exact two-subspace law)."""
        m = np.asarray(m)
        return np.sin((2 * m + 1) * self.theta) ** 2


@dataclass
class EstimationResult:
    estimate: float
    epsilon: float | None
    error: float
    queries: int
    method: str
    grover_steps: int = 0
    kvn_invocations: int = 0
    achieved: float | None = None
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.queries <= 0:
            raise EstimationError("an estimate must use at least one query")


# ---------------------------------------------------------------------------
# initial-density samplers


@dataclass(frozen=True)
class GaussianSampler:
    """Normal phase-space density f0 with ``mean`` and covariance ``cov``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (mean.size, mean.size):
            raise EstimationError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @classmethod
    def isotropic(cls, mean, sigmas) -> "GaussianSampler":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        s = np.broadcast_to(np.asarray(sigmas, dtype=float), mean.shape)
        return cls(mean, np.diag(s ** 2))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws as an array of shape ``(d, n)``."""
        z = rng.standard_normal((n, self.dim))
        return self.mean[:, None] + self._chol @ z.T

    def quadrature(self, order: int = 24):
        """Tensor Gauss-Hermite nodes ``(d, order**d)`` and weights summing to 1."""
        x, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / w.sum()
        grids = np.meshgrid(*([x] * self.dim), indexing="ij")
        z = np.stack([g.ravel() for g in grids])
        wt = np.ones(z.shape[1])
        for g in np.meshgrid(*([w] * self.dim), indexing="ij"):
            wt *= g.ravel()
        return self.mean[:, None] + self._chol @ z, wt


def reference_expectation(system: DynamicalSystem, sampler: GaussianSampler, obs: ObservableSpec,
                          t: float, dt: float, order: int = 24) -> tuple[float, float]:
    """Mean and variance of O(x(t)) by quadrature over the initial density."""
    nodes, w = sampler.quadrature(order)
    x = flow_map(system, nodes, 0.0, t, dt, with_jacobian=False)[0] if t else nodes
    vals = obs.evaluate(x, t)
    mean = float(np.dot(w, vals))
    return mean, float(max(np.dot(w, (vals - mean) ** 2), 0.0))


# ---------------------------------------------------------------------------
# classical Monte Carlo


def _mc_values(system, sampler, obs, t, K, rng, dt):
    out = np.empty(K)
    for start in range(0, K, MC_CHUNK):
        n = min(MC_CHUNK, K - start)
        x = sampler.sample(rng, n)
        if t:
            x = flow_map(system, x, 0.0, t, dt, with_jacobian=False)[0]
        out[start:start + n] = obs.evaluate(x, t)
    return out


def classical_mc_estimate(system: DynamicalSystem, sampler, obs: ObservableSpec, t: float, K: int,
                          seed=0, dt: float = 1e-2, reference: float | None = None) -> EstimationResult:
    """Average O over ``K`` RK4 trajectories started from ``sampler`` draws.

    The reported error is the sample standard error.  Blow-ups propagate as
    :class:`~kvnsim.errors.BlowUpError`.
    """
    if K < 2:
        raise EstimationError("classical Monte Carlo needs K >= 2 trajectories")
    if obs.kind not in ("grid_function", "indicator", "moment"):
        raise ObservableError(f"{obs.kind} observables cannot be sampled along trajectories")
    vals = _mc_values(system, sampler, obs, t, int(K), np.random.default_rng(seed), dt)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(K))
    achieved = None if reference is None else abs(est - reference)
    return EstimationResult(est, None, se, int(K), "classical_mc", achieved=achieved)


# ---------------------------------------------------------------------------
# amplitude estimation


def _observable_on_grid(psi: WaveFunction, obs: ObservableSpec) -> np.ndarray:
    if obs.kind not in ("grid_function", "indicator", "moment"):
        raise ObservableError(f"{obs.kind} observables cannot be loaded into an ancilla")
    return obs.evaluate(psi.grid.flat_points(), psi.t)


def build_ancilla_split(psi: WaveFunction, obs: ObservableSpec) -> AncillaState:
    """Rescale O into [0, 1] with its declared bounds and form the ancilla split.

    With psi normalised (sum |psi|^2 dV = 1) the good amplitude is
    a = sum O_scaled |psi|^2 dV, so O = 1 gives a = 1.
    """
    if obs.bounds is None:
        raise ObservableError(f"observable {obs.name or obs.kind} has no declared bounds")
    lo, hi = obs.bounds
    vals = _observable_on_grid(psi, obs)
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(vals < lo - slack) or np.any(vals > hi + slack):
        raise ObservableError(
            f"observable {obs.name or obs.kind} leaves its bounds [{lo}, {hi}] "
            f"(range [{vals.min():.6g}, {vals.max():.6g}])"
        )
    scaled = np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
    a = float(np.sum(scaled * np.abs(psi.psi) ** 2) * psi.grid.cell_volume)
    desc = "phi = sqrt(O_scaled) psi on ancilla |1>, phi' = sqrt(1 - O_scaled) psi on |0> (garbage phase 0)"
    return AncillaState.from_amplitude(a, (lo, hi), psi.grid.size, desc)


def grover_statevector_probability(psi: WaveFunction, obs: ObservableSpec, m: int) -> float:
    """P(good) after ``m`` explicit Grover iterations on the 2N-dimensional state.

    Independent check of the two-subspace law; only sensible for small grids.
    """
    lo, hi = obs.bounds
    O = np.clip((_observable_on_grid(psi, obs) - lo) / (hi - lo), 0.0, 1.0)
    amp = psi.psi * math.sqrt(psi.grid.cell_volume)
    amp = amp / np.linalg.norm(amp)
    state = np.concatenate([amp * np.sqrt(1.0 - O), amp * np.sqrt(O)])
    start = state.copy()
    n = amp.size
    for _ in range(m):
        state[n:] *= -1.0  # reflect the good subspace
        state = 2.0 * np.vdot(start, state) * start - state  # reflect about the start state
    return float(np.sum(np.abs(state[n:]) ** 2))


def exponential_schedule(m_max: int, growth: int = 2) -> list[int]:
    """0, 1, g, g^2, ... below ``m_max``, closed by ``m_max`` itself."""
    if m_max < 0:
        raise EstimationError("m_max must be non-negative")
    sched = [0]
    m = 1
    while m < m_max:
        sched.append(m)
        m *= growth
    if m_max > 0:
        sched.append(int(m_max))
    return sched


def default_max_iterations(epsilon: float) -> int:
    """Largest Grover power, of order 1/epsilon."""
    return max(1, math.ceil(0.5 / epsilon))


def _mle_theta(schedule, hits, shots) -> float:
    """Global grid search over [0, pi/2] followed by a bounded local refinement."""
    m = np.asarray(schedule, dtype=np.int64)
    h = np.asarray(hits, dtype=np.int64)
    n = np.asarray(shots, dtype=np.int64)
    if np.all(h == 0):
        return 0.0
    npts = 32 * (2 * int(m.max()) + 1) + 1
    grid = np.linspace(0.0, 0.5 * np.pi, npts)
    ll = ae_loglik(grid, m, h, n)
    k = int(np.argmax(ll))
    best_t, best_ll = grid[k], ll[k]
    step = grid[1] - grid[0]
    lo, hi = max(0.0, best_t - step), min(0.5 * np.pi, best_t + step)
    res = minimize_scalar(lambda th: -float(ae_loglik(np.array([th]), m, h, n)[0]),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if res.success and -res.fun > best_ll:
        best_t = float(res.x)
    return float(best_t)


def _fisher_sigma_a(theta, schedule, shots):
    info = sum(4.0 * s * (2 * m + 1) ** 2 for m, s in zip(schedule, shots))
    return abs(math.sin(2 * theta)) / math.sqrt(info)


def _draw_hits(ancilla, schedule, shots, rng):
    p = ancilla.success_probability(np.asarray(schedule))
    return rng.binomial(np.asarray(shots), np.clip(p, 0.0, 1.0))


def _phase_estimation_probs(theta: float, M: int) -> np.ndarray:
    """Outcome law of canonical phase estimation with M = 2^bits grid points."""
    y = np.arange(M)

    def fejer(delta):
        s = np.sin(np.pi * delta)
        num = np.sin(M * np.pi * delta)
        out = np.ones_like(delta)
        ok = np.abs(s) > 1e-15
        out[ok] = (num[ok] / (M * s[ok])) ** 2
        return out

    p = 0.5 * (fejer(y / M - theta / np.pi) + fejer(y / M + theta / np.pi))
    return p / p.sum()


def amplitude_estimate(
    ancilla: AncillaState,
    epsilon: float,
    seed=0,
    shots: int = 32,
    m_max: int | None = None,
    method: str = "mle",
    bits: int | None = None,
    reference: float | None = None,
) -> EstimationResult:
    """Estimate <O> from emulated Grover measurement statistics.

    ``method="mle"`` runs ``shots`` measurements after each m of the
    exponential schedule 0, 1, 2, 4, ... closed by ``m_max`` (default of order
    1/epsilon) and maximises the likelihood.  ``method="canonical"`` emulates
    phase estimation with ``bits`` ancilla bits and reports the median of
    ``shots`` runs.  Queries count 2m + 1 oracle calls per measurement.
    """
    if not 1e-5 < epsilon < 0.5:
        raise EstimationError(f"epsilon must lie in (1e-5, 0.5), got {epsilon}")
    if shots < 1:
        raise EstimationError("shots must be positive")
    rng = np.random.default_rng(seed)
    width = ancilla.scale[1] - ancilla.scale[0]
    if method == "mle":
        m_max = default_max_iterations(epsilon) if m_max is None else int(m_max)
        sched = exponential_schedule(m_max)
        nshots = [shots] * len(sched)
        hits = _draw_hits(ancilla, sched, nshots, rng)
        theta = _mle_theta(sched, hits, nshots)
        err = _fisher_sigma_a(theta, sched, nshots) * width
        grover = sum(s * m for m, s in zip(sched, nshots))
        queries = sum(s * (2 * m + 1) for m, s in zip(sched, nshots))
        details = {"schedule": sched, "hits": hits.tolist(), "shots": nshots}
    elif method == "canonical":
        if bits is None:
            bits = 1
            while math.pi / 2 ** bits + (math.pi / 2 ** bits) ** 2 > epsilon:
                bits += 1
        M = 2 ** bits
        ys = rng.choice(M, size=shots, p=_phase_estimation_probs(ancilla.theta, M))
        ests = np.sin(np.pi * ys / M) ** 2
        a_hat = float(np.median(ests))
        theta = math.asin(math.sqrt(a_hat))
        err = (2 * math.pi * math.sqrt(a_hat * (1 - a_hat)) / M + (math.pi / M) ** 2) * width
        grover = shots * (M - 1)
        queries = shots * (2 * (M - 1) + 1)
        details = {"bits": bits, "outcomes": ys.tolist()}
    else:
        raise EstimationError(f"unknown amplitude-estimation method {method!r}")
    a_hat = math.sin(theta) ** 2
    est = float(ancilla.unscale(a_hat))
    achieved = None if reference is None else abs(est - reference)
    return EstimationResult(
        est, epsilon, float(err), int(queries), "amplitude_estimation",
        grover_steps=int(grover), kvn_invocations=KVN_CALLS_PER_GROVER_STEP * int(grover),
        achieved=achieved, details=details,
    )


# ---------------------------------------------------------------------------
# scaling study


@dataclass
class ScalingRow:
    epsilon: float
    mc_queries: float
    ae_queries: float
    mc_success: float
    ae_success: float
    ae_grover_steps: float
    ae_kvn_invocations: float


@dataclass
class ScalingStudy:
    rows: list[ScalingRow]
    mc_slope: float
    ae_slope: float
    mc_fit: tuple[float, float]
    ae_fit: tuple[float, float]
    repetitions: int
    mc_reference: float
    ae_reference: float

    def speedup_at(self, epsilon: float) -> float:
        """Ratio of the fitted MC and AE query curves at ``epsilon``."""
        le = math.log(epsilon)
        mc = self.mc_fit[0] * le + self.mc_fit[1]
        ae = self.ae_fit[0] * le + self.ae_fit[1]
        return float(math.exp(mc - ae))

    def table(self) -> list[dict]:
        return [dict(r.__dict__) for r in self.rows]


def _first_passing(ok: np.ndarray) -> int | None:
    """Cheapest rung meeting the success rate (None when no rung does)."""
    hit = np.flatnonzero(ok)
    return int(hit[0]) if len(hit) else None


def _fit(eps, q):
    good = np.isfinite(q)
    if good.sum() < 2:
        return float("nan"), (float("nan"), float("nan"))
    c = np.polyfit(np.log(np.asarray(eps)[good]), np.log(np.asarray(q)[good]), 1)
    return float(c[0]), (float(c[0]), float(c[1]))


def scaling_study(
    system: DynamicalSystem,
    obs: ObservableSpec,
    t: float,
    epsilons: Sequence[float],
    repetitions: int = 20,
    seed=0,
    *,
    sampler: GaussianSampler,
    psi_t: WaveFunction,
    dt: float = 1e-2,
    shots: int = 16,
    success: float = 0.9,
    ladder_ratio: float = 2 ** 0.25,
    oversample: float = 8.0,
) -> ScalingStudy:
    """Empirical queries needed to reach |error| <= eps in ``success`` of the runs.

    Monte Carlo errors are measured against a quadrature reference over the
    same RK4 flow; amplitude-estimation errors against the exact good
    amplitude of ``psi_t``.  Monte Carlo repetitions draw one long stream and
    read the K ladder off its prefixes; amplitude estimation runs one
    schedule per rung of a geometric ladder of largest Grover powers.
    """
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    if eps.size < 2 or eps[0] / eps[-1] < 100 * (1 - 1e-9):
        raise EstimationError("the epsilon list must span at least two decades")
    if repetitions < 2:
        raise EstimationError("need at least two repetitions")
    streams = np.random.SeedSequence(seed).spawn(2)
    mc_seeds = streams[0].spawn(repetitions)
    ae_seeds = streams[1].spawn(repetitions)

    # Monte Carlo: one long stream per repetition, errors on a geometric K ladder
    ref, var = reference_expectation(system, sampler, obs, t, dt)
    k_max = max(4, math.ceil(oversample * max(var, 1e-12) / eps[-1] ** 2))
    ladder = np.unique(np.ceil(2 * ladder_ratio ** np.arange(
        math.ceil(math.log(k_max / 2) / math.log(ladder_ratio)) + 1)).astype(np.int64))
    mc_err = np.empty((repetitions, ladder.size))
    for r in range(repetitions):
        vals = _mc_values(system, sampler, obs, t, int(ladder[-1]), np.random.default_rng(mc_seeds[r]), dt)
        means = np.cumsum(vals)[ladder - 1] / ladder
        mc_err[r] = np.abs(means - ref)

    # amplitude estimation: independent schedule passes on a geometric m_max ladder
    anc = build_ancilla_split(psi_t, obs)
    width = anc.scale[1] - anc.scale[0]
    m_top = 4 * default_max_iterations(eps[-1])
    caps = np.unique(np.floor(ladder_ratio ** np.arange(
        math.ceil(math.log(m_top) / math.log(ladder_ratio)) + 1)).astype(np.int64))
    caps = np.concatenate([[0], caps])
    scheds = [exponential_schedule(int(c)) for c in caps]
    cost = np.array([shots * sum(2 * m + 1 for m in sc) for sc in scheds])
    steps = np.array([shots * sum(sc) for sc in scheds])
    ae_err = np.empty((repetitions, len(caps)))
    for r in range(repetitions):
        rng = np.random.default_rng(ae_seeds[r])
        for k, sc in enumerate(scheds):
            nshots = [shots] * len(sc)
            th = _mle_theta(sc, _draw_hits(anc, sc, nshots, rng), nshots)
            ae_err[r, k] = abs(math.sin(th) ** 2 - anc.a) * width

    rows = []
    for e in eps:
        ok_mc = np.mean(mc_err <= e, axis=0) >= success
        ok_ae = np.mean(ae_err <= e, axis=0) >= success
        j = _first_passing(ok_mc)
        k = _first_passing(ok_ae)
        rows.append(ScalingRow(
            float(e),
            float(ladder[j]) if j is not None else float("nan"),
            float(cost[k]) if k is not None else float("nan"),
            float(np.mean(mc_err[:, j] <= e)) if j is not None else float("nan"),
            float(np.mean(ae_err[:, k] <= e)) if k is not None else float("nan"),
            float(steps[k]) if k is not None else float("nan"),
            float(KVN_CALLS_PER_GROVER_STEP * steps[k]) if k is not None else float("nan"),
        ))
    e_arr = np.array([r.epsilon for r in rows])
    mc_slope, mc_fit = _fit(e_arr, np.array([r.mc_queries for r in rows]))
    ae_slope, ae_fit = _fit(e_arr, np.array([r.ae_queries for r in rows]))
    return ScalingStudy(rows, mc_slope, ae_slope, mc_fit, ae_fit, repetitions, ref,
                        float(anc.unscale(anc.a)))

