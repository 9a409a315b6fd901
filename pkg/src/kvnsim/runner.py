"""Scenario pipeline: grid -> system -> operator -> propagate -> observe -> sample.

Every emitted CSV starts with a ``#`` header line carrying the config hash,
and every number is printed with 17 significant digits, so a fixed config
and seed reproduce the data files byte for byte.  Wall times only appear in
``report.json``.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ResolvedScenario, Scenario, config_hash, resolve, resolved_dict
from .dynamics import GridDensity, integrate_characteristics, liouville_oracle
from .errors import ConfigError, KvnError
from .operator import build_kvn_operator, hermiticity_defect, resource_estimate, trotter_split
from .propagation import WaveFunction, default_dt, propagate_cayley, propagate_exact, propagate_trotter
from .sampling import GaussianSampler, scaling_study
from .semiclassical import accumulate_phase, hamilton_jacobi_residual
from .states import conservation_report, expectation, gaussian_state, maxwellian_state

log = logging.getLogger("kvnsim")

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3


def fmt(x) -> str:
    return format(float(x), ".17g")


class StageError(KvnError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class RunReport:
    scenario: dict
    config_hash: str
    version: str
    backend: str
    stages: dict = field(default_factory=dict)
    propagation: dict = field(default_factory=dict)
    unitarity: dict = field(default_factory=dict)
    conservation: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    gates: list = field(default_factory=list)
    manifest: list = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None
    exit_code: int = EXIT_OK

    @property
    def gates_passed(self) -> bool:
        return all(g["passed"] for g in self.gates)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


class _Outputs:
    """Writes files under the output directory and keeps the manifest."""

    def __init__(self, root: Path, chash: str, name: str):
        self.root = root
        self.hash = chash
        self.name = name
        self.manifest = []
        root.mkdir(parents=True, exist_ok=True)

    def header(self, kind: str, **extra) -> str:
        parts = [f"# kvnsim {kind}", f"scenario={self.name}"]
        parts += [f"{k}={v}" for k, v in extra.items()]
        parts.append(f"config_sha256={self.hash}")
        return " ".join(parts)

    def write(self, rel: str, text: str):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        path.write_bytes(data)
        self.manifest.append({
            "path": rel, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest(), "partial": False,
        })

    def table(self, rel: str, kind: str, columns, rows, **extra):
        lines = [self.header(kind, **extra), ",".join(columns)]
        lines += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
        self.write(rel, "\n".join(lines) + "\n")

    def snapshot(self, rel: str, wf: WaveFunction, density: bool):
        g = wf.grid
        head = (f"# N={g.size} dims={'x'.join(map(str, g.shape))} time={fmt(wf.t)} "
                f"config_sha256={self.hash}")
        if density:
            body = "\n".join(fmt(v) for v in np.abs(wf.psi) ** 2)
        else:
            body = "\n".join(f"{fmt(z.real)},{fmt(z.imag)}" for z in wf.psi)
        self.write(rel, head + "\n" + body + "\n")


class _Pipeline:
    def __init__(self, scen: Scenario, out_dir: Path):
        self.scen = scen
        self.chash = config_hash(scen)
        self.report = RunReport(resolved_dict(scen), self.chash, __version__, kernels.BACKEND)
        self.out = _Outputs(out_dir, self.chash, scen.name)

    @contextlib.contextmanager
    def stage(self, name: str):
        log.info("stage %s", name)
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # every failure is tagged with its stage
            raise StageError(name, exc) from exc
        finally:
            self.report.stages[name] = time.perf_counter() - start

    # -- stages ---------------------------------------------------------

    def setup(self):
        with self.stage("setup"):
            self.res: ResolvedScenario = resolve(self.scen)
            g, s = self.res.grid, self.res.system
            self.op = build_kvn_operator(g, s, self.res.w, self.scen.scheme, 0.0)
            st = self.scen.initial_state
            if st.kind == "gaussian":
                self.psi0 = gaussian_state(g, st.center, st.sigmas, st.momentum_tilt)
            else:
                self.psi0 = maxwellian_state(g, st.mass, st.temperature, st.phase_mode, st.k)
            T = self.scen.t_final
            if self.scen.dt is None:
                dt0 = default_dt(self.op, self.scen.courant)
                n = max(1, math.ceil(T / dt0 - 1e-9))
            else:
                r = T / self.scen.dt
                n = max(1, round(r) if abs(r - round(r)) <= 1e-9 * r else math.ceil(r))
            self.steps, self.dt = n, T / n
            self.report.propagation = {
                "method": self.scen.propagator.method, "scheme": self.scen.scheme, "dt": self.dt,
                "steps": n, "N": g.size, "sparsity": self.op.sparsity,
            }

    def propagate(self):
        sc = self.scen
        n = self.steps
        stride = sc.snapshot_stride
        diag_stride = max(1, math.ceil(n / 100))
        self.times = [self.psi0.t]
        self.norms = [self.psi0.norm()]
        self.obs_rows = [self._observe(self.psi0)]
        self.diag = [self.psi0]
        self.snap_steps = [0]
        self.snapshots = [self.psi0]
        self.final = self.psi0

        def record(k, wf):
            step = k + 1
            self.times.append(wf.t)
            self.norms.append(wf.norm())
            self.obs_rows.append(self._observe(wf))
            if step % diag_stride == 0 or step == n:
                self.diag.append(wf.copy())
            if (stride and step % stride == 0) or step == n:
                self.snap_steps.append(step)
                self.snapshots.append(wf.copy())
            self.final = wf

        with self.stage("propagate"):
            p = sc.propagator
            iters = 0
            if p.method == "cayley":
                _, rec = propagate_cayley(self.op, self.psi0, self.dt, n, p.solver, p.tol, callback=record)
                iters = rec.solver_iterations
            elif p.method == "trotter":
                propagate_trotter(trotter_split(self.op), self.psi0, self.dt, n, p.order, p.substep,
                                  callback=record)
            else:
                self.op.eigensystem()
                for k in range(n):
                    record(k, propagate_exact(self.op, self.psi0, (k + 1) * self.dt))
            self.report.propagation["solver_iterations"] = iters
        norms = np.array(self.norms)
        self.report.unitarity = {
            "max_norm_drift": float(np.max(np.abs(norms - norms[0]))),
            "max_step_drift": float(np.max(np.abs(np.diff(norms)))) if n else 0.0,
            "final_norm": float(norms[-1]),
        }

    def _observe(self, wf):
        out = []
        for spec in self.res.observables.values():
            if spec.kind == "kvn_energy":
                out.append(expectation(wf, spec, self.op.at_time(wf.t)))
            else:
                out.append(expectation(wf, spec))
        return out

    def conserve(self):
        with self.stage("observe"):
            self.cons = conservation_report(self.diag, self.res.system, self.op)
            self.report.conservation = self.cons.summary()

    def oracle(self):
        if not any(g.kind == "oracle" for g in self.scen.gates):
            return
        with self.stage("oracle"):
            f0 = GridDensity(self.res.grid, self.psi0.density, self.psi0.t)
            f = liouville_oracle(self.res.system, f0, self.scen.t_final, max(200, self.steps))
            rho = self.final.density
            self.oracle_density = f
            err = float(np.linalg.norm(rho - f.values) / np.linalg.norm(f.values))
            self.report.results["oracle_l2_error"] = err

    def characteristics(self):
        c = self.scen.characteristics
        if c is None:
            return
        with self.stage("characteristics"):
            g = self.res.grid
            bundle = integrate_characteristics(self.res.system, c.x0, 0.0, self.scen.t_final, c.dt,
                                               self.res.w, g.hbar)
            ledger = accumulate_phase(bundle, self.res.w, g.hbar, jacobian=c.jacobian)
            self.ledger = ledger
            out = {"final_state": bundle.states[-1].tolist(), "caustic": ledger.caustic,
                   "maslov_index": None if ledger.nu is None else int(ledger.nu[-1]),
                   "final_phase": float(ledger.phase[-1])}
            if self.scen.w_mode == "lagrangian":
                out["hamilton_jacobi_residual"] = hamilton_jacobi_residual(self.res.system, bundle, ledger)
            self.report.results["characteristics"] = out

    def sampling(self):
        sm = self.scen.sampling
        if sm is None:
            return
        with self.stage("sampling"):
            st = self.scen.initial_state
            sampler = GaussianSampler.isotropic(st.center, st.sigmas)
            study = scaling_study(
                self.res.system, self.res.observables[sm.observable], self.scen.t_final, sm.epsilons,
                sm.repetitions, self.scen.seed, sampler=sampler, psi_t=self.final,
                dt=sm.mc_dt or self.dt, shots=sm.shots, success=sm.success,
            )
            self.study = study
            self.report.results["scaling"] = {
                "mc_slope": study.mc_slope, "ae_slope": study.ae_slope,
                "mc_reference": study.mc_reference, "ae_reference": study.ae_reference,
                "speedup_at_min_epsilon": study.speedup_at(min(sm.epsilons)),
                "kvn_invocations_per_grover_step": 4,
            }

    def write(self):
        with self.stage("write"):
            self.write_available()

    def write_available(self):
        """Write every table whose data exists (all of them after a clean run)."""
        out = self.out
        if hasattr(self, "times") and len(self.times) == self.steps + 1:
            names = list(self.res.observables)
            if names:
                out.table("observables.csv", "observables", ["t"] + names,
                          [[t] + row for t, row in zip(self.times, self.obs_rows)])
            out.table("norm.csv", "norm", ["t", "norm"], zip(self.times, self.norms))
            for step, wf in zip(self.snap_steps, self.snapshots):
                out.snapshot(f"snapshots/psi_{step:06d}.csv", wf, density=False)
                if self.scen.write_density:
                    out.snapshot(f"snapshots/density_{step:06d}.csv", wf, density=True)
        if hasattr(self, "cons"):
            q = self.cons.quantities
            cols = list(q)
            out.table("conservation.csv", "conservation", ["t"] + cols,
                      [[t] + [q[c].values[i] for c in cols] for i, t in enumerate(self.cons.times)])
        if hasattr(self, "oracle_density"):
            f = self.oracle_density
            out.table("oracle_density.csv", "oracle_density", ["f"], ([v] for v in f.values.ravel()),
                      time=fmt(f.time))
        if hasattr(self, "ledger"):
            out.table("phase_ledger.csv", "phase_ledger", ["t", "W", "phi", "nu", "re_b", "im_b"],
                      self.ledger.rows())
        if hasattr(self, "study"):
            cols = ["epsilon", "mc_queries", "ae_queries", "mc_success", "ae_success",
                    "ae_grover_steps", "ae_kvn_invocations"]
            out.table("scaling.csv", "scaling", cols,
                      ([r[c] for c in cols] for r in self.study.table()),
                      mc_slope=fmt(self.study.mc_slope), ae_slope=fmt(self.study.ae_slope))

    # -- gates ------------------------------------------------------------

    def gates(self):
        rep = self.report
        names = list(self.res.observables)
        for i, g in enumerate(self.scen.gates):
            entry = {"index": i, "kind": g.kind}
            if g.kind == "observable":
                col = names.index(g.observable)
                f = self.res.expected[i]
                worst = 0.0
                for t, row in zip(self.times, self.obs_rows):
                    ref = float(f(np.zeros((0, 1)), t)[0])
                    err = abs(row[col] - ref) / abs(ref) if ref != 0 else abs(row[col])
                    worst = max(worst, err)
                entry.update(observable=g.observable, value=worst, tol=g.rel_tol, passed=worst <= g.rel_tol)
            elif g.kind == "unitarity":
                v = rep.unitarity["max_norm_drift"]
                entry.update(value=v, tol=g.tol, passed=v <= g.tol)
            elif g.kind == "conservation":
                qn = self.cons.quantities.get(g.quantity)
                if qn is None:
                    entry.update(quantity=g.quantity, value=None, tol=g.tol, passed=False,
                                 note="quantity not tracked for this system")
                else:
                    entry.update(quantity=g.quantity, value=qn.drift, tol=g.tol, passed=qn.drift <= g.tol)
            elif g.kind == "oracle":
                v = rep.results["oracle_l2_error"]
                entry.update(value=v, tol=g.tol, passed=v <= g.tol)
            elif g.kind == "scaling_slopes":
                s = rep.results["scaling"]
                ok_mc = abs(s["mc_slope"] - g.mc[0]) <= g.mc[1]
                ok_ae = abs(s["ae_slope"] - g.ae[0]) <= g.ae[1]
                entry.update(value={"mc": s["mc_slope"], "ae": s["ae_slope"]},
                             tol={"mc": list(g.mc), "ae": list(g.ae)}, passed=bool(ok_mc and ok_ae))
            elif g.kind == "hermiticity":
                v = hermiticity_defect(self.op)
                entry.update(value=v, tol=g.tol, passed=v <= g.tol)
            entry["passed"] = bool(entry["passed"])
            rep.gates.append(entry)
            log.info("gate %d %s: %s", i, g.kind, "pass" if entry["passed"] else "FAIL")


def run_scenario(scen: Scenario, out_dir=None, seed: int | None = None, sampling_only: bool = False) -> RunReport:
    """Execute ``scen`` and write its outputs plus ``report.json``.

    The report's ``exit_code`` is 0 when every declared gate passes, 1 when a
    gate fails and 3 when a stage raised (the failing stage is named and the
    files written so far are flagged as partial in the manifest).
    """
    if seed is not None:
        scen = scen.model_copy(update={"seed": int(seed)})
    if sampling_only and scen.sampling is None:
        raise ConfigError("this scenario has no 'sampling' section")
    root = Path(out_dir if out_dir is not None else scen.output_dir)
    pipe = _Pipeline(scen, root)
    rep = pipe.report
    try:
        pipe.setup()
        pipe.propagate()
        pipe.conserve()
        if not sampling_only:
            pipe.oracle()
            pipe.characteristics()
        pipe.sampling()
        pipe.write()
        if sampling_only:
            pipe.scen = scen.model_copy(update={"gates": [g for g in scen.gates if g.kind == "scaling_slopes"]})
        pipe.gates()
        rep.exit_code = EXIT_OK if rep.gates_passed else EXIT_GATE
    except StageError as exc:
        rep.failed_stage = exc.stage
        rep.error = str(exc)
        rep.exit_code = EXIT_STAGE
        if exc.stage != "write":
            try:
                pipe.write_available()
            except Exception as wexc:  # keep the original failure as the reported one
                log.error("could not write partial outputs: %s", wexc)
        for m in pipe.out.manifest:
            m["partial"] = True
        log.error("%s", exc)
    rep.manifest = pipe.out.manifest
    (root / "report.json").write_text(rep.to_json() + "\n")
    return rep


def resources_for(scen: Scenario) -> dict:
    """Resource estimate from the ``resources`` section, filled from the grid where omitted."""
    res = resolve(scen)
    rc = scen.resources
    g = res.grid
    kw = {} if rc is None else rc.model_dump()
    if kw.get("ell") is None:
        nq = g.n_qubits
        if nq is None or len(set(g.shape)) != 1:
            raise ConfigError("resources.ell is required unless all axes have the same power-of-two levels")
        kw["ell"] = nq // g.ndim
    if kw.get("s") is None:
        kw["s"] = build_kvn_operator(g, res.system, res.w, scen.scheme).sparsity
    particles = kw.pop("particles", 1) or 1
    d = kw.pop("dims_per_particle", None)
    if d is None:
        if g.ndim % (2 * particles):
            raise ConfigError("resources.dims_per_particle is required for this grid")
        d = g.ndim // (2 * particles)
    rep = resource_estimate(kw.pop("s"), kw.pop("ell"), particles, d, **kw)
    return rep.as_dict()
