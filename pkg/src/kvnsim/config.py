"""Scenario files: JSON parsing, strict validation and resolution.

A scenario is validated in two passes.  The pydantic models reject unknown
keys and malformed values; :func:`resolve` then builds the grid, the system
and every expression so that cross-section mistakes (dimension mismatches,
a lagrangian phase on a non-canonical flow, gates naming unknown
observables) are reported before anything runs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import DynamicalSystem, PhaseGenerator, make_builtin_system
from .errors import ConfigError, KvnError
from .expressions import Expression
from .grid import AxisSpec, PhaseSpaceGrid, build_grid
from .operator import SCHEMES
from .propagation import MAX_EXACT_N
from .states import ObservableSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AxisConfig(_Strict):
    label: str
    levels: int
    extent: float
    x_min: float = 0.0

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if v < 4:
            raise ValueError("levels must be >= 4")
        return v

    @field_validator("extent")
    @classmethod
    def _extent(cls, v):
        if not v > 0:
            raise ValueError("extent must be positive")
        return v


class GridConfig(_Strict):
    axes: list[AxisConfig] = Field(min_length=1)
    hbar: float = 1.0

    @field_validator("hbar")
    @classmethod
    def _hbar(cls, v):
        if not v > 0:
            raise ValueError("hbar must be positive")
        return v

    @field_validator("axes")
    @classmethod
    def _labels(cls, v):
        labels = [a.label for a in v]
        if len(set(labels)) != len(labels):
            raise ValueError(f"axis labels must be unique, got {labels}")
        return v


class SystemConfig(_Strict):
    builtin: str | None = None
    params: dict[str, Any] = Field(default_factory=dict)
    velocity: list[str] | None = None
    divergence: str | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.builtin is None) == (self.velocity is None):
            raise ValueError("give exactly one of 'builtin' or 'velocity'")
        if self.velocity is not None and self.params:
            raise ValueError("'params' only applies to builtin systems")
        return self


class StateConfig(_Strict):
    kind: Literal["gaussian", "maxwellian"] = "gaussian"
    center: list[float] | None = None
    sigmas: list[float] | float | None = None
    momentum_tilt: list[float] | None = None
    mass: float = 1.0
    temperature: float = 1.0
    phase_mode: Literal["none", "conjugate"] = "none"
    k: list[float] | None = None

    @model_validator(mode="after")
    def _fields(self):
        if self.kind == "gaussian" and (self.center is None or self.sigmas is None):
            raise ValueError("gaussian states need 'center' and 'sigmas'")
        return self


class ObservableConfig(_Strict):
    name: str
    kind: Literal["moment", "indicator", "expression", "kvn_energy"]
    axis: int | str = 0
    power: int = 1
    region: list[list[float] | None] | None = None
    expr: str | None = None
    bounds: tuple[float, float] | None = None
    periodic: Literal["auto", "plain", "circular"] = "auto"


class PropagatorConfig(_Strict):
    method: Literal["cayley", "exact", "trotter"] = "cayley"
    solver: Literal["lu", "bicgstab"] = "lu"
    tol: float = 1e-12
    order: Literal[1, 2] = 2
    substep: Literal["exact", "cayley"] = "cayley"


class GateConfig(_Strict):
    kind: Literal["observable", "unitarity", "conservation", "oracle", "scaling_slopes", "hermiticity"]
    observable: str | None = None
    expected: str | None = None
    rel_tol: float | None = None
    tol: float | None = None
    quantity: str | None = None
    mc: tuple[float, float] | None = None
    ae: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _fields(self):
        need = {
            "observable": ("observable", "expected", "rel_tol"),
            "unitarity": ("tol",),
            "conservation": ("quantity", "tol"),
            "oracle": ("tol",),
            "scaling_slopes": ("mc", "ae"),
            "hermiticity": ("tol",),
        }[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.kind} gates need {missing}")
        return self


class SamplingConfig(_Strict):
    observable: str
    epsilons: list[float] = Field(min_length=2)
    repetitions: int = 20
    shots: int = 16
    success: float = 0.9
    mc_dt: float | None = None

    @field_validator("epsilons")
    @classmethod
    def _eps(cls, v):
        if any(not 1e-5 < e < 0.5 for e in v):
            raise ValueError("every epsilon must lie in (1e-5, 0.5)")
        if max(v) / min(v) < 100 * (1 - 1e-9):
            raise ValueError("epsilons must span at least two decades")
        return v

    @field_validator("repetitions")
    @classmethod
    def _reps(cls, v):
        if v < 2:
            raise ValueError("repetitions must be >= 2")
        return v


class CharacteristicsConfig(_Strict):
    x0: list[float]
    dt: float = 1e-3
    jacobian: Literal["auto", "config", "full"] = "auto"


class ResourcesConfig(_Strict):
    s: int | None = None
    ell: int | None = None
    particles: int = 1
    dims_per_particle: int | None = None
    epsilon: float | None = None
    r: int | None = None
    T_classical: float | None = None


class Scenario(_Strict):
    name: str
    grid: GridConfig
    system: SystemConfig
    w_mode: Literal["zero", "lagrangian", "custom"] = "zero"
    w_expression: str | None = None
    scheme: str = "central_fd2"
    propagator: PropagatorConfig = Field(default_factory=PropagatorConfig)
    dt: float | None = None
    courant: float = 0.5
    t_final: float
    snapshot_stride: int = 0
    write_density: bool = True
    initial_state: StateConfig
    observables: list[ObservableConfig] = Field(default_factory=list)
    gates: list[GateConfig] = Field(default_factory=list)
    sampling: SamplingConfig | None = None
    characteristics: CharacteristicsConfig | None = None
    resources: ResourcesConfig | None = None
    output_dir: str = "kvnsim_out"
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @field_validator("scheme")
    @classmethod
    def _scheme(cls, v):
        if v not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.dt is not None:
            if not self.dt > 0:
                raise ValueError("dt must be positive")
            if self.t_final < self.dt:
                raise ValueError("t_final must be >= dt")
        elif not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if self.snapshot_stride < 0:
            raise ValueError("snapshot_stride must be >= 0")
        if (self.w_mode == "custom") != (self.w_expression is not None):
            raise ValueError("w_expression is required exactly when w_mode is 'custom'")
        names = [o.name for o in self.observables]
        if len(set(names)) != len(names):
            raise ValueError(f"observable names must be unique, got {names}")
        for g in self.gates:
            if g.observable is not None and g.observable not in names:
                raise ValueError(f"gate refers to unknown observable {g.observable!r}")
            if g.kind == "scaling_slopes" and self.sampling is None:
                raise ValueError("scaling_slopes gates need a 'sampling' section")
        if self.sampling is not None and self.sampling.observable not in names:
            raise ValueError(f"sampling refers to unknown observable {self.sampling.observable!r}")
        return self


# ---------------------------------------------------------------------------
# parsing


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key (strict mode)"
        lines.append(f"{loc}: {msg.removeprefix('Value error, ')}")
    return "; ".join(lines)


def load_scenario_dict(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario: {_format_validation(exc)}") from None


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    scen = load_scenario_dict(data)
    resolve(scen)
    return scen


def parse_scenario(path) -> Scenario:
    """Read, validate and pre-compile a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_scenario_text(text, str(p))


def resolved_dict(scen: Scenario) -> dict:
    return scen.model_dump(mode="json")


def config_hash(scen: Scenario) -> str:
    """sha256 of the canonical resolved scenario (output directory excluded)."""
    d = resolved_dict(scen)
    d.pop("output_dir", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# resolution


@dataclass
class ResolvedScenario:
    scenario: Scenario
    grid: PhaseSpaceGrid
    system: DynamicalSystem
    w: PhaseGenerator
    observables: dict[str, ObservableSpec]
    expected: dict[int, Expression]


def _axis_index(grid: PhaseSpaceGrid, axis, where: str) -> int:
    if isinstance(axis, str):
        if axis not in grid.labels:
            raise ConfigError(f"{where}: unknown axis label {axis!r}")
        return grid.labels.index(axis)
    if not 0 <= axis < grid.ndim:
        raise ConfigError(f"{where}: axis {axis} out of range for a {grid.ndim}-D grid")
    return axis


def _build_observable(o: ObservableConfig, grid: PhaseSpaceGrid) -> ObservableSpec:
    where = f"observables.{o.name}"
    aliases = {lab: j for j, lab in enumerate(grid.labels) if lab not in ("t", "pi")}
    if o.kind == "moment":
        return ObservableSpec("moment", o.name, axis=_axis_index(grid, o.axis, where), power=o.power,
                              bounds=o.bounds, periodic=o.periodic)
    if o.kind == "indicator":
        if o.region is None or len(o.region) != grid.ndim:
            raise ConfigError(f"{where}: region needs one [lo, hi] or null per axis")
        region = []
        for r in o.region:
            if r is not None and (len(r) != 2 or not r[0] < r[1]):
                raise ConfigError(f"{where}: region bounds must be [lo, hi] with lo < hi")
            region.append(None if r is None else tuple(r))
        return ObservableSpec("indicator", o.name, region=tuple(region), bounds=o.bounds)
    if o.kind == "expression":
        if o.expr is None:
            raise ConfigError(f"{where}: expression observables need 'expr'")
        try:
            f = Expression(o.expr, grid.ndim, aliases)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return ObservableSpec("grid_function", o.name, func=f, bounds=o.bounds)
    return ObservableSpec("kvn_energy", o.name)


def _build_system(sc: SystemConfig, grid: PhaseSpaceGrid) -> DynamicalSystem:
    try:
        if sc.builtin is not None:
            params = dict(sc.params)
            if "A" in params:
                params["A"] = np.asarray(params["A"], dtype=float)
            system = make_builtin_system(sc.builtin, **params)
        else:
            aliases = {lab: j for j, lab in enumerate(grid.labels) if lab not in ("t", "pi")}
            system = make_builtin_system("expression", velocity=sc.velocity, divergence=sc.divergence,
                                         aliases=aliases)
    except KvnError as exc:
        raise ConfigError(f"system: {exc}") from None
    return system


def resolve(scen: Scenario) -> ResolvedScenario:
    """Build grid, system, phase generator and observables; cross-check sections."""
    try:
        grid = build_grid([AxisSpec(a.label, a.levels, a.extent, a.x_min) for a in scen.grid.axes], scen.grid.hbar)
    except KvnError as exc:
        raise ConfigError(f"grid: {exc}") from None
    system = _build_system(scen.system, grid)
    if system.dim != grid.ndim:
        raise ConfigError(f"dimension mismatch: grid has {grid.ndim} axes but system {system.name!r} "
                          f"has dimension {system.dim}")
    system = system.with_fd_scale(grid.extents)
    if scen.w_mode == "lagrangian":
        if system.canonical is None:
            raise ConfigError(f"w_mode: lagrangian phase generator needs a canonical system; "
                              f"{system.name!r} is not canonical")
        w = PhaseGenerator.lagrangian(system)
    elif scen.w_mode == "custom":
        aliases = {lab: j for j, lab in enumerate(grid.labels) if lab not in ("t", "pi")}
        try:
            w = PhaseGenerator.custom(scen.w_expression, grid.ndim, aliases)
        except KvnError as exc:
            raise ConfigError(f"w_expression: {exc}") from None
    else:
        w = PhaseGenerator.zero()

    st = scen.initial_state
    if st.kind == "gaussian":
        for key in ("center", "sigmas", "momentum_tilt"):
            val = getattr(st, key)
            if isinstance(val, list) and len(val) != grid.ndim:
                raise ConfigError(f"initial_state.{key}: expected {grid.ndim} entries, got {len(val)}")
    elif grid.ndim % 2:
        raise ConfigError("initial_state: maxwellian states need an even number of axes")

    prop = scen.propagator
    if prop.method == "exact" and grid.size > MAX_EXACT_N:
        raise ConfigError(f"propagator: exact propagation is limited to N <= {MAX_EXACT_N} (grid has {grid.size})")
    if prop.method == "trotter" and scen.scheme == "spectral":
        raise ConfigError("propagator: the spectral scheme cannot be Trotter-split")
    if prop.method in ("exact", "trotter") and (system.time_dependent or w.time_dependent):
        raise ConfigError(f"propagator: {prop.method} propagation needs a time-independent operator")

    observables = {o.name: _build_observable(o, grid) for o in scen.observables}
    expected = {}
    for i, g in enumerate(scen.gates):
        if g.expected is not None:
            try:
                expected[i] = Expression(g.expected, 0)
            except ConfigError as exc:
                raise ConfigError(f"gates[{i}].expected: {exc}") from None
        if g.kind == "conservation" and g.quantity not in ("norm", "kvn_energy", "classical_energy") \
                and not g.quantity.startswith("momentum_"):
            raise ConfigError(f"gates[{i}]: unknown conserved quantity {g.quantity!r}")
    if scen.sampling is not None:
        obs = observables[scen.sampling.observable]
        if obs.kind == "kvn_energy":
            raise ConfigError("sampling: kvn_energy cannot be sampled along trajectories")
        if obs.bounds is None:
            raise ConfigError(f"sampling: observable {obs.name!r} needs declared bounds")
        if st.kind != "gaussian":
            raise ConfigError("sampling: the Monte Carlo sampler needs a gaussian initial state")
    if scen.characteristics is not None and len(scen.characteristics.x0) != grid.ndim:
        raise ConfigError(f"characteristics.x0: expected {grid.ndim} entries")
    return ResolvedScenario(scen, grid, system, w, observables, expected)
