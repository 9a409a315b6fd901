"""Koopman-von Neumann simulation of classical dynamics.

Classical flows x' = v(x, t) are embedded as unitary evolution of a
complex amplitude psi on a periodic phase-space grid, with |psi|^2 the
phase-space density.  The package provides the grid, the Hermitian KvN
operator, unitary propagators, semiclassical phase bookkeeping along
characteristics, observables and a sampling benchmark, plus the ``kvnsim``
command-line runner.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BlowUpError,
    CausticError,
    ConfigError,
    DynamicsError,
    EstimationError,
    GridError,
    KvnError,
    ObservableError,
    OperatorError,
    PropagationError,
)
from .grid import AxisSpec, PhaseSpaceGrid, build_grid  # noqa: E402
from .dynamics import (  # noqa: E402
    DynamicalSystem,
    PhaseGenerator,
    integrate_characteristics,
    lagrange_multiplier_flow,
    liouville_oracle,
    make_builtin_system,
)
from .operator import KvNOperator, build_kvn_operator, hermiticity_defect, resource_estimate  # noqa: E402
from .propagation import WaveFunction, propagate_cayley, propagate_exact, propagate_trotter  # noqa: E402
from .states import ObservableSpec, conservation_report, expectation, gaussian_state  # noqa: E402
