"""qimlab: a finite-dimensional laboratory for Gibbs-state perturbation
geometry — interpolating norms, chart neighbourhoods, simplex-ordered
correlation functions, and free-energy analyticity checks."""

__version__ = "0.1.0"

from .epsnorms import (
    EpsNormReport,
    EquivalenceConstants,
    comparability_check,
    eps_norm,
    equivalence_constants,
    form_bound_surrogate,
    monotonicity_scan,
    omega_norm,
)
from .errors import (
    BetaOverflowError,
    ConfigError,
    DomainError,
    HoodViolationError,
    InputError,
    PreconditionError,
    ResourceLimitError,
)
from .gibbs import (
    GibbsState,
    beta_update,
    center,
    free_energy,
    in_hood,
    make_state,
    perturb,
    reg_mean,
)
from .kubo import (
    BoundLedger,
    KuboResult,
    delta_ladder,
    divdiff_exp,
    estimate_chain,
    frechet_check,
    free_energy_derivative,
    kubo_n_point,
    kubo_oracle,
    kubo_quadrature,
    taylor_probe,
)
from .manifold import (
    ChartPoint,
    chart_transition,
    minus_mixture,
    plus_mixture,
    route_independence,
    to_chart,
    transport,
)
from .speccalc import (
    HermitianOperator,
    SpectralDecomposition,
    apply_function,
    decompose,
    norm,
)
from .harness import Instance, Report, RunConfig, emit_report, gen_ensemble, run_suite
