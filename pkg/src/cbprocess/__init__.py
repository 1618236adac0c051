"""Numerical kernel for multi-dimensional continuous-state branching processes."""

from .cumulant import (
    ConservativenessVerdict,
    CumulantFlow,
    MinimalSolution,
    SurvivalMass,
    conservativeness_verdict,
    grey_diagnostics,
    integral_form_residual,
    laplace_transform,
    minimal_solution_at_zero,
    nonuniqueness_residual,
    semigroup_defect,
    solve_cumulant,
    survival_mass,
)
from .errors import (
    CBError,
    ConfigError,
    DomainError,
    DomainEscapeError,
    InvalidMechanismError,
    OscillatoryWarning,
    QuadratureError,
    StepSizeUnderflowError,
)
from .levy import AxisStable, FiniteAtoms, TailServices, ZeroMeasure, levy_tail_services
from .mechanism import (
    BranchingMechanism,
    Row,
    ValidationReport,
    Violation,
    convert_a_to_alpha,
    eval_a_form,
    eval_mechanism,
    left_half_point,
    stable_constant,
    stable_mechanism,
    validate_mechanism,
)
from .simulator import (
    Ensemble,
    SamplePath,
    SimConfig,
    fold_ensemble,
    simulate_ensemble,
    simulate_path,
)
from .verify import (
    TestFunction,
    VerificationReport,
    branching_property_check,
    dynkin_residual,
    generator_apply,
    generator_report,
    martingale_residual,
    monte_carlo_laplace,
    semigroup_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
