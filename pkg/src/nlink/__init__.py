"""Planar N-link elastohydrodynamic filament model.

Rigid links joined by torsional springs, with local resistive-force drag.
The package assembles and reduces the link equations, integrates them in
time, recovers internal forces and moments, audits energy dissipation and
runs refinement studies against a fine reference discretisation.
"""

from nlink.model import (
    BoundaryCondition,
    Configuration,
    InternalLoads,
    PhysParams,
    drag_matrix,
    elastic_energy,
    elastic_energy_gradient,
    midpoints,
    vertices,
)
from nlink.assembly import (
    KinematicMatrix,
    MobilityMatrix,
    ReducedSystem,
    SingularSystem,
    assemble_G,
    assemble_blocks,
    full_system_solve,
    mobility,
    reduce,
)
from nlink.dynamics import (
    IntegratorSpec,
    StepDiagnostics,
    StepSizeUnderflow,
    Trajectory,
    audit_bounds,
    simulate,
    solve_velocity,
    step,
)
from nlink.analysis import (
    ConvergenceReport,
    InsufficientSampling,
    Interpolant,
    build_interpolant,
    init_from_curve,
    qt_norm,
    self_convergence,
    torque_term_magnitude,
    weak_form_residual,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "Configuration",
    "ConvergenceReport",
    "InsufficientSampling",
    "IntegratorSpec",
    "InternalLoads",
    "Interpolant",
    "KinematicMatrix",
    "MobilityMatrix",
    "PhysParams",
    "ReducedSystem",
    "SingularSystem",
    "StepDiagnostics",
    "StepSizeUnderflow",
    "Trajectory",
    "assemble_G",
    "assemble_blocks",
    "audit_bounds",
    "build_interpolant",
    "drag_matrix",
    "elastic_energy",
    "elastic_energy_gradient",
    "full_system_solve",
    "init_from_curve",
    "midpoints",
    "mobility",
    "qt_norm",
    "reduce",
    "self_convergence",
    "simulate",
    "solve_velocity",
    "step",
    "torque_term_magnitude",
    "vertices",
    "weak_form_residual",
]
