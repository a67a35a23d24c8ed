"""Variational solver for coupled local-nonlocal p-Laplacian energies."""

from .analysis import (
    CoercivityEstimate,
    RateTable,
    SingularSystemError,
    assemble_p2_system,
    coercivity_constant,
    convergence_study,
    gradient_check,
    nullspace_check,
    p2_linear_oracle,
)
from .domain import (
    COLLAR,
    LOCAL,
    NONLOCAL,
    OUTSIDE,
    AssumptionReport,
    DeltaCover,
    GridSpec,
    Partition,
    RegionSpec,
    build_grid,
    check_assumptions,
    delta_cover,
)
from .kernel import (
    CollarMass,
    ComponentLabels,
    KernelProfile,
    NeighborTable,
    build_neighbors,
    collar_mass,
    kernel_components,
    validate_kernel,
)
from .model import (
    EnergyBreakdown,
    ModelConfig,
    SourceModel,
    affine_source,
    eval_energy,
    eval_gradient,
    eval_seminorm,
    monotone_power_source,
    strong_residual,
    validate_growth,
)
from .solver import (
    SolveOptions,
    SolveReport,
    UniquenessReport,
    lp_distance,
    minimize,
    uniqueness_probe,
)

__version__ = "0.1.0"
