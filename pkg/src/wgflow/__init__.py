"""Lagrangian particle solver for Wasserstein gradient flows with congestion
or linear diffusion, driven by semi-discrete optimal transport."""

from .errors import (
    CoincidentPoints,
    EmptyGrid,
    InfeasibleDomain,
    LeftDomain,
    NoConvergence,
    OutsideDomain,
    QuadratureNotConverged,
    SchemaError,
    SingularDenominator,
    UnreachableRegion,
    WgflowError,
)
from .geometry import (
    Arc,
    CellRegion,
    DomainGeometry,
    ParticleSet,
    Segment,
    bimodal_domain,
    build_power_diagram,
    cell_moments,
    clip_with_disk,
    disk_domain,
    gaussian_cell_integrals,
    radial_sector_domain,
    rectangle_domain,
    square_domain,
)
from .ot_solver import (
    DualState,
    MoreauYosidaResult,
    check_complementarity,
    dual_objective_crowd,
    dual_objective_entropy,
    moreau_yosida,
    newton_solve,
)
from .dynamics import (
    ExactDisk,
    ExactSector,
    FlowConfig,
    KernelSpec,
    Trajectory,
    euler_step,
    grid_initialization,
    lloyd_quantization,
    run_simulation,
    wasserstein_to_uniform,
)
from .potentials import GridField, PotentialSpec, eval_grad_V, fast_marching
from .oned import (
    Clusters1D,
    Particles1D,
    entropy_dual_1d,
    project_crowd_1d,
    verify_crowd_bound,
    verify_diffusion_bound,
)
from .validation import (
    ErrorReport,
    RadialSolution,
    distance_distribution_w2,
    error_table,
    heat_moment_check,
    timeout_map,
)

__version__ = "0.1.0"
