"""qval: numerical calculus of Q-valued (multi-valued) functions.

Core objects: Q-points with the optimal-matching metric, grid-sampled
Q-valued fields with sheet alignment and monodromy detection, exact
branched-cover ground truth, graph-current masses via the area formula,
a planar Dirichlet solver on glued sheet complexes, and numerical
verifications of the interior estimates (Caccioppoli, reverse Holder,
higher gradient integrability).
"""

__version__ = "0.1.0"

from .aq_space import (
    QPoint,
    DimensionMismatchError,
    OracleCapacityError,
    metric_G,
    metric_G_bruteforce,
    eta_mean,
    tau_translate,
)
from .qfield import (
    GridDomain,
    QGridField,
    SheetChart,
    Region,
    EnergyReport,
    sheet_align,
    dirichlet_energy,
    gradient_norm_field,
    lp_gradient_norm,
    holder_decay_fit,
    mean_deviation_split,
    detect_branch_points,
)
from .varieties import (
    BranchedCoverSpec,
    power_cover,
    two_sqrt_cover,
    sample_variety,
    branch_derivative,
    exact_vq_energy,
    product_extension,
)
from .currents import (
    graph_mass,
    conformality_defect,
    conformality_defect_field,
    area_energy_gap,
    mass_taylor_fit,
    mass_lower_bound_mu2,
    sample_mu2_cover,
)
from .minimizer import (
    MonodromyBoundary,
    SheetComplexSystem,
    boundary_from_cover,
    compare_fields,
    continue_fiber,
    local_cycles_from_cover,
    solve_planar,
    energy_gap_vs_variety,
)
from .estimates import (
    CutoffSpec,
    ProbeResult,
    caccioppoli_ratio,
    caccioppoli_ball_ratio,
    reverse_holder_ratio,
    integrability_probe,
)
