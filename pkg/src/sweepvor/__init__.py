"""Transport sweeps on Voronoi meshes.

Clipped Voronoi tessellations over convex polygonal domains, projection-sort
sweep scheduling that is cycle-free in every direction, upwind DG assembly
with forward-substitution sweeps, and swept source iteration for the
mono-energetic discrete-ordinates Boltzmann transport equation.
"""

from .bte import (
    AngularFlux,
    IterationLog,
    OrdinateSet,
    ScatteringKernel,
    bochner_error,
    coercivity_check,
    mms_exact,
    mms_inflow,
    mms_source,
    ordinates,
    reduction_factor,
    scalar_flux,
    scattering_ratio,
    scattering_source,
    source_iteration,
)
from .dg import (
    BlockOperator,
    CoefficientField,
    DGSpace,
    SolutionField,
    apply_permutation,
    assemble_direction,
    assemble_rhs,
    classify_facets,
    direct_solve,
    energy_norm_error,
    evaluate,
    mass_matrix,
    sweep_solve,
)
from .geometry import (
    Cell,
    DomainPolygon,
    Facet,
    VoronoiMesh,
    build_voronoi,
    lloyd_relax,
    random_seeds,
    unit_square,
)
from .meshio import read_mesh, write_mesh
from .quadrature import cell_quadrature, facet_quadrature
from .scheduler import (
    CycleWitness,
    DirectedDual,
    Schedule,
    directed_dual,
    kahn_toposort,
    schedule_centers,
    subdomain_schedule,
    verify_schedule,
)

__version__ = "0.1.0"
