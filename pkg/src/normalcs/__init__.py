"""Image recovery from partial Fourier measurements guided by level-set normals.

The package reconstructs images from undersampled radial Fourier data by
alternating two convex problems: estimate and regularize the unit normals
of the image level sets, then reconstruct an image whose gradients align
with those normals under a total-variation prior.  Local (pixel grid) and
non-local (patch graph) variants are provided, together with plain and
edge-weighted TV baselines and a reproducibility harness.
"""

from .exceptions import ConfigError, SolverError
from .grid import (
    grad_forward,
    div_backward,
    pixel_norm,
    tv,
    forward_fft,
    inverse_fft,
    laplacian_symbol,
    snr_db,
)
from .sensing import (
    SamplingPlan,
    Measurements,
    radial_mask,
    full_mask,
    lines_for_ratio,
    measure,
    adjoint,
    add_noise,
)
from .edges import mad_sigma, tukey_g, edge_weights
from .local_solver import (
    LocalSolverConfig,
    AdmmState,
    shrink_isotropic,
    solve_u_fourier,
    reconstruct_local,
    edge_guided_outer,
)
from .normals import (
    NormalSolverConfig,
    NormalGuidedResult,
    estimate_normals,
    project_ball,
    regularize_normals,
    normal_guided_cs,
)
from .graph import (
    PatchGraph,
    build_graph,
    local_stencil_graph,
    nl_gradient,
    nl_divergence,
    nl_node_norm,
    nl_shrink,
    nl_tv,
)
from .nl_solver import (
    NlSolverConfig,
    cg_solve,
    nl_reconstruct,
    estimate_nl_divergence,
    regularize_divergence,
    nl_normal_guided_cs,
)
from .phantom import shepp_logan

__version__ = "0.1.0"
