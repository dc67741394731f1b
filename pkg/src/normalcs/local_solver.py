"""Augmented-Lagrangian solver for the local TV reconstruction family.

Solves min_u J_w(u) + gamma <v, u> + alpha/2 ||A u - f||^2 where J_w is
(optionally weighted) isotropic TV on the periodic grid, v is a fixed
linear-term image (the divergence of a normal field, or zero), and
A = R F the partial Fourier map.  The gradient is split into an
auxiliary field d with multipliers, so each sweep alternates a Fourier-
diagonal quadratic solve in u, a pixel-wise shrinkage in d, and a
multiplier ascent step.  Plain TV-CS is the special case v = 0, w = 1;
the edge-guided variant re-estimates w between full solves.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import SolverError
from .grid import grad_forward, div_backward, pixel_norm, laplacian_symbol
from .edges import mad_sigma, tukey_g
from . import sensing

__all__ = [
    "LocalSolverConfig",
    "AdmmState",
    "shrink_isotropic",
    "solve_u_fourier",
    "reconstruct_local",
    "edge_guided_outer",
]


@dataclass(frozen=True)
class LocalSolverConfig:
    """Scalar knobs of the local solver.

    alpha weighs data fidelity, gamma the normal-matching linear term,
    r the split penalty.  epsilon_reg shifts the quadratic solve's
    diagonal (default 1e-3 * alpha, so conditioning tracks alpha across
    sweeps of that knob; the shift acts as a proximal term on u and
    cancels at any fixed point, so it damps the iteration without moving
    the solution).  tol stops a run once the relative change of u
    between sweeps falls below it.
    """

    alpha: float
    gamma: float = 0.0
    r: float = 10.0
    epsilon_reg: float | None = None
    tol: float = 1e-4
    max_inner: int = 300

    def __post_init__(self):
        if not (self.alpha > 0 and self.r > 0 and self.tol > 0):
            raise ValueError("alpha, r and tol must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.max_inner < 1:
            raise ValueError("max_inner must be >= 1")
        if self.epsilon_reg is not None and not self.epsilon_reg > 0:
            raise ValueError("epsilon_reg must be positive")

    @property
    def epsilon(self):
        return self.epsilon_reg if self.epsilon_reg is not None else 1e-3 * self.alpha


@dataclass
class AdmmState:
    """Final iterate of a solver run plus convergence diagnostics.

    trace holds one row per sweep: (relative change of u, constraint
    residual ||d - grad u|| / ||grad u||, augmented Lagrangian value);
    the objective column is only populated when tracing was requested,
    since it costs an extra transform per sweep.
    """

    u: np.ndarray
    d: np.ndarray
    lam: np.ndarray
    iterations_run: int
    final_rel_change: float
    trace: list = field(default_factory=list)

    @property
    def constraint_residual(self):
        num = np.linalg.norm(self.d - grad_forward(self.u))
        den = max(np.linalg.norm(grad_forward(self.u)), 1e-300)
        return num / den


def shrink_isotropic(z, threshold):
    """Pixel-wise isotropic soft shrinkage of a vector field.

    Solves min_d t(i)*|d(i)| + 1/2*|d(i) - z(i)|^2 per pixel: the vector
    keeps its direction and its length shrinks by t, clipping at zero.
    threshold may be a scalar or an (H, W) array of nonnegative values.
    Accepts any number of leading components (2 for image gradients,
    4 for stacked normal-field gradients); the norm couples them all.
    """
    mag = np.sqrt((z * z).sum(axis=0))
    factor = np.maximum(mag - threshold, 0.0)
    # avoid 0/0 at zero-length pixels; their factor is already 0
    factor /= np.maximum(mag, 1e-300)
    return factor * z


def _fourier_diagonal(plan, cfg):
    # C = alpha R^T R + r (Dx^T Dx + Dy^T Dy) + eps, all diagonal in Fourier.
    h, w = plan.shape
    return cfg.alpha * plan.mask + cfg.r * laplacian_symbol(h, w) + cfg.epsilon


def _rhs_spatial(f, d, lam, v, cfg):
    # b = alpha A^T f + Dx^T(r dx + lx) + Dy^T(r dy + ly) - gamma v,
    # and Dx^T/Dy^T of a field is the negated divergence split.
    b = cfg.alpha * sensing.adjoint(f) - div_backward(cfg.r * d + lam)
    if v is not None and cfg.gamma != 0.0:
        b = b - cfg.gamma * v
    return b


def solve_u_fourier(f, d, lam, v, cfg, u_prev):
    """Quadratic u-subproblem solved exactly by Fourier-diagonal division.

    Returns u with (alpha F^T R^T R F + r(Dx^T Dx + Dy^T Dy) + eps I) u
    = b + eps*u_prev.  All stencils are circulant on the periodic grid,
    so the system is a pointwise division in the Fourier basis and the
    residual is at rounding level.
    """
    C = _fourier_diagonal(f.plan, cfg)
    if np.any(C == 0.0):
        raise SolverError("u-step system has a zero diagonal entry")
    b = _rhs_spatial(f, d, lam, v, cfg) + cfg.epsilon * u_prev
    return np.fft.ifft2(np.fft.fft2(b, norm="ortho") / C, norm="ortho").real


def _check_finite(arr, stage, sweep):
    if not np.all(np.isfinite(arr)):
        raise SolverError("%s produced non-finite values at sweep %d" % (stage, sweep))


def _augmented_lagrangian(u, d, lam, f, v, weights, cfg):
    mag = pixel_norm(d)
    j = float((weights * mag).sum()) if weights is not None else float(mag.sum())
    residual = sensing.measure(u, f.plan).values - f.values
    value = j + 0.5 * cfg.alpha * float(np.vdot(residual, residual).real)
    if v is not None and cfg.gamma != 0.0:
        value += cfg.gamma * float((v * u).sum())
    gap = d - grad_forward(u)
    value += float((lam * gap).sum()) + 0.5 * cfg.r * float((gap * gap).sum())
    return value


def reconstruct_local(f, v, weights, cfg, u_init, trace=False):
    """Run the split augmented-Lagrangian iteration to convergence.

    Parameters
    ----------
    f : Measurements
    v : ndarray or None
        Linear-term image (divergence of a normal field); None means zero.
    weights : ndarray or None
        Per-pixel TV weights in [0, 1]; None means unweighted.
    cfg : LocalSolverConfig
    u_init : ndarray
        Starting image, typically the back-projection adjoint(f) or the
        previous outer iterate.
    trace : bool
        Record (rel_change, constraint_residual, objective) per sweep.

    Returns
    -------
    AdmmState
    """
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.min() < 0.0 or weights.max() > 1.0:
            raise ValueError("weights must lie in [0, 1]")
    u = np.array(u_init, dtype=np.float64)
    if u.shape != f.plan.shape:
        raise ValueError("u_init shape does not match the sampling plan")

    C = _fourier_diagonal(f.plan, cfg)
    if np.any(C == 0.0):
        raise SolverError("u-step system has a zero diagonal entry")
    alpha_atf = cfg.alpha * sensing.adjoint(f)
    threshold = 1.0 / cfg.r if weights is None else weights / cfg.r

    d = grad_forward(u)
    lam = np.zeros_like(d)

    rel_change = np.inf
    sweeps = 0
    trace_rows = []
    for sweep in range(1, cfg.max_inner + 1):
        b = alpha_atf - div_backward(cfg.r * d + lam)
        if v is not None and cfg.gamma != 0.0:
            b = b - cfg.gamma * v
        b += cfg.epsilon * u
        u_new = np.fft.ifft2(np.fft.fft2(b, norm="ortho") / C, norm="ortho").real
        _check_finite(u_new, "u-step", sweep)

        gu = grad_forward(u_new)
        d = shrink_isotropic(gu - lam / cfg.r, threshold)
        _check_finite(d, "d-step (shrinkage)", sweep)

        lam = lam + cfg.r * (d - gu)
        _check_finite(lam, "multiplier update", sweep)

        rel_change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        sweeps = sweep
        if trace:
            resid = np.linalg.norm(d - gu) / max(np.linalg.norm(gu), 1e-300)
            trace_rows.append(
                (rel_change, resid, _augmented_lagrangian(u, d, lam, f, v, weights, cfg))
            )
        # d and lam start consistent with u (d = grad u, lam = 0), which
        # makes the first u-step a no-op whenever u_init is already data
        # consistent (e.g. the back-projection); test the stop only once
        # the multipliers have moved.
        if sweep > 1 and rel_change < cfg.tol:
            break
    return AdmmState(
        u=u,
        d=d,
        lam=lam,
        iterations_run=sweeps,
        final_rel_change=float(rel_change),
        trace=trace_rows,
    )


def edge_guided_outer(f, cfg, outer_iters, u_init=None):
    """Re-weighted TV loop: alternate full solves with weight re-estimation.

    The first pass runs with unit weights (the plain TV-CS solution);
    each subsequent pass shrinks less where the previous iterate had
    strong gradients, via w = g(|grad u|) with a MAD-estimated scale.
    Returns the final image.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    u = sensing.adjoint(f) if u_init is None else np.asarray(u_init, dtype=np.float64)
    weights = None
    for _ in range(outer_iters):
        state = reconstruct_local(f, None, weights, cfg, u)
        u = state.u
        mag = pixel_norm(grad_forward(u))
        # unit-max so flat regions keep plain-TV smoothing strength
        weights = tukey_g(mag, mad_sigma(mag), max_one=True)
    return u
