"""Non-local reconstruction solvers on patch graphs.

Mirrors the local solver family with the graph operators: reconstruction
minimizes || |Du|_G ||_1 + gamma <v, u> + alpha/2 ||Au - f||^2, splitting
d = Du (shrinkage step) and s = u (Fourier-diagonal data step) so that
only the graph coupling needs an iterative solve, a conjugate gradient
on the well-conditioned K = r_u I + r_d D^T D, warm-started from the
previous sweep.  The guiding divergence field is estimated from the
node-normalized non-local gradient and denoised by a scalar ROF model,
either on the grid (default) or on the graph.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import spsolve_triangular

from .exceptions import SolverError
from .grid import snr_db
from .edges import mad_sigma, tukey_g
from .local_solver import LocalSolverConfig, reconstruct_local
from .graph import build_graph, nl_gradient, nl_node_norm, nl_divergence, nl_shrink
from . import sensing

__all__ = [
    "NlSolverConfig",
    "NlAdmmState",
    "NlGuidedResult",
    "cg_solve",
    "nl_reconstruct",
    "node_normalized_gradient",
    "estimate_nl_divergence",
    "regularize_divergence",
    "nl_normal_guided_cs",
]


@dataclass(frozen=True)
class NlSolverConfig:
    """Scalar knobs of the graph solvers.

    alpha and gamma keep their local meaning; mu weighs the divergence
    denoiser; r_d and r_u are the split penalties for d = Du and s = u.
    cg_tol is a relative-residual target and preconditioner is either
    "jacobi" or "incomplete_cholesky".
    """

    alpha: float
    gamma: float = 0.0
    mu: float = 1.0
    r_d: float = 10.0
    r_u: float = 10.0
    cg_tol: float = 1e-8
    cg_max: int = 500
    preconditioner: str = "jacobi"
    tol: float = 1e-4
    max_inner: int = 100

    def __post_init__(self):
        if not (self.alpha > 0 and self.mu > 0 and self.r_d > 0 and self.r_u > 0):
            raise ValueError("alpha, mu, r_d and r_u must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not (self.cg_tol > 0 and self.tol > 0):
            raise ValueError("tolerances must be positive")
        if self.cg_max < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.preconditioner not in ("jacobi", "incomplete_cholesky"):
            raise ValueError("preconditioner must be jacobi or incomplete_cholesky")


@dataclass
class NlAdmmState:
    """Final iterate and diagnostics of a non-local solver run."""

    u: np.ndarray
    s: np.ndarray
    d: np.ndarray
    lam_u: np.ndarray
    lam_d: np.ndarray
    iterations_run: int
    final_rel_change: float
    cg_iterations: list = field(default_factory=list)


@dataclass
class NlGuidedResult:
    """Outcome of the non-local alternating reconstruction."""

    u: np.ndarray
    outer_iterations: int
    snr_trace: list = field(default_factory=list)
    node_norm_feasibility: list = field(default_factory=list)


def _ic0_factor(k_csr, shift):
    # incomplete Cholesky on the lower-triangular sparsity of K + shift*I
    lower = scipy.sparse.tril(k_csr, format="csr")
    n = lower.shape[0]
    indptr, indices, data = lower.indptr, lower.indices, lower.data.copy()
    rows = [
        dict(zip(indices[indptr[i] : indptr[i + 1]], range(indptr[i], indptr[i + 1])))
        for i in range(n)
    ]
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        if indices[stop - 1] != i:
            raise SolverError("matrix misses a diagonal entry at row %d" % i)
        row_i = rows[i]
        for pos in range(start, stop - 1):
            j = indices[pos]
            s = data[pos]
            row_j = rows[j]
            for jj, pos_j in row_j.items():
                if jj >= j:
                    break
                pos_i = row_i.get(jj)
                if pos_i is not None:
                    s -= data[pos_i] * data[pos_j]
            data[pos] = s / data[indptr[j + 1] - 1]
        diag = k_csr[i, i] + shift
        for pos in range(start, stop - 1):
            diag -= data[pos] * data[pos]
        if diag <= 0.0:
            return None
        data[stop - 1] = np.sqrt(diag)
    return scipy.sparse.csr_matrix((data, indices, indptr), shape=(n, n))


def _make_preconditioner(k_csr, kind):
    if kind == "jacobi":
        inv_diag = 1.0 / k_csr.diagonal()
        return lambda r: inv_diag * r
    mean_diag = float(k_csr.diagonal().mean())
    for shift in (0.0, 1e-3, 1e-2, 1e-1, 1.0):
        factor = _ic0_factor(k_csr, shift * mean_diag)
        if factor is not None:
            factor_t = factor.T.tocsr()
            return lambda r: spsolve_triangular(
                factor_t, spsolve_triangular(factor, r, lower=True), lower=False
            )
    raise SolverError("incomplete Cholesky broke down at every diagonal shift")


def cg_solve(k_matrix, b, x0, cfg, stats=None):
    """Preconditioned conjugate gradient for a sparse SPD system.

    Iterates until ||Kx - b|| <= cg_tol * ||b|| (the true residual is
    re-verified at candidate convergence) or cg_max is reached; b = 0
    short-circuits to the exact solution 0.  A non-positive curvature
    direction raises, naming the iteration.  Pass a dict as `stats` to
    receive the iteration count and final relative residual.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        if stats is not None:
            stats.update(iterations=0, rel_residual=0.0, converged=True)
        return np.zeros_like(b)
    apply_m = _make_preconditioner(k_matrix, cfg.preconditioner)
    x = np.array(x0, dtype=np.float64).ravel()
    r = b - k_matrix @ x
    if np.linalg.norm(r) <= cfg.cg_tol * b_norm:
        # warm start already solves the system; entering the loop would
        # divide by a zero curvature
        if stats is not None:
            stats.update(
                iterations=0,
                rel_residual=float(np.linalg.norm(r) / b_norm),
                converged=True,
            )
        return x
    z = apply_m(r)
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    rel = np.linalg.norm(r) / b_norm
    for it in range(1, cfg.cg_max + 1):
        kp = k_matrix @ p
        curvature = float(p @ kp)
        if curvature <= 0.0:
            raise SolverError(
                "conjugate gradient breakdown (curvature %.3e) at iteration %d" % (curvature, it)
            )
        step = rz / curvature
        x += step * p
        r -= step * kp
        iterations = it
        if np.linalg.norm(r) <= cfg.cg_tol * b_norm:
            true_r = b - k_matrix @ x
            rel = np.linalg.norm(true_r) / b_norm
            if rel <= cfg.cg_tol:
                break
            r = true_r
        z = apply_m(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        rel = np.linalg.norm(r) / b_norm
    if stats is not None:
        stats.update(iterations=iterations, rel_residual=float(rel), converged=rel <= cfg.cg_tol)
    return x


def _graph_quadratic(graph, r_u, r_d):
    d_op = graph.operator
    k = (r_d * (d_op.T @ d_op)).tocsr()
    k = k + r_u * scipy.sparse.identity(graph.node_count, format="csr")
    k.sum_duplicates()
    return k.tocsr()


def nl_reconstruct(f, v, graph, cfg, u_init):
    """Graph-TV reconstruction from partial Fourier data.

    Alternates the conjugate-gradient u-step (graph coupling), the
    Fourier-diagonal s-step (data coupling), and the node-wise shrinkage
    d-step, with multiplier ascent, until u's relative change drops
    below tol.  v is the guiding divergence image (None for plain
    non-local TV).
    """
    height, width = f.plan.shape
    if graph.width != width or graph.height != height:
        raise ValueError("graph grid does not match the sampling plan")
    u = np.array(u_init, dtype=np.float64).ravel()
    s = u.copy().reshape(height, width)
    d = graph.operator @ u
    lam_d = np.zeros_like(d)
    lam_u = np.zeros(u.size)

    k_matrix = _graph_quadratic(graph, cfg.r_u, cfg.r_d)
    c_s = cfg.alpha * f.plan.mask + cfg.r_u
    f_spectrum = np.zeros(f.plan.shape, dtype=np.complex128)
    f_spectrum[f.plan.mask] = f.values
    alpha_f_spectrum = cfg.alpha * f_spectrum
    gamma_v = None
    if v is not None and cfg.gamma != 0.0:
        gamma_v = cfg.gamma * np.asarray(v, dtype=np.float64).ravel()

    rel_change = np.inf
    sweeps = 0
    cg_counts = []
    for sweep in range(1, cfg.max_inner + 1):
        rhs = -lam_u + cfg.r_u * s.ravel() + graph.operator_t @ (lam_d + cfg.r_d * d)
        if gamma_v is not None:
            rhs = rhs - gamma_v
        stats = {}
        u_new = cg_solve(k_matrix, rhs, u, cfg, stats=stats)
        cg_counts.append(stats["iterations"])
        if not np.all(np.isfinite(u_new)):
            raise SolverError("u-step (conjugate gradient) produced non-finite values at sweep %d" % sweep)

        s_rhs = lam_u + cfg.r_u * u_new
        s_spec = (alpha_f_spectrum + np.fft.fft2(s_rhs.reshape(height, width), norm="ortho")) / c_s
        s = np.fft.ifft2(s_spec, norm="ortho").real
        if not np.all(np.isfinite(s)):
            raise SolverError("s-step (Fourier solve) produced non-finite values at sweep %d" % sweep)

        du = graph.operator @ u_new
        d = nl_shrink(du - lam_d / cfg.r_d, 1.0 / cfg.r_d, graph)
        if not np.all(np.isfinite(d)):
            raise SolverError("d-step (graph shrinkage) produced non-finite values at sweep %d" % sweep)

        lam_d = lam_d + cfg.r_d * (d - du)
        lam_u = lam_u + cfg.r_u * (u_new - s.ravel())
        if not (np.all(np.isfinite(lam_d)) and np.all(np.isfinite(lam_u))):
            raise SolverError("multiplier update produced non-finite values at sweep %d" % sweep)

        rel_change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        sweeps = sweep
        # the split starts consistent with u_init (s = u, d = Du,
        # multipliers zero), so the first u-step can reproduce u_init
        # exactly; test the stop only once the multipliers have moved
        if sweep > 1 and rel_change < cfg.tol:
            break
    return NlAdmmState(
        u=u.reshape(height, width),
        s=s,
        d=d,
        lam_u=lam_u,
        lam_d=lam_d,
        iterations_run=sweeps,
        final_rel_change=float(rel_change),
        cg_iterations=cg_counts,
    )


def node_normalized_gradient(u, graph, floor):
    """Unit non-local normals: each node's edge bundle scaled to norm <= 1."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    d = nl_gradient(u, graph)
    norms = nl_node_norm(d, graph).ravel()
    return d / np.repeat(np.maximum(norms, floor), graph.degrees)


def estimate_nl_divergence(u_prev, graph, floor):
    """Rough divergence of the non-local normals of the current iterate.

    The non-local gradient is normalized node-wise into unit normals,
    its divergence taken, and the result attenuated by (1 - g) with g
    the edge weight of the node-norm image: flat noisy regions (norms
    far below the MAD scale) are halved while genuine edges pass
    unchanged.
    """
    norms_img = nl_node_norm(nl_gradient(u_prev, graph), graph)
    normals = node_normalized_gradient(u_prev, graph, floor)
    divergence = nl_divergence(normals, graph)
    g = tukey_g(norms_img, mad_sigma(norms_img))
    return (1.0 - g) * divergence


def regularize_divergence(v_hat, mu, mode="local_rof", graph=None, cfg=None):
    """Scalar ROF denoising of the estimated divergence field.

    mode "local_rof" minimizes J(v) + mu/2 ||v - v_hat||^2 with the
    grid TV through the local solver under a full sampling plan (the
    full-mask measurement operator is unitary, so the data term is
    exactly the fidelity above).  mode "nl_rof" does the same with the
    graph TV via conjugate-gradient v-steps and node shrinkage.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if mode == "local_rof":
        height, width = v_hat.shape
        plan = sensing.full_mask(width, height)
        inner = LocalSolverConfig(
            alpha=mu,
            gamma=0.0,
            r=cfg.r_d if cfg is not None else 10.0,
            tol=cfg.tol if cfg is not None else 1e-4,
            max_inner=cfg.max_inner if cfg is not None else 100,
        )
        return reconstruct_local(sensing.measure(v_hat, plan), None, None, inner, v_hat).u
    if mode != "nl_rof":
        raise ValueError("mode must be local_rof or nl_rof")
    if graph is None:
        raise ValueError("nl_rof mode needs the graph")
    solver = cfg if cfg is not None else NlSolverConfig(alpha=1.0, mu=mu)
    v = v_hat.copy().ravel()
    d = graph.operator @ v
    lam_d = np.zeros_like(d)
    k_matrix = _graph_quadratic(graph, mu, solver.r_d)
    rel_change = np.inf
    for sweep in range(1, solver.max_inner + 1):
        rhs = mu * v_hat.ravel() + graph.operator_t @ (lam_d + solver.r_d * d)
        v_new = cg_solve(k_matrix, rhs, v, solver)
        if not np.all(np.isfinite(v_new)):
            raise SolverError("v-step produced non-finite values at sweep %d" % sweep)
        dv = graph.operator @ v_new
        d = nl_shrink(dv - lam_d / solver.r_d, 1.0 / solver.r_d, graph)
        lam_d = lam_d + solver.r_d * (d - dv)
        rel_change = np.linalg.norm(v_new - v) / max(np.linalg.norm(v_new), 1e-300)
        v = v_new
        # same consistent-start guard as nl_reconstruct: sweep 1 returns
        # v_hat exactly
        if sweep > 1 and rel_change < solver.tol:
            break
    return v.reshape(v_hat.shape)


def nl_normal_guided_cs(
    f,
    nl_cfg,
    local_cfg,
    outer_iters=3,
    graph_params=None,
    rof_mode="local_rof",
    ground_truth=None,
    u0=None,
    grad_floor=1e-8,
    outer_tol=1e-3,
):
    """Alternate graph construction, divergence estimation, and reconstruction.

    Starts from the local TV solution (or a supplied u0); each outer
    iteration rebuilds the patch graph from the current iterate, and
    with gamma > 0 estimates and denoises the divergence of the
    non-local normals before reconstructing.  gamma = 0 keeps the loop
    but drops the divergence stages, which is iterated non-local TV.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    graph_params = dict(graph_params or {})
    if u0 is None:
        u = reconstruct_local(f, None, None, local_cfg, sensing.adjoint(f)).u
    else:
        u = np.array(u0, dtype=np.float64)
    trace = [] if ground_truth is None else [snr_db(ground_truth, u)]
    result = NlGuidedResult(u=u, outer_iterations=0, snr_trace=trace)

    for k in range(1, outer_iters + 1):
        graph = build_graph(u, **graph_params)
        v = None
        if nl_cfg.gamma != 0.0:
            floor = grad_floor * float(np.ptp(u)) + 1e-30
            normals = node_normalized_gradient(u, graph, floor)
            result.node_norm_feasibility.append(float(nl_node_norm(normals, graph).max()))
            v_hat = estimate_nl_divergence(u, graph, floor)
            v = regularize_divergence(v_hat, nl_cfg.mu, rof_mode, graph, nl_cfg)
        u_new = nl_reconstruct(f, v, graph, nl_cfg, u).u
        rel = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        result.u = u
        result.outer_iterations = k
        if ground_truth is not None:
            result.snr_trace.append(snr_db(ground_truth, u))
        if rel < outer_tol:
            break
    return result
