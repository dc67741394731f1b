"""Patch-similarity graphs and non-local difference operators.

A graph connects each pixel to the pixels whose surrounding patches look
alike; edge weights w(i,j) = exp(-||P(i) - P(j)||^2 / (2 h^2)) grade the
similarity.  The non-local gradient stacks one directed derivative
(u(j) - u(i)) sqrt(w) per edge, the divergence is its negative adjoint,
and per-node norms of edge bundles give a TV functional on the graph.
With the one-sided unit-weight stencil graph these reduce exactly to the
grid operators, which anchors the non-local solvers to the local ones.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse
from scipy.ndimage import uniform_filter

__all__ = [
    "PatchGraph",
    "build_graph",
    "local_stencil_graph",
    "validate_symmetry",
    "nl_gradient",
    "nl_divergence",
    "nl_node_norm",
    "nl_shrink",
    "nl_tv",
]

FORCED_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class PatchGraph:
    """Immutable directed edge structure in CSR layout over pixel nodes.

    Node i's outgoing edges occupy slots offsets[i]:offsets[i+1] of
    `neighbors` and `weights`, sorted by neighbor index.  Graphs built
    by build_graph store both directions of every edge with equal
    weights; local_stencil_graph deliberately stores only the one-sided
    right/down edges so the non-local TV collapses to the grid TV.
    """

    width: int
    height: int
    offsets: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = self.width * self.height
        offsets = np.ascontiguousarray(np.asarray(self.offsets, dtype=np.int64))
        neighbors = np.ascontiguousarray(np.asarray(self.neighbors, dtype=np.int64))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if offsets.shape != (n + 1,) or offsets[0] != 0 or offsets[-1] != neighbors.size:
            raise ValueError("offsets must be a cumulative degree array over all nodes")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if weights.shape != neighbors.shape:
            raise ValueError("weights and neighbors must align")
        if neighbors.size:
            if neighbors.min() < 0 or neighbors.max() >= n:
                raise ValueError("neighbor index out of range")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise ValueError("edge weights must be positive and finite")
        src = np.repeat(np.arange(n), np.diff(offsets))
        if np.any(src == neighbors):
            raise ValueError("self-edges are not allowed")
        for arr in (offsets, neighbors, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "weights", weights)

    @property
    def node_count(self):
        return self.width * self.height

    @property
    def edge_count(self):
        return int(self.neighbors.size)

    @cached_property
    def degrees(self):
        return np.diff(self.offsets)

    @cached_property
    def edge_src(self):
        return np.repeat(np.arange(self.node_count), self.degrees)

    @cached_property
    def sqrt_weights(self):
        return np.sqrt(self.weights)

    @cached_property
    def operator(self):
        """Sparse D with one row per edge: -sqrt(w) at the source, +sqrt(w) at the neighbor."""
        n_edges = self.edge_count
        rows = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
        cols = np.concatenate([self.edge_src, self.neighbors])
        vals = np.concatenate([-self.sqrt_weights, self.sqrt_weights])
        d = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(n_edges, self.node_count)
        )
        return d.tocsr()

    @cached_property
    def operator_t(self):
        return self.operator.T.tocsr()


def validate_symmetry(graph):
    """Check that every stored edge has its reverse with an identical weight.

    Raises ValueError otherwise.  Exhaustive: O(N log N) over the edges.
    """
    n = graph.node_count
    src = graph.edge_src
    key = src * n + graph.neighbors
    rkey = graph.neighbors * n + src
    order = np.argsort(key)
    pos = np.searchsorted(key[order], rkey)
    if np.any(pos >= key.size) or np.any(key[order][np.minimum(pos, key.size - 1)] != rkey):
        raise ValueError("graph stores an edge without its reverse")
    if np.any(graph.weights[order][pos] != graph.weights):
        raise ValueError("graph weight differs between edge directions")


def _patch_distances(u, offsets_yx, patch_radius):
    # dist2[o, i] = sum over the patch of (u(i + p) - u(i + p + o))^2,
    # via a periodic box sum of the squared offset difference.
    height, width = u.shape
    dist2 = np.empty((len(offsets_yx), u.size))
    size = 2 * patch_radius + 1
    for idx, (dy, dx) in enumerate(offsets_yx):
        diff2 = (u - np.roll(u, (-dy, -dx), axis=(0, 1))) ** 2
        if patch_radius > 0:
            diff2 = uniform_filter(diff2, size=size, mode="wrap") * (size * size)
        dist2[idx] = diff2.ravel()
    # the box filter can undershoot zero by rounding on flat patches
    return np.maximum(dist2, 0.0)


def build_graph(reference, patch_radius=2, window_radius=10, k_neighbors=10, h=None):
    """Patch-similarity graph of an image.

    For each pixel, patch distances to every other pixel inside the
    (2*window_radius+1)^2 search window are converted to weights
    exp(-dist^2/(2 h^2)); the k_neighbors largest survive (ties broken
    by window scan order), the four immediate spatial neighbors are
    always added (weights floored at 1e-6 so the graph stays connected),
    and the edge set is symmetrized by union with the weight taken from
    the smaller-index endpoint so w(i,j) = w(j,i) exactly.

    h is the similarity bandwidth; None picks the median of the
    k_neighbors-th best patch distances over a fixed 512-node subsample.

    Patches wrap around the image borders, consistent with the periodic
    grid operators.  Construction is deterministic for fixed inputs.
    """
    u = np.asarray(reference, dtype=np.float64)
    height, width = u.shape
    n = u.size
    if not (0 <= patch_radius <= window_radius):
        raise ValueError("need window_radius >= patch_radius >= 0")
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if h is not None and not h > 0:
        raise ValueError("h must be positive")

    span = range(-window_radius, window_radius + 1)
    offsets_yx = [(dy, dx) for dy in span for dx in span if (dy, dx) != (0, 0)]
    dist2 = _patch_distances(u, offsets_yx, patch_radius)
    num_off = len(offsets_yx)
    k_eff = min(k_neighbors, num_off)

    if h is None:
        rng = np.random.default_rng(0)
        sample = rng.choice(n, size=min(512, n), replace=False)
        kth = np.sort(dist2[:, sample], axis=0)[k_eff - 1]
        h = max(float(np.median(np.sqrt(kth))), 1e-12)
    weights_all = np.exp(-dist2 / (2.0 * h * h))

    # stable sort keeps window scan order on exact weight ties
    keep = np.argsort(-weights_all, axis=0, kind="stable")[:k_eff]
    cand_off = keep.ravel()
    cand_src = np.tile(np.arange(n), k_eff)

    off_dy = np.array([o[0] for o in offsets_yx])
    off_dx = np.array([o[1] for o in offsets_yx])
    lut = np.full((2 * window_radius + 1, 2 * window_radius + 1), -1, dtype=np.int64)
    lut[off_dy + window_radius, off_dx + window_radius] = np.arange(num_off)

    forced = []
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        forced.append(lut[dy + window_radius, dx + window_radius])
    cand_off = np.concatenate([cand_off, np.repeat(forced, n)])
    cand_src = np.concatenate([cand_src, np.tile(np.arange(n), 4)])

    rows = cand_src // width
    cols = cand_src % width
    dst = ((rows + off_dy[cand_off]) % height) * width + (cols + off_dx[cand_off]) % width
    valid = dst != cand_src  # window wrap on tiny grids can alias to self
    cand_src, dst = cand_src[valid], dst[valid]

    lo = np.minimum(cand_src, dst)
    hi = np.maximum(cand_src, dst)
    pair = np.unique(lo * n + hi)
    lo, hi = pair // n, pair % n

    # canonical weight: the one computed at the smaller endpoint
    dy_raw = (hi // width - lo // width) % height
    dx_raw = (hi % width - lo % width) % width
    dy_c = np.where(dy_raw <= window_radius, dy_raw, dy_raw - height)
    dx_c = np.where(dx_raw <= window_radius, dx_raw, dx_raw - width)
    if np.any(np.abs(dy_c) > window_radius) or np.any(np.abs(dx_c) > window_radius):
        raise AssertionError("edge offset escaped the search window")
    w = weights_all[lut[dy_c + window_radius, dx_c + window_radius], lo]

    spatial = ((dy_raw == 0) & ((dx_raw == 1) | (dx_raw == width - 1))) | (
        (dx_raw == 0) & ((dy_raw == 1) | (dy_raw == height - 1))
    )
    w = np.where(spatial, np.maximum(w, FORCED_WEIGHT_FLOOR), w)

    # exp underflows to exact zero for hopelessly dissimilar patches; such
    # edges carry no coupling, so drop them (spatial ones are floored above)
    alive = w > 0.0
    lo, hi, w = lo[alive], hi[alive], w[alive]

    src_all = np.concatenate([lo, hi])
    dst_all = np.concatenate([hi, lo])
    w_all = np.concatenate([w, w])
    order = np.lexsort((dst_all, src_all))
    src_all, dst_all, w_all = src_all[order], dst_all[order], w_all[order]
    offsets = np.concatenate([[0], np.cumsum(np.bincount(src_all, minlength=n))])
    graph = PatchGraph(
        width=width, height=height, offsets=offsets, neighbors=dst_all, weights=w_all
    )
    if np.any(graph.degrees < 1):
        raise AssertionError("graph construction left an isolated node")
    return graph


def local_stencil_graph(width, height):
    """One-sided unit-weight stencil: each pixel points right and down.

    Under this graph nl_gradient enumerates exactly the forward
    differences, so nl_tv coincides with the grid TV.  The edge set is
    intentionally one-directional; adding the reverse edges would count
    each difference twice and break the reduction.
    """
    n = width * height
    idx = np.arange(n)
    right = (idx // width) * width + (idx + 1) % width
    down = (idx + width) % n
    neighbors = np.stack([right, down], axis=1)
    # per-node slots sorted by neighbor index
    neighbors = np.sort(neighbors, axis=1).ravel()
    offsets = 2 * np.arange(n + 1, dtype=np.int64)
    return PatchGraph(
        width=width,
        height=height,
        offsets=offsets,
        neighbors=neighbors,
        weights=np.ones(2 * n),
    )


def nl_gradient(u, graph):
    """Directed derivatives (u(j) - u(i)) sqrt(w(i,j)), one per edge slot."""
    flat = np.asarray(u, dtype=np.float64).ravel()
    if flat.size != graph.node_count:
        raise ValueError("image size does not match the graph")
    return (flat[graph.neighbors] - flat[graph.edge_src]) * graph.sqrt_weights


def nl_divergence(d, graph):
    """Negative adjoint of nl_gradient, reshaped to the image grid.

    Computed as -D^T d with the cached sparse operator, so the adjoint
    identity <Du, d> + <u, Div d> = 0 holds to rounding for any graph.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (graph.edge_count,):
        raise ValueError("field length does not match the graph")
    return (-(graph.operator_t @ d)).reshape(graph.height, graph.width)


def _segment_sums(values, offsets):
    # exact for empty segments, unlike reduceat
    cs = np.concatenate([[0.0], np.cumsum(values)])
    return cs[offsets[1:]] - cs[offsets[:-1]]


def nl_node_norm(d, graph):
    """Per-node Euclidean norm over the node's outgoing edge slots."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (graph.edge_count,):
        raise ValueError("field length does not match the graph")
    return np.sqrt(_segment_sums(d * d, graph.offsets)).reshape(graph.height, graph.width)


def nl_shrink(z, threshold, graph):
    """Node-wise isotropic shrinkage of an edge field.

    Every outgoing bundle keeps its direction while its node norm
    shrinks by `threshold`, clipping at zero; the closed-form proximal
    step of the non-local TV.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    norms = nl_node_norm(z, graph).ravel()
    factor = np.maximum(norms - threshold, 0.0) / np.maximum(norms, 1e-300)
    return np.repeat(factor, graph.degrees) * np.asarray(z, dtype=np.float64)


def nl_tv(u, graph):
    """Non-local total variation: the sum of per-node gradient norms."""
    return float(nl_node_norm(nl_gradient(u, graph), graph).sum())
