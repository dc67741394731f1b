"""Experiment orchestration: configs, method dispatch, metrics, tables.

An experiment is one (image, sampling, noise, method) combination; a
table runs a list of them and lays the results out like a comparison
table with the best method per row highlighted.  Every report embeds
the fully resolved configuration and its hash, so each number remains
traceable to the exact knobs and seeds that produced it.
"""

import copy
import hashlib
import io as std_io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, SolverError
from .grid import snr_db
from .local_solver import LocalSolverConfig, reconstruct_local, edge_guided_outer
from .normals import NormalSolverConfig, normal_guided_cs
from .nl_solver import NlSolverConfig, nl_normal_guided_cs
from .phantom import shepp_logan
from . import io as ncs_io
from . import sensing

__all__ = [
    "ExperimentSpec",
    "MetricsReport",
    "TableReport",
    "specs_from_config",
    "run_experiment",
    "run_table",
]

METHODS = ("backprojection", "tv", "edge_cs", "normal_cs", "nl_tv", "nl_normal_cs")

_BLOCK_KEYS = {
    "local": {"alpha", "gamma", "r", "epsilon_reg", "tol", "max_inner"},
    "normal": {"mu", "r_d", "r_e", "r_m", "tol", "max_inner", "grad_floor"},
    "nl": {
        "alpha",
        "gamma",
        "mu",
        "r_d",
        "r_u",
        "cg_tol",
        "cg_max",
        "preconditioner",
        "tol",
        "max_inner",
    },
    "graph": {"patch_radius", "window_radius", "k_neighbors", "h"},
}
_SCALAR_KEYS = {"outer_iters", "rof_mode"}


@dataclass
class ExperimentSpec:
    """One reconstruction experiment, fully resolved."""

    method: str
    image: str = "shepp_logan"
    width: int = 128
    height: int = 128
    lines: int | None = None
    target_ratio: float | None = 0.12
    mask_seed: int = 0
    noise_fraction: float = 0.0
    noise_seed: int = 0
    noise_domain: str = "measurement"
    params: dict = field(default_factory=dict)
    output_dir: str | None = None
    trace: bool = False
    name: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("unknown method %r (choose from %s)" % (self.method, ", ".join(METHODS)))
        if (self.lines is None) == (self.target_ratio is None):
            raise ConfigError("specify exactly one of lines or target ratio")
        if self.target_ratio is not None and not 0.0 < self.target_ratio <= 1.0:
            raise ConfigError("target ratio must be in (0, 1]")
        if self.noise_fraction < 0:
            raise ConfigError("noise fraction must be >= 0")
        if self.noise_domain not in ("measurement", "image"):
            raise ConfigError("noise domain must be measurement or image")
        if self.image == "shepp_logan" and (self.width < 16 or self.height < 16):
            raise ConfigError("builtin phantom needs at least 16x16")

    def row_label(self):
        sampling = "lines=%d" % self.lines if self.lines is not None else "ratio=%g" % self.target_ratio
        noise = "clean" if self.noise_fraction == 0 else "noise=%g%%" % (100 * self.noise_fraction)
        label = "%s %dx%d %s %s" % (self.image, self.width, self.height, sampling, noise)
        return ("%s %s" % (self.name, label)) if self.name else label

    def resolved_config(self):
        return {
            "image": self.image,
            "size": [self.width, self.height],
            "sampling": {
                "lines": self.lines,
                "ratio": self.target_ratio,
                "seed": self.mask_seed,
            },
            "noise": {
                "sigma_fraction": self.noise_fraction,
                "seed": self.noise_seed,
                "domain": self.noise_domain,
            },
            "method": self.method,
            "params": self.params,
        }


@dataclass
class MetricsReport:
    """Everything measurable about one experiment.

    The metric fields (snr_db, snr_trace, diagnostics, config_hash) are
    bit-identical across reruns of the same spec; wall_clock is timing
    provenance and naturally varies.
    """

    method: str
    snr_db: float
    snr_trace: list
    wall_clock: dict
    diagnostics: dict
    resolved_config: dict
    config_hash: str
    outputs: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "snr_db": self.snr_db,
            "snr_trace": self.snr_trace,
            "wall_clock": self.wall_clock,
            "diagnostics": self.diagnostics,
            "resolved_config": self.resolved_config,
            "config_hash": self.config_hash,
            "outputs": self.outputs,
        }


def _config_hash(resolved):
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _merge_blocks(defaults, override):
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def _validate_params(params, method):
    for key, value in params.items():
        if key in _SCALAR_KEYS:
            continue
        if key not in _BLOCK_KEYS:
            raise ConfigError("unknown parameter block %r for method %s" % (key, method))
        if not isinstance(value, dict):
            raise ConfigError("parameter block %r must be an object" % key)
        unknown = set(value) - _BLOCK_KEYS[key]
        if unknown:
            raise ConfigError(
                "unknown keys %s in block %r" % (sorted(unknown), key)
            )


def specs_from_config(config, method=None, name="", trace=False):
    """Expand a config document into one spec per requested method.

    The document holds the image, sampling and noise choices plus a
    `defaults` parameter block and per-method blocks under `methods`;
    defaults merge under each method (method values win).  `method`
    restricts the run to one method regardless of the document.
    """
    if isinstance(config, (str, Path)):
        name = name or Path(config).stem
        with open(config) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("invalid JSON in %s: %s" % (fh.name, exc)) from exc
    known_top = {"image", "size", "sampling", "noise", "defaults", "methods", "method", "output_dir"}
    unknown = set(config) - known_top
    if unknown:
        raise ConfigError("unknown top-level config keys: %s" % sorted(unknown))

    size = config.get("size", [128, 128])
    sampling = dict(config.get("sampling", {}))
    noise = dict(config.get("noise", {}))
    defaults = config.get("defaults", {})
    methods_cfg = dict(config.get("methods", {}))
    if method is not None:
        methods_cfg = {method: methods_cfg.get(method, {})}
    elif "method" in config:
        methods_cfg = {config["method"]: methods_cfg.get(config["method"], {})}
    if not methods_cfg:
        raise ConfigError("config names no methods to run")

    specs = []
    for method_name, block in methods_cfg.items():
        params = _merge_blocks(defaults, block or {})
        _validate_params(params, method_name)
        specs.append(
            ExperimentSpec(
                method=method_name,
                image=config.get("image", "shepp_logan"),
                width=int(size[0]),
                height=int(size[1]),
                lines=sampling.get("lines"),
                target_ratio=sampling.get("ratio", 0.12 if sampling.get("lines") is None else None),
                mask_seed=int(sampling.get("seed", 0)),
                noise_fraction=float(noise.get("sigma_fraction", 0.0)),
                noise_seed=int(noise.get("seed", 0)),
                noise_domain=noise.get("domain", "measurement"),
                params=params,
                output_dir=config.get("output_dir"),
                trace=trace,
                name=name,
            )
        )
    return specs


def _load_image(spec):
    if spec.image == "shepp_logan":
        return shepp_logan(spec.width, spec.height)
    path = Path(spec.image)
    if path.suffix == ".pgm":
        img = ncs_io.read_pgm(path)
    else:
        img = ncs_io.read_raw(path)
    if img.shape != (spec.height, spec.width):
        raise ConfigError(
            "image file is %dx%d, spec says %dx%d"
            % (img.shape[1], img.shape[0], spec.width, spec.height)
        )
    # comparisons are defined on [0, 1]
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        img = (img - lo) / max(hi - lo, 1e-300)
    return img


def _local_config(params, gamma_override=None):
    block = dict(params.get("local", {}))
    if "alpha" not in block:
        raise ConfigError("local solver block needs alpha")
    if gamma_override is not None:
        block["gamma"] = gamma_override
    try:
        return LocalSolverConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad local solver block: %s" % exc) from exc


def _normal_config(params):
    block = dict(params.get("normal", {}))
    if "mu" not in block:
        raise ConfigError("normal solver block needs mu")
    try:
        return NormalSolverConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad normal solver block: %s" % exc) from exc


def _nl_config(params, gamma_override=None):
    block = dict(params.get("nl", {}))
    if "alpha" not in block:
        raise ConfigError("nl solver block needs alpha")
    if gamma_override is not None:
        block["gamma"] = gamma_override
    try:
        return NlSolverConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad nl solver block: %s" % exc) from exc


def _solve(spec, f, truth):
    params = spec.params
    outer = int(params.get("outer_iters", 4))
    diagnostics = {}
    trace_rows = []
    backprojection = sensing.adjoint(f)

    if spec.method == "backprojection":
        return backprojection, [], diagnostics, trace_rows
    if spec.method == "tv":
        state = reconstruct_local(f, None, None, _local_config(params), backprojection, trace=spec.trace)
        diagnostics.update(
            iterations=state.iterations_run,
            final_rel_change=state.final_rel_change,
            constraint_residual=float(state.constraint_residual),
        )
        trace_rows = [
            {"sweep": i + 1, "rel_change": r, "constraint_residual": c, "objective": o}
            for i, (r, c, o) in enumerate(state.trace)
        ]
        return state.u, [], diagnostics, trace_rows
    if spec.method == "edge_cs":
        u = edge_guided_outer(f, _local_config(params), outer)
        diagnostics["outer_iterations"] = outer
        return u, [], diagnostics, trace_rows
    if spec.method == "normal_cs":
        result = normal_guided_cs(
            f,
            _local_config(params),
            _normal_config(params),
            outer_iters=outer,
            ground_truth=truth,
        )
        diagnostics["outer_iterations"] = result.outer_iterations
        diagnostics["normal_feasibility"] = result.normal_feasibility
        return result.u, result.snr_trace, diagnostics, trace_rows
    # non-local methods
    nl_outer = int(params.get("outer_iters", 3))
    gamma_override = 0.0 if spec.method == "nl_tv" else None
    result = nl_normal_guided_cs(
        f,
        _nl_config(params, gamma_override),
        _local_config(params, gamma_override=0.0),
        outer_iters=nl_outer,
        graph_params=params.get("graph", {}),
        rof_mode=params.get("rof_mode", "local_rof"),
        ground_truth=truth,
    )
    diagnostics["outer_iterations"] = result.outer_iterations
    diagnostics["node_norm_feasibility"] = result.node_norm_feasibility
    return result.u, result.snr_trace, diagnostics, trace_rows


def run_experiment(spec):
    """Execute one spec end to end and return its MetricsReport.

    Stages: input, sampling, measurement, solve, metrics, output.  Any
    failure is re-raised with the stage name and config hash attached.
    """
    resolved = spec.resolved_config()
    cfg_hash = _config_hash(resolved)
    wall = {}
    stage = "input"
    try:
        t0 = time.perf_counter()
        truth = _load_image(spec)
        wall["input"] = time.perf_counter() - t0

        stage = "sampling"
        t0 = time.perf_counter()
        lines = spec.lines
        if lines is None:
            lines = sensing.lines_for_ratio(spec.width, spec.height, spec.target_ratio)
        plan = sensing.radial_mask(spec.width, spec.height, lines, spec.mask_seed)
        wall["sampling"] = time.perf_counter() - t0

        stage = "measurement"
        t0 = time.perf_counter()
        source = truth
        if spec.noise_fraction > 0 and spec.noise_domain == "image":
            rng = np.random.default_rng(spec.noise_seed)
            rms = np.linalg.norm(truth) / np.sqrt(truth.size)
            source = truth + rng.normal(0.0, spec.noise_fraction * rms, truth.shape)
        f = sensing.measure(source, plan)
        if spec.noise_fraction > 0 and spec.noise_domain == "measurement":
            f = sensing.add_noise(f, spec.noise_fraction, spec.noise_seed)
        wall["measurement"] = time.perf_counter() - t0

        stage = "solve"
        t0 = time.perf_counter()
        u, snr_trace, diagnostics, trace_rows = _solve(spec, f, truth)
        wall["solve"] = time.perf_counter() - t0

        stage = "metrics"
        t0 = time.perf_counter()
        final_snr = snr_db(truth, u)
        diagnostics["sample_ratio"] = plan.sample_ratio
        diagnostics["line_count"] = plan.line_count
        if trace_rows:
            diagnostics["trace_rows"] = trace_rows
        wall["metrics"] = time.perf_counter() - t0

        outputs = {}
        stage = "output"
        t0 = time.perf_counter()
        if spec.output_dir is not None:
            out = Path(spec.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            prefix = "%s_%s" % (spec.name or spec.image, spec.method)
            recon_pgm = out / ("%s.pgm" % prefix)
            recon_raw = out / ("%s.ncsf" % prefix)
            mask_pbm = out / ("%s_mask.pbm" % prefix)
            ncs_io.write_pgm(recon_pgm, u, bits=16)
            ncs_io.write_raw(recon_raw, u)
            ncs_io.write_mask(mask_pbm, plan)
            outputs = {
                "reconstruction_pgm": str(recon_pgm),
                "reconstruction_raw": str(recon_raw),
                "mask_pbm": str(mask_pbm),
            }
        wall["output"] = time.perf_counter() - t0
    except (ConfigError, SolverError) as exc:
        raise type(exc)("stage %r (config %s): %s" % (stage, cfg_hash[:12], exc)) from exc
    except (OSError, ValueError) as exc:
        raise ConfigError("stage %r (config %s): %s" % (stage, cfg_hash[:12], exc)) from exc

    return MetricsReport(
        method=spec.method,
        snr_db=float(final_snr),
        snr_trace=list(snr_trace),
        wall_clock=wall,
        diagnostics=diagnostics,
        resolved_config=resolved,
        config_hash=cfg_hash,
        outputs=outputs,
    )


@dataclass
class TableReport:
    """Results of a spec list arranged as rows x methods."""

    rows: list
    methods: list
    reports: dict
    failures: dict

    @property
    def any_failed(self):
        return bool(self.failures)

    def cell(self, label, method):
        return self.reports.get((label, method))

    def to_csv(self):
        buf = std_io.StringIO()
        buf.write("row," + ",".join(self.methods) + ",best\n")
        for label in self.rows:
            cells = []
            best = self._best(label)
            for m in self.methods:
                if (label, m) in self.failures:
                    cells.append("FAIL")
                else:
                    report = self.reports.get((label, m))
                    cells.append("%.4f" % report.snr_db if report else "")
            buf.write('"%s",%s,%s\n' % (label, ",".join(cells), best or ""))
        return buf.getvalue()

    def _best(self, label):
        scored = [
            (self.reports[(label, m)].snr_db, m)
            for m in self.methods
            if (label, m) in self.reports
        ]
        return max(scored)[1] if scored else None

    def to_text(self):
        width = max([len(r) for r in self.rows] + [3])
        header = "%-*s  %s" % (width, "row", "  ".join("%12s" % m for m in self.methods))
        lines = [header, "-" * len(header)]
        for label in self.rows:
            best = self._best(label)
            cells = []
            for m in self.methods:
                if (label, m) in self.failures:
                    cells.append("%12s" % "FAIL")
                    continue
                report = self.reports.get((label, m))
                if report is None:
                    cells.append("%12s" % "")
                elif m == best:
                    cells.append("%12s" % ("**%.2f**" % report.snr_db))
                else:
                    cells.append("%12s" % ("%.2f" % report.snr_db))
            lines.append("%-*s  %s" % (width, label, "  ".join(cells)))
        return "\n".join(lines) + "\n"


def run_table(specs, threads=1):
    """Run every spec and aggregate a comparison table.

    Specs sharing a row label (image, size, sampling, noise) land in one
    row with one column per method; the best SNR per row is highlighted.
    Failures mark their cell and are reported, not raised.  threads > 1
    runs specs concurrently; results are assembled in input order.
    """
    if not specs:
        raise ConfigError("run_table needs at least one spec")
    rows = []
    methods = []
    reports = {}
    failures = {}

    def one(spec):
        return run_experiment(spec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = []
            futures = [pool.submit(one, spec) for spec in specs]
            for future in futures:
                try:
                    outcomes.append(future.result())
                except Exception as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for spec in specs:
            try:
                outcomes.append(one(spec))
            except Exception as exc:
                outcomes.append(exc)

    for spec, outcome in zip(specs, outcomes):
        label = spec.row_label()
        if label not in rows:
            rows.append(label)
        if spec.method not in methods:
            methods.append(spec.method)
        if isinstance(outcome, Exception):
            failures[(label, spec.method)] = str(outcome)
        else:
            reports[(label, spec.method)] = outcome
    return TableReport(rows=rows, methods=methods, reports=reports, failures=failures)
