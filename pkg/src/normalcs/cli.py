"""Command-line front end.

Verbs: phantom (write the test image), mask (write a sampling mask),
reconstruct (run one experiment from a JSON config), table (run a
directory of configs and print a method-comparison table).

Exit codes: 0 success, 2 configuration problem, 3 solver failure,
4 table completed with some cells failed.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .exceptions import ConfigError, SolverError
from .harness import run_experiment, run_table, specs_from_config
from .phantom import shepp_logan
from . import io as ncs_io
from . import sensing

__all__ = ["main"]


def _parse_size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigError("size must look like 128x128, got %r" % text)


def _parse_set(assignment):
    if "=" not in assignment:
        raise ConfigError("--set expects key.path=value, got %r" % assignment)
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.split("."), value


def _apply_overrides(config, assignments):
    for keys, value in map(_parse_set, assignments):
        node = config
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError("--set path %s crosses a non-object" % ".".join(keys))
        node[keys[-1]] = value
    return config


def _cmd_phantom(args):
    width, height = _parse_size(args.size)
    img = shepp_logan(width, height)
    out = Path(args.out)
    if out.suffix == ".pgm":
        ncs_io.write_pgm(out, img, bits=args.bits)
    else:
        ncs_io.write_raw(out, img)
    print("wrote %s (%dx%d)" % (out, width, height))
    return 0


def _cmd_mask(args):
    width, height = _parse_size(args.size)
    if (args.lines is None) == (args.ratio is None):
        raise ConfigError("specify exactly one of --lines or --ratio")
    lines = args.lines
    if lines is None:
        lines = sensing.lines_for_ratio(width, height, args.ratio)
    plan = sensing.radial_mask(width, height, lines, args.seed)
    ncs_io.write_mask(args.out, plan)
    print(
        "wrote %s (%d lines, %d of %d samples, ratio %.4f)"
        % (args.out, plan.line_count, plan.sample_count, width * height, plan.sample_ratio)
    )
    return 0


def _write_trace(report, out_dir):
    rows = report.diagnostics.get("trace_rows")
    if not rows:
        return None
    path = Path(out_dir) / ("%s_trace.csv" % report.method)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sweep", "rel_change", "constraint_residual", "objective"])
        writer.writeheader()
        writer.writerows(rows)
    return path


def _cmd_reconstruct(args):
    with open(args.config) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid JSON in %s: %s" % (args.config, exc)) from exc
    _apply_overrides(config, args.set or [])
    if args.noise_domain is not None:
        config.setdefault("noise", {})["domain"] = args.noise_domain
    if args.out is not None:
        config["output_dir"] = args.out
    specs = specs_from_config(config, method=args.method, name=Path(args.config).stem, trace=args.trace)
    exit_code = 0
    for spec in specs:
        report = run_experiment(spec)
        if args.trace and spec.output_dir:
            trace_path = _write_trace(report, spec.output_dir)
            if trace_path is not None:
                report.outputs["trace_csv"] = str(trace_path)
        doc = report.to_dict()
        doc["diagnostics"].pop("trace_rows", None)
        if spec.output_dir:
            report_path = Path(spec.output_dir) / ("%s_%s_report.json" % (spec.name or spec.image, spec.method))
            with open(report_path, "w") as fh:
                json.dump(doc, fh, indent=2)
            print("%s: %.2f dB (report %s)" % (spec.method, report.snr_db, report_path))
        else:
            json.dump(doc, sys.stdout, indent=2)
            print()
    return exit_code


def _cmd_table(args):
    config_dir = Path(args.configs)
    paths = sorted(config_dir.glob("*.json"))
    if not paths:
        raise ConfigError("no *.json configs in %s" % config_dir)
    specs = []
    for path in paths:
        with open(path) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("invalid JSON in %s: %s" % (path, exc)) from exc
        _apply_overrides(config, args.set or [])
        specs.extend(specs_from_config(config, name=path.stem))
    threads = max(1, int(os.environ.get("NORMALCS_THREADS", "1")))
    table = run_table(specs, threads=threads)
    sys.stdout.write(table.to_text())
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "table.csv"
        csv_path.write_text(table.to_csv())
        print("wrote %s" % csv_path)
    if table.any_failed:
        for (label, method), message in sorted(table.failures.items()):
            print("FAILED %s / %s: %s" % (label, method, message), file=sys.stderr)
        return 4
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="normalcs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write the built-in test image")
    p.add_argument("--size", required=True, help="WxH, e.g. 128x128")
    p.add_argument("--out", required=True, help="output image (.pgm or raw)")
    p.add_argument("--bits", type=int, default=16, choices=(8, 16))
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("mask", help="write a radial sampling mask")
    p.add_argument("--size", required=True, help="WxH, e.g. 128x128")
    p.add_argument("--lines", type=int, default=None)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output mask (.pbm)")
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("reconstruct", help="run one experiment config")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--method", default=None, help="override the method to run")
    p.add_argument("--trace", action="store_true", help="write per-sweep diagnostics CSV")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--noise-domain", choices=("measurement", "image"), default=None)
    p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config entry, e.g. sampling.ratio=0.08")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("table", help="run a directory of configs as a comparison table")
    p.add_argument("--configs", required=True, help="directory of experiment JSON files")
    p.add_argument("--out", default=None, help="directory for table.csv")
    p.add_argument("--set", action="append", metavar="PATH=VALUE")
    p.set_defaults(func=_cmd_table)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except SolverError as exc:
        print("solver error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
