"""Command-line entry point: ``gsrecon reconstruct | twin | bench``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .bench import BUDGET_S, bench
from .errors import DataError, GSReconError, NumericalError
from .fem import build_system
from .mesh import load_mesh
from .observations import load_measurements, save_measurements
from .outputs import write_outputs
from .reconstruction import Mode, ReconstructionContext, load_config, reconstruct
from .twin import RunReport, load_twin_spec, misfits, run_twin

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gsrecon", description="Equilibrium reconstruction from magnetic and polarimetry data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reconstruct", help="reconstruct one frame and write result files")
    r.add_argument("--mesh", required=True)
    r.add_argument("--measurements", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--realtime", type=int, metavar="N", help="cap at N iterations (1 or 2)")

    t = sub.add_parser("twin", help="manufacture a synthetic truth, measure it and reconstruct it")
    t.add_argument("--mesh", required=True)
    t.add_argument("--spec", required=True)
    t.add_argument("--config", help="reconstruction config (default: built from the spec)")
    t.add_argument("--out", required=True)
    t.add_argument("--coarse-chords", action="store_true",
                   help="synthesise chord data with the midpoint rule instead of the reconstruction's rule")

    b = sub.add_parser("bench", help="time repeated reconstructions of one frame")
    b.add_argument("--mesh", required=True)
    b.add_argument("--measurements", required=True)
    b.add_argument("--config", required=True)
    b.add_argument("--frames", type=int, default=10)
    b.add_argument("--budget", type=float, default=BUDGET_S, help="per-iteration budget in seconds")
    return p


def _reconstruct(args, out):
    mesh = load_mesh(args.mesh)
    meas = load_measurements(args.measurements)
    config = load_config(args.config)
    if args.realtime is not None:
        if args.realtime not in (1, 2):
            raise DataError("--realtime takes 1 or 2")
        config = replace(config, mode=Mode.REALTIME, realtime_iters=args.realtime)
    ctx = ReconstructionContext.build(mesh, meas, config, build_system(mesh))
    state, history, derived = reconstruct(mesh, meas, config, ctx=ctx)
    report = RunReport(history, misfits(ctx, state, meas), None, state.flipped, state.lam)
    write_outputs(mesh, state, history, derived, args.out, report)
    print(f"{history.status} after {history.iterations} iterations; results in {args.out}", file=out)


def _twin(args, out):
    mesh = load_mesh(args.mesh)
    spec = load_twin_spec(args.spec)
    config = load_config(args.config) if args.config else spec.config()
    res = run_twin(mesh, spec, config, chord_order=1 if args.coarse_chords else 2)
    write_outputs(mesh, res.state, res.history, res.derived, args.out, res.report)
    save_measurements(res.measurements, os.path.join(args.out, "measurements.json"))
    errs = res.report.profile_errors
    print(f"{res.history.status} after {res.history.iterations} iterations; "
          f"profile errors A {errs['A']:.3e} B {errs['B']:.3e} ne {errs['ne']:.3e}", file=out)


def _bench(args, out):
    if args.frames < 1:
        raise DataError("--frames must be at least 1")
    mesh = load_mesh(args.mesh)
    meas = load_measurements(args.measurements)
    config = load_config(args.config)
    result = bench(mesh, meas, config, frames=args.frames, budget=args.budget)
    out.write(f"mesh_nodes {len(mesh.nodes)}\nmesh_triangles {len(mesh.triangles)}\n")
    out.write(result.to_text())


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    handler = {"reconstruct": _reconstruct, "twin": _twin, "bench": _bench}[args.command]
    try:
        handler(args, out)
    except NumericalError as exc:
        print(f"gsrecon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, GSReconError) as exc:
        print(f"gsrecon: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
