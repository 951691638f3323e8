"""Command-line entry point.

Subcommands mirror the pipeline stages so that expensive stages can consume
the serialized output of cheap ones:

    ev-stab build            construct a steady state and write its tables
    ev-stab check-single-well  verify the effective-potential geometry
    ev-stab orbits           sample turning points and periods to CSV
    ev-stab basis-report     Gram condition and kernel-basis residuals
    ev-stab kernel           assemble and dump the reduced kernel
    ev-stab stability        full pipeline: gates, kernel, verdict, artifacts

Exit codes: 0 success, 2 gate failure, 3 numerical failure, 4 config error.
"""

import argparse
import json
import os
import sys

# cap BLAS pools alongside the worker pool before numpy initializes
_cap = os.environ.get("EV_STAB_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _cap)

from .config import parse_config
from .equilibria import load_state
from .errors import ConfigurationError, EvStabError, GateError
from .mathur import kernel_K
from .operators import KernelBasis
from .orbits import verify_single_well
from .phase_space import PhaseGrid
from . import pipeline
from .pipeline import (build_state, dump_kernel_csv, emit_artifacts,
                       orbit_sample_csv, run_pipeline)


def _load_or_build(args):
    if getattr(args, "state", None):
        return load_state(args.state), parse_config(args.config) if args.config else None
    if not args.config:
        raise ConfigurationError("either --state or --config is required")
    cfg = parse_config(args.config)
    ss, _ = build_state(cfg)
    return ss, cfg


def cmd_build(args):
    cfg = parse_config(args.config)
    result = pipeline.RunResult(report=pipeline.PipelineReport(config=cfg.resolved()))
    ss, params = build_state(cfg)
    result.state, result.shell_params = ss, params
    from .equilibria import diagnostics, equilibrium_residuals
    result.report.equilibrium = {
        "E0_cut": ss.E0_cut, "Rmin": ss.Rmin, "Rmax": ss.Rmax,
        "M_vlasov": ss.M_vlasov, "M": ss.M,
        "residuals": equilibrium_residuals(ss),
        "diagnostics": diagnostics(ss),
    }
    result.report.record("equilibrium", "built", mode=ss.mode)
    files = emit_artifacts(result, cfg, out_dir=args.out_dir)
    print("\n".join(files))


def cmd_check_single_well(args):
    ss, _ = _load_or_build(args)
    try:
        sup = verify_single_well(ss)
    except GateError as exc:
        payload = {"passed": False, "detail": str(exc)}
        _emit_json(payload, args.out)
        raise
    payload = {
        "passed": True,
        "L_lo": sup.L_lo,
        "L_max": sup.L_max,
        "T_min": sup.T_min,
        "T_max": sup.T_max,
        "sufficient_condition_2m_over_r": sup.sufficient_condition,
        "formal_vacuum_band": sup.formal,
        "per_L": [
            {"L": float(L), "r_L": float(rL), "E_min": float(Emin),
             "I_L": [float(a), float(b)]}
            for L, rL, Emin, a, b in zip(sup.L_nodes, sup.r_L, sup.E_min,
                                         sup.IL_lo, sup.IL_hi)
        ],
    }
    _emit_json(payload, args.out)


def cmd_orbits(args):
    ss, _ = _load_or_build(args)
    sup = verify_single_well(ss)
    path = args.out or "orbits.csv"
    orbit_sample_csv(ss, sup, args.samples, path)
    print(path)


def cmd_basis_report(args):
    ss, cfg = _load_or_build(args)
    sup = verify_single_well(ss)
    kw = {}
    if cfg is not None:
        kw = {"n_theta": cfg.n_theta, "n_L": cfg.n_L, "n_E": cfg.n_E}
    grid = PhaseGrid(ss, sup, **kw)
    basis = KernelBasis(grid, args.n_e, args.n_l)
    payload = {
        "size": basis.size,
        "degrees": [basis.n_E, basis.n_L],
        "gram_condition": basis.condition,
        "dropped_directions": basis.n_dropped,
        "element_B_residuals": basis.element_residuals(),
    }
    _emit_json(payload, args.out)


def cmd_kernel(args):
    ss, cfg = _load_or_build(args)
    sup = verify_single_well(ss)
    kw = {}
    n_nodes = args.nodes
    ne = nl = 8
    if cfg is not None:
        kw = {"n_theta": cfg.n_theta, "n_L": cfg.n_L, "n_E": cfg.n_E}
        n_nodes = n_nodes or cfg.n_radial_nodes
        ne, nl = cfg.basis_n_E, cfg.basis_n_L
    grid = PhaseGrid(ss, sup, **kw)
    basis = KernelBasis(grid, ne, nl)
    kern = kernel_K(ss, basis, n_nodes or 160)
    payload = {"hs_norm": kern.hs_norm, "lambda_1": kern.operator_norm,
               "n_nodes": len(kern.r_nodes), **kern.validate()}
    _emit_json(payload, args.out)
    if args.dump:
        dump_kernel_csv(kern, args.dump)
        print(args.dump)


def cmd_stability(args):
    cfg = parse_config(args.config)
    try:
        result = run_pipeline(cfg)
    except EvStabError:
        raise
    files = emit_artifacts(result, cfg, out_dir=args.out_dir)
    print("\n".join(files))
    verdict = result.report.stability["verdict"] if result.report.stability else "no-matter"
    print(f"verdict: {verdict}")


def _emit_json(payload, out):
    text = json.dumps(payload, indent=1, sort_keys=True, default=pipeline._json_default)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        print(out)
    else:
        print(text)


def _add_source_opts(p, state_ok=True):
    p.add_argument("--config", help="run configuration file")
    if state_ok:
        p.add_argument("--state", help="serialized steady-state file")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ev-stab",
        description="Static solutions and linear stability of collisionless "
                    "self-gravitating matter, with or without a central black hole.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="construct a steady state")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("check-single-well", help="verify the potential geometry")
    _add_source_opts(p)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_check_single_well)

    p = sub.add_parser("orbits", help="sample orbits to CSV")
    _add_source_opts(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default="orbits.csv")
    p.set_defaults(func=cmd_orbits)

    p = sub.add_parser("basis-report", help="kernel-basis diagnostics")
    _add_source_opts(p)
    p.add_argument("--n-e", type=int, default=8)
    p.add_argument("--n-l", type=int, default=8)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_basis_report)

    p = sub.add_parser("kernel", help="assemble the reduced kernel")
    _add_source_opts(p)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--dump", help="CSV dump path of (r_i, s_j, K_ij)")
    p.add_argument("--out", help="write JSON summary here instead of stdout")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("stability", help="full pipeline with verdict")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_stability)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 4
    except GateError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 2
    except EvStabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
