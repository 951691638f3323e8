"""Pipeline orchestration: equilibrium -> gates -> kernel -> verdict.

Stages run in order and a failed gate prevents all later stages; the report
records every stage with its residuals.  ``report.json`` is bit-identical
across runs with the same configuration (fixed quadrature orders, no
randomness); wall-clock timings are therefore kept out of it and written to
a separate file.
"""

from dataclasses import dataclass, field
import csv
import json
import os
import time

import numpy as np

from .config import RunConfig
from .equilibria import (ShellParameters, SteadyState, build_shell, diagnostics,
                         equilibrium_residuals, save_state, schwarzschild_potential,
                         solve_singularity_free)
from .eos import EquationOfState
from .errors import EvStabError, GateError
from .mathur import kernel_K, stability_report
from .operators import KernelBasis
from .orbits import verify_single_well
from .phase_space import PhaseGrid, hlr_identity_residual, s4_bound
from . import plots


@dataclass
class PipelineReport:
    config: dict
    stages: list = field(default_factory=list)
    gates: dict = field(default_factory=dict)
    equilibrium: dict = field(default_factory=dict)
    stability: dict | None = None
    timings: dict = field(default_factory=dict)

    def record(self, name, status, **detail):
        self.stages.append({"stage": name, "status": status, **detail})

    def to_dict(self):
        # timings are deliberately excluded: the report must be bit-identical
        # across identical runs
        return {"config": self.config, "stages": self.stages, "gates": self.gates,
                "equilibrium": self.equilibrium, "stability": self.stability}


@dataclass
class RunResult:
    report: PipelineReport
    state: SteadyState | None = None
    support: object = None
    grid: object = None
    basis: object = None
    kernel: object = None
    shell_params: ShellParameters | None = None


def build_state(cfg: RunConfig):
    """Equilibrium construction stage."""
    eos = EquationOfState(family=cfg.family, k=cfg.k, l=cfg.l, L0=cfg.L0,
                          delta=cfg.delta)
    if cfg.mode == "singfree":
        return solve_singularity_free(eos, cfg.y0), None
    params = ShellParameters(M=cfg.M, L0=cfg.L0, E_intermediate=cfg.E_intermediate,
                             eta0=cfg.eta0 if cfg.eta0 > 0 else None)
    return build_shell(params, eos, cfg.delta), params


def run_pipeline(cfg: RunConfig) -> RunResult:
    """Execute all stages; gate failures surface as GateError after recording."""
    report = PipelineReport(config=cfg.resolved())
    result = RunResult(report=report)
    clock = time.perf_counter

    t0 = clock()
    ss, params = build_state(cfg)
    result.state = ss
    result.shell_params = params
    report.timings["equilibrium"] = clock() - t0
    report.equilibrium = {
        "E0_cut": ss.E0_cut, "Rmin": ss.Rmin, "Rmax": ss.Rmax,
        "M_vlasov": ss.M_vlasov, "M": ss.M,
        "residuals": equilibrium_residuals(ss),
        "diagnostics": diagnostics(ss),
    }
    report.record("equilibrium", "built", mode=ss.mode)
    if not ss.has_matter:
        report.record("gates", "skipped", reason="no matter support")
        return result

    t0 = clock()
    try:
        support = verify_single_well(ss, n_L=cfg.single_well_n_L)
    except GateError as exc:
        report.gates["single_well"] = {"passed": False, "detail": str(exc)}
        report.record("gates", "failed", gate="single_well", detail=str(exc))
        raise
    result.support = support
    report.gates["single_well"] = {
        "passed": True, "L_max": support.L_max,
        "sufficient_condition": support.sufficient_condition,
    }
    report.gates["period_bounds"] = {
        "passed": bool(np.isfinite(support.T_max) and support.T_min > 0),
        "T_min": support.T_min, "T_max": support.T_max,
        "ratio": support.T_max / support.T_min,
    }
    hlr = hlr_identity_residual(ss)
    report.gates["hlr_identity"] = {"passed": bool(hlr < cfg.hlr_gate), "residual": hlr}
    s4 = s4_bound(ss)
    report.gates["s4_bound"] = {"passed": bool(s4["bounded"]), **s4}
    report.timings["gates"] = clock() - t0
    failed = [k for k, v in report.gates.items() if not v["passed"]]
    if failed:
        report.record("gates", "failed", gate=failed[0])
        raise GateError(f"gate(s) failed: {', '.join(failed)}")
    report.record("gates", "passed")

    t0 = clock()
    grid = PhaseGrid(ss, support, n_theta=cfg.n_theta, n_L=cfg.n_L, n_E=cfg.n_E)
    basis = KernelBasis(grid, cfg.basis_n_E, cfg.basis_n_L,
                        cfg.include_profile_generator)
    kern = kernel_K(ss, basis, cfg.n_radial_nodes)
    result.grid, result.basis, result.kernel = grid, basis, kern
    report.timings["kernel"] = clock() - t0
    report.record("kernel", "built", n_nodes=cfg.n_radial_nodes,
                  **kern.validate())

    t0 = clock()
    rep = stability_report(ss, grid, basis, n_nodes=cfg.n_radial_nodes,
                           tol=cfg.verdict_tol,
                           gates={k: v["passed"] for k, v in report.gates.items()})
    report.timings["stability"] = clock() - t0
    report.stability = rep.to_dict()
    report.record("stability", "done", verdict=rep.verdict)
    return result


# ---------------------------------------------------------------------------
# artifact emission


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def figure_one_data(params: ShellParameters, n: int = 600):
    """Effective-potential curve and construction markers of the shell setup."""
    M, L0 = params.M, params.L0
    r = np.linspace(2.0 * M * 1.01, 1.25 * params.R_max0, n)
    psi = schwarzschild_potential(M, L0, r)
    markers = {
        "r0_level": params.r0_level,
        "s_L0": params.s_L0,
        "r0_plus_eta0": params.r0 + params.eta0,
        "R_min0": params.R_min0,
        "r_L0": params.r_L0,
        "R_max0": params.R_max0,
    }
    marker_psi = {k: float(schwarzschild_potential(M, L0, v)) for k, v in markers.items()}
    return r, psi, markers, marker_psi


def emit_artifacts(result: RunResult, cfg: RunConfig, out_dir=None) -> list:
    """Write the report, delimited tables, plot data, and rendered figures."""
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    written = []
    ss = result.state

    if cfg.emit_json:
        written.append(write_json(result.report.to_dict(), os.path.join(out, "report.json")))
        written.append(write_json(result.report.timings, os.path.join(out, "timings.json")))
    if cfg.emit_csv and ss is not None:
        path = os.path.join(out, "state.csv")
        save_state(ss, path)
        written.append(path)
    if result.kernel is not None and cfg.emit_csv:
        written.append(dump_kernel_csv(result.kernel, os.path.join(out, "kernel.csv")))

    if result.shell_params is not None:
        r, psi, markers, marker_psi = figure_one_data(result.shell_params)
        if cfg.emit_csv:
            path = os.path.join(out, "effective_potential.csv")
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["r", "psi_L0"])
                wr.writerows(zip(map(repr, r), map(repr, psi)))
            written.append(path)
        if cfg.emit_json:
            written.append(write_json(
                {"markers": markers, "psi_at_markers": marker_psi,
                 "E_intermediate": result.shell_params.E_intermediate},
                os.path.join(out, "effective_potential_markers.json")))
        if cfg.emit_plots:
            written.append(plots.plot_effective_potential(
                r, psi, {k: (markers[k], marker_psi[k]) for k in markers},
                os.path.join(out, "effective_potential.png"),
                E_levels=[(result.shell_params.E_intermediate, "E0")]))

    if cfg.emit_plots and ss is not None:
        written.append(plots.plot_state_profiles(ss, os.path.join(out, "state_profiles.png")))
        if result.kernel is not None:
            written.extend(plots.plot_kernel(result.kernel,
                                             os.path.join(out, "kernel.png"),
                                             os.path.join(out, "spectrum.png")))
    return written


def dump_kernel_csv(kern, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r_i", "s_j", "K_ij"])
        for i, r in enumerate(kern.r_nodes):
            for j, s in enumerate(kern.r_nodes):
                wr.writerow([repr(float(r)), repr(float(s)), repr(float(kern.K[i, j]))])
    return path


def orbit_sample_csv(ss, support, n_samples, path):
    """Deterministic (E, L) sample of turning points and periods."""
    from .orbits import period, turning_points

    k = max(int(np.ceil(np.sqrt(n_samples))), 2)
    tL = np.linspace(0.05, 0.95, k)
    tE = np.linspace(0.05, 0.95, k)
    rows = []
    for a in tL:
        L = support.L_lo + (support.L_max - support.L_lo) * a
        e_lo, e_hi = support.E_range(L)
        for b in tE:
            E = e_lo + (e_hi - e_lo) * b
            try:
                rm, rp = turning_points(ss, E, L)
                T = period(ss, E, L)
            except EvStabError:
                continue
            rows.append((E, L, rm, rp, T))
            if len(rows) >= n_samples:
                break
        if len(rows) >= n_samples:
            break
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["E", "L", "r_minus", "r_plus", "T"])
        for row in rows:
            wr.writerow([repr(float(v)) for v in row])
    return path
