"""Command line entry point: ``riphs <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from .errors import ParseError, RiphsError, ValidationError
from .ivp import balance_report, integrate, write_trajectory_csv
from .mpc import run_mpc
from .ocp import solve_ocp
from .plotting import write_svg
from .turnpike import solve_turnpike, turnpike_distances, write_turnpike_json
from .verify import estimate_growth_constant, radial_probe, verify_report, write_verify_json

SUBCOMMANDS = ("simulate", "ocp", "turnpike", "mpc", "verify")


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _state_plot(out, name, traj, title, x_tp=None, emit=True):
    if not emit:
        return
    labels = [f"x{i + 1}" for i in range(traj.n)]
    hl = None if x_tp is None else [float(v) for v in x_tp]
    write_svg(out / name, traj.times, traj.states.T, labels, title=title, hlines=hl)


def _control_plot(out, name, traj, title, emit=True):
    if not emit or traj.controls.shape[0] == 0:
        return
    labels = [f"u{j + 1}" for j in range(traj.controls.shape[1])]
    write_svg(out / name, traj.times[:-1], traj.controls.T, labels, title=title, step=True)


def _turnpike(cfg, model):
    o, tp = cfg.data["ocp"], cfg.data["turnpike"]
    spec = cfgmod.build_ocp(cfg, model)
    return solve_turnpike(model, o["alpha"][1], o["alpha"][2], spec.c_mat, spec.y_ref, spec.u_lo, spec.u_hi,
                          n_starts=tp["n_starts"], seed=tp["seed"])


def _simulate(cfg, model, out, emit):
    x0, u, method, tol, substeps = cfgmod.build_simulation(cfg, model)
    traj = integrate(model, x0, u, method=method, tol=tol, substeps=substeps)
    rep = balance_report(model, traj)
    write_trajectory_csv(traj, out / "trajectory.csv")
    _write_json(out / "summary.json", {
        "method": method,
        "t_end": float(traj.times[-1]),
        "power_residual": rep.power_residual,
        "entropy_slack": rep.entropy_slack,
        "H_range": float(np.ptp(traj.H)),
    })
    _state_plot(out, "states.svg", traj, "states", emit=emit)


def _ocp(cfg, model, out, emit):
    spec = cfgmod.build_ocp(cfg, model)
    sol = solve_ocp(spec, opts=cfgmod.build_solver_options(cfg))
    summary = sol.summary(spec)
    x_tp = None
    if cfg.has("turnpike"):
        tp = _turnpike(cfg, model)
        write_turnpike_json(tp, out / "turnpike.json")
        x_tp = tp.x_tp
        dmin, dint = turnpike_distances(sol.x_opt, x_tp)
        summary.update({"turnpike_min_dist": dmin, "turnpike_integral_sq_dist": dint})
    write_trajectory_csv(sol.x_opt, out / "trajectory.csv")
    _write_json(out / "solution.json", summary)
    _state_plot(out, "states.svg", sol.x_opt, f"optimal states, T = {spec.T:g}", x_tp, emit)
    _control_plot(out, "controls.svg", sol.x_opt, f"optimal controls, T = {spec.T:g}", emit)
    return 0 if sol.converged else 3


def _turnpike_cmd(cfg, model, out, emit):
    write_turnpike_json(_turnpike(cfg, model), out / "turnpike.json")


def _mpc(cfg, model, out, emit):
    mcfg = cfgmod.build_mpc(cfg, model)
    m = cfg.data["mpc"]
    x0 = mcfg.ocp.x0
    span = mcfg.n_iterations * mcfg.delta
    res = run_mpc(mcfg, x0, settle_window=m["settle_window"] if span >= m["settle_window"] else None,
                  settle_tol=m["settle_tol"])
    summary = res.summary()
    x_tp = None
    if cfg.has("turnpike"):
        tp = _turnpike(cfg, model)
        write_turnpike_json(tp, out / "turnpike.json")
        x_tp = tp.x_tp
        if res.settled:
            summary["settled_dist_to_turnpike"] = float(np.linalg.norm(res.settled_state - x_tp))
    write_trajectory_csv(res.closed_loop, out / "closed_loop.csv")
    _write_json(out / "mpc.json", summary)
    _state_plot(out, "states.svg", res.closed_loop, f"closed loop, T = {mcfg.ocp.T:g}", x_tp, emit)


def _verify(cfg, model, out, emit):
    v = cfg.data.get("verify") or cfgmod.DEFAULTS["verify"]
    est = estimate_growth_constant(model, v["p"], v["radii"], v["samples"], v["seed"])
    probe = radial_probe(model, v["directions"], v["probe_radii"], v["seed"])
    write_verify_json(verify_report(est, probe), out / "verify.json")


HANDLERS = {"simulate": _simulate, "ocp": _ocp, "turnpike": _turnpike_cmd, "mpc": _mpc, "verify": _verify}


def run(subcommand: str, cfg: cfgmod.ExperimentConfig, out_dir) -> int:
    """Run one experiment and write its outputs; returns the exit status."""
    if subcommand not in HANDLERS:
        raise ValidationError([f"unknown subcommand '{subcommand}'"])
    cfgmod.check_subcommand(cfg, subcommand)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfgmod.build_model(cfg)
    status = HANDLERS[subcommand](cfg, model, out, cfg.data["output"]["emit_svg"])
    return status or 0


def _parser():
    p = argparse.ArgumentParser(prog="riphs", description="Thermodynamic port-Hamiltonian experiments.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON config file or bundled config name (fig4, fig5a, ...)")
    p.add_argument("--out", help="output directory (defaults to output.directory of the config)")
    p.add_argument("--dump-effective-config", action="store_true",
                   help="also write the fully defaulted config as effective_config.json")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    return p


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = cfgmod.parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out or cfg.data["output"]["directory"]
        if out is None:
            raise ValidationError(["output.directory: required when --out is not given"])
        if args.dump_effective_config:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "effective_config.json").write_text(cfg.to_json())
        status = run(args.subcommand, cfg, out)
    except ValidationError as exc:
        print("error: invalid config:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RiphsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if status == 3:
        print("warning: optimiser stopped before convergence", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
