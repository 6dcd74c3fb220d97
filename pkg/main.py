import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from termcolor import colored

from config.load_configs import ConfigError, RunConfig, load_config, save_config, with_overrides
from optimization.objective import PenaltyState, control_inner, penalized_objective, project_control, reduced_gradient
from solvers.adjoint_solver import AdjointSolveError, solve_adjoint
from solvers.problem import ThermistorProblem, mesh_from_config, problem_from_config
from solvers.state_solver import (
    ForwardSolveError,
    NewtonError,
    StateTrajectory,
    check_minimum_principle,
    load_trajectory,
    save_trajectory,
    solve_forward,
)
from tools.fem import AssemblyError, projected_gradient_magnitude
from tools.mesh import BoundaryTag, MeshError, mesh_measures
from tools.sparse import LinearSolverError
from tools.verify import NonFiniteEvaluationError, fd_directional
from tools.vtk_writer import write_vtk
from utils.logging import log_function, setup_logging
from utils.reporting import HistoryWriter, write_csv, write_json_report
from workflow_builders.continuation import solve_ocp

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(os.path.dirname(__file__), "config", "config.yaml")
GRADIENT_FAILURE_TOL = 1e-3
SOLVER_ERRORS = (ForwardSolveError, AdjointSolveError, NewtonError, LinearSolverError, NonFiniteEvaluationError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermistor",
        description="Optimal boundary-current heating of a thermistor workpiece",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=DEFAULT_CONFIG, help="YAML run configuration")
    common.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    common.add_argument("--scenario", choices=("free", "constrained"), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--log-file", default=None)

    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="optimize the heating current")
    run.add_argument("--dump-fields", choices=("none", "final", "all"), default=None)
    run.add_argument("--resume", default=None, help="trajectory cache whose control starts the optimizer")

    check = sub.add_parser("check-gradient", parents=[common], help="compare adjoint gradients with finite differences")
    check.add_argument("--directions", type=int, default=5)
    check.add_argument("--lam", type=float, action="append", default=None,
                       help="penalty parameter(s) to check; repeatable (default 0)")
    check.add_argument("--workers", type=int, default=4)

    sub.add_parser("mesh-info", parents=[common], help="print mesh measures and the boundary tag audit")
    return parser


def _vertex_fields(problem: ThermistorProblem, traj: StateTrajectory, adj: Any, k: int) -> Dict[str, np.ndarray]:
    s = problem.scaling
    fields = {
        "theta": problem.to_kelvin(traj.theta[k]),
        "phi": s.phi_ref * traj.phi[k],
        "grad_phi": s.phi_ref / s.L_ref * projected_gradient_magnitude(problem.mesh, traj.phi[k]),
    }
    if adj is not None:
        fields["vartheta"] = adj.vartheta[k]
        fields["psi"] = adj.psi[k]
    return fields


def write_probe_series(out_dir: Path, problem: ThermistorProblem, traj: StateTrajectory,
                       probes: Sequence[Sequence[float]]) -> List[Dict[str, Any]]:
    """Temperature at the vertex nearest to each probe and the current at one contact vertex."""
    written = []
    if len(probes):
        tree = cKDTree(problem.physical_mesh.vertices)
        distances, vertices = tree.query(np.asarray(probes, dtype=float))
        for i, (distance, vertex) in enumerate(zip(np.atleast_1d(distances), np.atleast_1d(vertices))):
            path = out_dir / f"probe_{i}.csv"
            rows = zip(traj.times, problem.to_kelvin(traj.theta[:, vertex]))
            write_csv(path, ("time", "theta"), rows)
            written.append({"path": path.name, "vertex": int(vertex), "distance": float(distance),
                            "location": problem.physical_mesh.vertices[vertex]})

    control_vertices = problem.dofmap.control_vertices
    centre = problem.physical_mesh.vertices[control_vertices].mean(axis=0)
    local = int(cKDTree(problem.physical_mesh.vertices[control_vertices]).query(centre)[1])
    rows = zip(traj.times, traj.control[:, local] * problem.scaling.u_ref)
    write_csv(out_dir / "control.csv", ("time", "u"), rows)
    written.append({"path": "control.csv", "vertex": int(control_vertices[local])})
    return written


def dump_fields(out_dir: Path, problem: ThermistorProblem, traj: StateTrajectory, adj: Any, mode: str) -> int:
    if mode == "none":
        return 0
    levels = range(traj.n_steps + 1) if mode == "all" else [traj.n_steps]
    for k in levels:
        write_vtk(out_dir / f"fields_{k:04d}.vtk", problem.physical_mesh, _vertex_fields(problem, traj, adj, k),
                  title=f"t = {traj.times[k]:.6g} s")
    return len(levels)


@log_function(logger)
def run(cfg: RunConfig, resume: Optional[str] = None) -> int:
    out_dir = Path(cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")

    problem = problem_from_config(cfg)
    params = cfg.objective
    control0 = None
    if resume:
        control0 = load_trajectory(resume).control
        if control0.shape != (problem.n_steps + 1, problem.n_control):
            raise ConfigError("--resume", f"cached control has shape {control0.shape}, "
                                          f"expected {(problem.n_steps + 1, problem.n_control)}")
        logger.info(f"Resuming from the control cached in {resume}")

    history = HistoryWriter(out_dir / "history.csv") if cfg.output.history else None
    report: Dict[str, Any] = {
        "scenario": cfg.scenario,
        "scaling": problem.scaling.groups(),
        "phi_ref": problem.scaling.phi_ref,
        "mesh": mesh_measures(problem.physical_mesh),
    }
    try:
        result = solve_ocp(problem, params, cfg.optimizer, cfg.newton, constrained=cfg.scenario == "constrained",
                           control0=control0, history_writer=history)
        adj = solve_adjoint(problem, result.trajectory, params, PenaltyState(result.lam), cfg.newton.linear_tol)
    except SOLVER_ERRORS as e:
        logger.error(f"Optimization failed: {e}")
        report.update(status="failed", error=str(e), error_type=type(e).__name__)
        write_json_report(out_dir / "report.json", report)
        print(colored(f"\nRun failed: {e}\nPartial artifacts in {out_dir}\n", "red"))
        return 1

    traj = result.trajectory
    save_trajectory(out_dir / "trajectory.bin", traj)
    minimum = check_minimum_principle(traj, problem.theta_l, problem.theta0)
    newton_iterations = [s.iterations for s in traj.newton_stats]
    report.update(
        status="ok",
        termination=result.termination,
        objective=result.breakdown,
        iterations=len(result.history),
        n_forward=result.n_forward,
        n_adjoint=result.n_adjoint,
        final_lambda=result.lam,
        stage_violations_K=result.stage_violations,
        max_violation_K=result.breakdown["max_violation_K"],
        max_temperature_K=float(problem.to_kelvin(traj.theta.max())),
        minimum_principle={
            "m_inf_K": float(problem.to_kelvin(minimum["m_inf"])),
            "min_found_K": float(problem.to_kelvin(minimum["min_found"])),
            "violated": minimum["violated"],
        },
        newton={"max_iterations": max(newton_iterations), "mean_iterations": float(np.mean(newton_iterations))},
        probes=write_probe_series(out_dir, problem, traj, cfg.output.probes),
        vtk_snapshots=dump_fields(out_dir, problem, traj, adj, cfg.output.dump_fields),
    )
    write_json_report(out_dir / "report.json", report)

    colour = "green" if cfg.scenario == "free" or result.breakdown["max_violation_K"] <= cfg.optimizer.violation_stop_K else "yellow"
    print(colored(f"\nScenario: {cfg.scenario} ({result.termination})", "cyan"))
    print(colored(f"Objective: {result.breakdown['penalized']:.10e} "
                  f"(tracking {result.breakdown['tracking']:.6e}, tikhonov {result.breakdown['tikhonov']:.6e})", "green"))
    print(colored(f"Max violation: {result.breakdown['max_violation_K']:.6e} K", colour))
    print(colored(f"Artifacts written to {out_dir}\n", "cyan"))
    return 0


def random_admissible_control(problem: ThermistorProblem, u_max: float, rng: np.random.Generator) -> np.ndarray:
    values = rng.uniform(0.2, 0.8, size=(problem.n_steps + 1, problem.n_control)) * u_max
    return project_control(values, u_max)


def interior_direction(problem: ThermistorProblem, rng: np.random.Generator) -> np.ndarray:
    h = rng.standard_normal((problem.n_steps + 1, problem.n_control))
    h[0] = 0.0
    h[-1] = 0.0
    return h


def gradient_errors(problem: ThermistorProblem, cfg: RunConfig, u: np.ndarray, directions: Sequence[np.ndarray],
                    lam: float, workers: int = 4) -> List[Dict[str, Any]]:
    """Relative mismatch between ⟨G, h⟩ and a central-difference sweep, per direction."""
    params, penalty = cfg.objective, PenaltyState(lam)
    traj = solve_forward(problem, u, cfg.newton)
    adj = solve_adjoint(problem, traj, params, penalty, cfg.newton.linear_tol)
    grad = reduced_gradient(problem, u, adj, params)

    def objective(candidate):
        return penalized_objective(problem, solve_forward(problem, candidate, cfg.newton), candidate, params, penalty)[0]

    def check(index, h):
        predicted = control_inner(problem, grad, h)
        if not np.any(h):
            return {"direction": index, "lambda": lam, "predicted": predicted, "fd": 0.0, "error": 0.0,
                    "note": "zero direction skipped"}
        fd = fd_directional(objective, u, h)
        error = abs(predicted - fd.estimate) / max(abs(fd.estimate), abs(predicted), np.finfo(float).tiny)
        return {"direction": index, "lambda": lam, "predicted": predicted, "fd": fd.estimate, "error": error,
                "plateau_width": fd.plateau_width, "note": "" if fd.plateau else "no eps plateau"}

    results = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {executor.submit(check, i, h): i for i, h in enumerate(directions)}
        for future in as_completed(future_to_index):
            index = future_to_index[future]
            results[index] = future.result()
    return [results[i] for i in sorted(results)]


@log_function(logger)
def check_gradient(cfg: RunConfig, n_directions: int = 5, lams: Sequence[float] = (0.0,), workers: int = 4) -> int:
    problem = problem_from_config(cfg)
    _, _, u_max = cfg.objective.scaled_targets(problem)
    rng = np.random.default_rng(cfg.seed)
    u = random_admissible_control(problem, u_max, rng)
    directions = [interior_direction(problem, rng) for _ in range(n_directions)]

    rows = []
    for lam in lams:
        rows.extend(gradient_errors(problem, cfg, u, directions, lam, workers))

    worst = max((r["error"] for r in rows), default=0.0)
    for r in rows:
        colour = "green" if r["error"] <= GRADIENT_FAILURE_TOL else "red"
        note = f"  [{r['note']}]" if r["note"] else ""
        print(colored(f"lambda={r['lambda']:.1e} direction {r['direction']}: adjoint {r['predicted']:.12e} "
                      f"fd {r['fd']:.12e} rel. error {r['error']:.3e}{note}", colour))

    out_dir = Path(cfg.output.directory)
    write_csv(out_dir / "gradient_check.csv", ("lambda", "direction", "adjoint", "fd", "rel_error"),
              [(r["lambda"], r["direction"], r["predicted"], r["fd"], r["error"]) for r in rows])
    if worst > GRADIENT_FAILURE_TOL:
        print(colored(f"\nGradient check failed: worst relative error {worst:.3e}\n", "red"))
        return 1
    print(colored(f"\nGradient check passed: worst relative error {worst:.3e}\n", "green"))
    return 0


def mesh_info(cfg: RunConfig) -> int:
    mesh = mesh_from_config(cfg.mesh)
    measures = mesh_measures(mesh)
    print(colored("\nMesh measures", "cyan"))
    for key, value in measures.items():
        if isinstance(value, dict):
            for tag, area in value.items():
                print(f"  area[{tag}]: {area:.10g} m^2")
        else:
            print(f"  {key}: {value:.10g}" if isinstance(value, float) else f"  {key}: {value}")
    print(colored("Boundary tag audit", "cyan"))
    for tag in BoundaryTag:
        faces = mesh.faces_with_tag(tag)
        colour = "red" if tag != BoundaryTag.INSULATED and len(faces) == 0 else "green"
        print(colored(f"  {tag.word}: {len(faces)} faces, {len(mesh.vertices_with_tag(tag))} vertices", colour))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = with_overrides(load_config(args.config), out=args.out, scenario=args.scenario, seed=args.seed,
                             dump_fields=getattr(args, "dump_fields", None))
    except ConfigError as e:
        print(colored(f"Configuration error: {e}", "red"), file=sys.stderr)
        return 2
    setup_logging(getattr(logging, cfg.log_level), args.log_file)

    try:
        if args.command == "run":
            return run(cfg, args.resume)
        if args.command == "check-gradient":
            return check_gradient(cfg, args.directions, tuple(args.lam or (0.0,)), args.workers)
        return mesh_info(cfg)
    except ConfigError as e:
        print(colored(f"Configuration error: {e}", "red"), file=sys.stderr)
        return 2
    except (MeshError, AssemblyError) as e:
        print(colored(f"Mesh error: {e}", "red"), file=sys.stderr)
        return 2
    except SOLVER_ERRORS as e:
        print(colored(f"Solver error: {e}", "red"), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
