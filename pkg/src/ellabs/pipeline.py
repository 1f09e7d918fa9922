"""End-to-end runs: parse, build, simulate, export, plus the study modes.

Exit codes: 0 when the start set was covered (or a study mode completed),
1 for problem-file errors, 2 when the iteration cap was hit first, 3 when
the conic backend failed in an unexpected way.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .abstraction import build_abstraction
from .dynamics import linearize, lipschitz_bound, nominal_linearization_point
from .problem import Problem, ProblemError, config_hash, load_problem, parse_problem
from .report import (
    render_abstraction_figure,
    render_pareto_figure,
    render_single_transition_figure,
    render_value_grid_figure,
    value_grid,
    write_abstraction,
    write_json,
    write_pareto_csv,
    write_trajectory_csv,
    write_value_grid_csv,
)
from .runtime import ConcreteController, MaxSteps, NoisePolicy, Simulator
from .synthesis import Infeasible, LocalProblem, NumericalFailure, solve_local_problem

__all__ = ["Flags", "run_pipeline", "run_single_transition", "run_sweep"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CAP = 2
EXIT_BACKEND = 3


@dataclass
class Flags:
    out_dir: Path = Path("out")
    seed: int | None = None
    max_iters: int | None = None
    improve_budget: int | None = None
    lam: float | None = None
    trajectories: int | None = None
    grid_res: int | None = None
    dump_sdp: bool = False
    single_transition: bool = False
    sweep: list | None = None
    figures: bool = True
    tol_overrides: dict = field(default_factory=dict)


def _effective_problem(path, flags: Flags) -> Problem:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ProblemError("top level: expected a JSON object")
    overrides = {
        "seed": flags.seed,
        "max_iters": flags.max_iters,
        "improve_budget": flags.improve_budget,
        "lambda": flags.lam,
        "trajectories": flags.trajectories,
        "grid_res": flags.grid_res,
    }
    for key, val in overrides.items():
        if val is not None:
            raw[key] = val
    if flags.tol_overrides:
        tols = dict(raw.get("tolerances", {}))
        tols.update(flags.tol_overrides)
        raw["tolerances"] = tols
    return parse_problem(raw, name=Path(path).stem)


def _solve_transition(problem: Problem, lam: float, dump_path=None):
    tr = problem.transition
    ctrl = problem.control
    point = nominal_linearization_point(tr.center, ctrl.inputs, ctrl.noise, ctrl.u_anchor)
    model = linearize(ctrl.system, point)
    lp = LocalProblem(center=tr.center, target=tr.target, model=model,
                      lipschitz=lipschitz_bound(ctrl.system), inputs=ctrl.inputs,
                      noise=ctrl.noise, cost=ctrl.cost, lam=lam)
    return solve_local_problem(lp, tol=problem.tol, dump_path=dump_path)


def run_single_transition(problem: Problem, flags: Flags, out_dir: Path) -> int:
    if problem.transition is None:
        log.error("problem file has no 'transition' section")
        return EXIT_INPUT
    lam = problem.params.lam
    dump = out_dir / "single_transition_program.txt" if flags.dump_sdp else None
    try:
        sol = _solve_transition(problem, lam, dump_path=dump)
    except Infeasible:
        print(f"lambda={lam!r}: infeasible")
        write_pareto_csv(out_dir / "single_transition.csv", [(lam, None, None, "infeasible")])
        return EXIT_OK
    print(f"lambda={lam!r}: J_bound={sol.J_bound!r} volume={sol.volume!r}")
    write_pareto_csv(out_dir / "single_transition.csv",
                     [(lam, sol.J_bound, sol.volume, "optimal")])
    if flags.figures:
        render_single_transition_figure(out_dir / "single_transition.png", sol,
                                        problem.transition.target, problem.control.inputs)
    return EXIT_OK


def run_sweep(problem: Problem, flags: Flags, out_dir: Path, lams) -> int:
    if problem.transition is None:
        log.error("problem file has no 'transition' section")
        return EXIT_INPUT
    rows = []
    for lam in lams:
        try:
            sol = _solve_transition(problem, float(lam))
            rows.append((float(lam), sol.J_bound, sol.volume, "optimal"))
        except Infeasible:
            rows.append((float(lam), None, None, "infeasible"))
        log.info("sweep lambda=%s -> %s", lam, rows[-1][3])
    write_pareto_csv(out_dir / "pareto.csv", rows)
    if flags.figures:
        render_pareto_figure(out_dir / "pareto.png", rows)
    for lam, j, vol, status in rows:
        if status == "optimal":
            print(f"lambda={lam!r}: J_bound={j!r} volume={vol!r}")
        else:
            print(f"lambda={lam!r}: {status}")
    return EXIT_OK


def _run_reach_avoid(problem: Problem, flags: Flags, out_dir: Path) -> int:
    t0 = time.perf_counter()
    ctrl = problem.control
    dump_dir = None
    if flags.dump_sdp:
        dump_dir = out_dir / "sdp_dumps"
        dump_dir.mkdir(exist_ok=True)
    result = build_abstraction(ctrl, problem.params, tol=problem.tol, dump_dir=dump_dir)
    controller = ConcreteController(result.abstraction, result.values, problem.tol)
    sim = Simulator(system=ctrl.system, controller=controller, cost=ctrl.cost,
                    target_box=ctrl.target_box, noise_set=ctrl.noise)
    x0 = ctrl.initial_box.center
    v_x0 = controller.refine_value(x0) if result.covered else None

    trajectories = []
    failed = 0
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    if result.covered:
        for i in range(problem.trajectories):
            policy = NoisePolicy(mode=problem.trajectory_noise,
                                 seed=problem.params.seed * 1_000_003 + i)
            try:
                traj = sim.simulate(x0, policy, max_steps=problem.max_steps)
            except MaxSteps as exc:
                log.error("trajectory %d did not reach the target: %s", i, exc)
                failed += 1
                continue
            trajectories.append(traj)
            write_trajectory_csv(traj_dir / f"traj_{i:03d}.csv", traj, controller)

    axes, pts, vals = value_grid(result.abstraction, result.values,
                                 ctrl.system.domain_x, problem.grid_res)
    write_value_grid_csv(out_dir / "value_grid.csv", pts, vals)
    write_abstraction(out_dir / "abstraction.json", out_dir / "abstraction.dot",
                      result.abstraction, result.values)
    if flags.figures:
        render_value_grid_figure(out_dir / "value_grid.png", axes, vals)
        render_abstraction_figure(out_dir / "abstraction.png", result,
                                  ctrl.initial_box, ctrl.target_box,
                                  ctrl.obstacle_boxes, ctrl.system.domain_x,
                                  trajectories)

    manifest = {
        "name": problem.name,
        "config_hash": config_hash(problem.canonical),
        "seed": problem.params.seed,
        "covered": result.covered,
        "covering_cell": result.covering_id,
        "cells": result.abstraction.n_states,
        "transitions": result.abstraction.n_transitions,
        "iterations": result.iterations,
        "stats": result.stats,
        "v_x0": v_x0,
        "trajectories_written": len(trajectories),
        "trajectories_failed": failed,
        "realized_costs": [t.total_cost for t in trajectories],
        "wall_time_s": time.perf_counter() - t0,
        "version": __version__,
    }
    write_json(out_dir / "manifest.json", manifest)
    log.info("%s: covered=%s cells=%d transitions=%d v(x0)=%s",
             problem.name, result.covered, result.abstraction.n_states,
             result.abstraction.n_transitions, v_x0)
    return EXIT_OK if result.covered else EXIT_CAP


def run_pipeline(problem_path, flags: Flags) -> int:
    """Parse, run the requested mode and write artifacts under the out dir."""
    try:
        problem = _effective_problem(problem_path, flags)
    except ProblemError as exc:
        log.error("invalid problem file: %s", exc)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot load problem file: %s", exc)
        return EXIT_INPUT
    out_dir = Path(flags.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if flags.single_transition:
            return run_single_transition(problem, flags, out_dir)
        if flags.sweep is not None:
            return run_sweep(problem, flags, out_dir, flags.sweep)
        return _run_reach_avoid(problem, flags, out_dir)
    except NumericalFailure as exc:
        log.error("conic backend failure: %s", exc)
        return EXIT_BACKEND
