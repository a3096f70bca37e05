"""Command-line entry points: plan, track, sweep, avoid, disturb."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness
from .config import load_setup
from .harness import (AVOID_TARGET, ClosedLoopLog, SimConfig, plan_and_densify,
                      run_disturbance, run_sweep, run_tracking)
from .io import write_csv
from .trajopt import PlanningError, Trajectory, trajectory_energy


def write_plan_csv(traj: Trajectory, path) -> None:
    header = (["t"] + [f"q{i}" for i in range(1, 5)]
              + [f"qd{i}" for i in range(1, 5)]
              + [f"tau{i}" for i in range(2, 5)])
    rows = np.column_stack([traj.t, traj.q, traj.qd, traj.tau])
    write_csv(path, header, rows)


def _common(sub):
    sub.add_argument("--config", default=None, help="flat key = value config file")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=0,
                     help="reserved; nothing is randomized by default")
    sub.add_argument("--paper-literal-deft", action="store_true",
                     help="use the printed position update without the velocity term")


def _prepare(args):
    setup = load_setup(args.config)
    os.makedirs(args.out, exist_ok=True)
    return setup


def cmd_plan(args) -> int:
    setup = _prepare(args)
    cfg = setup.colloc_config(paper_literal_deft=args.paper_literal_deft)
    traj, _ = plan_and_densify(cfg, setup.robot)
    write_plan_csv(traj, os.path.join(args.out, "plan.csv"))
    print(f"plan: converged in {traj.info['iterations']} iterations, "
          f"energy {trajectory_energy(traj):.4f} J, "
          f"terminal EE error {traj.info['terminal_ee_error']:.2e} m")
    return 0


def cmd_track(args) -> int:
    setup = _prepare(args)
    cfg = setup.colloc_config(paper_literal_deft=args.paper_literal_deft)
    traj, dense = plan_and_densify(cfg, setup.robot)
    write_plan_csv(traj, os.path.join(args.out, "plan.csv"))
    log = run_tracking(dense, setup.mpc, setup.sim, setup.robot,
                       obstacles=setup.obstacles, colloc=cfg)
    log.write(os.path.join(args.out, "log.csv"))
    err = np.abs(log.ee_err[-1])
    print(f"track: terminal EE error ({err[0]:.4f}, {err[1]:.4f}) m, "
          f"planned energy {trajectory_energy(traj):.4f} J, "
          f"closed-loop energy {log.energy[-1]:.4f} J")
    return 0


def cmd_sweep(args) -> int:
    setup = _prepare(args)
    result = run_sweep(setup.sweep_r2, setup.sweep_T, setup.robot,
                       parallel=setup.sweep_parallel)
    result.write(os.path.join(args.out, "heatmap.csv"))
    n_ok = int(np.sum(result.converged))
    print(f"sweep: {n_ok}/{result.converged.size} cells converged")
    return 0


def cmd_avoid(args) -> int:
    setup = _prepare(args)
    obstacle = setup.obstacles[0] if setup.obstacles else harness.AVOID_OBSTACLE
    target = setup.colloc_overrides.get("target", AVOID_TARGET)
    (traj_off, log_off), (traj_on, log_on) = harness.run_avoidance(
        setup.robot, obstacle=obstacle, target=target)
    write_plan_csv(traj_off, os.path.join(args.out, "plan_off.csv"))
    write_plan_csv(traj_on, os.path.join(args.out, "plan_on.csv"))
    log_off.write(os.path.join(args.out, "log_off.csv"))
    log_on.write(os.path.join(args.out, "log_on.csv"))
    print(f"avoid: min margin without constraint {log_off.min_margin.min():.4f} m, "
          f"with constraint {log_on.min_margin.min():.4f} m")
    return 0


def cmd_disturb(args) -> int:
    setup = _prepare(args)
    cfg = setup.colloc_config(paper_literal_deft=args.paper_literal_deft)
    traj, dense = plan_and_densify(cfg, setup.robot)
    write_plan_csv(traj, os.path.join(args.out, "plan.csv"))
    log = run_disturbance(dense, setup.robot, mpc_cfg=setup.mpc,
                          momentum=setup.disturb_momentum,
                          time=setup.disturb_time,
                          normal=setup.disturb_normal)
    log.write(os.path.join(args.out, "log.csv"))
    err = np.abs(log.ee_err[-1])
    peak = float(np.max(np.linalg.norm(log.ee_err, axis=1)))
    print(f"disturb: peak EE error {peak:.4f} m, "
          f"terminal EE error ({err[0]:.4f}, {err[1]:.4f}) m")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brachiation",
        description="Swing planning and MPC tracking for a four-link brachiation robot")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("plan", cmd_plan, "plan one swing and write plan.csv"),
        ("track", cmd_track, "plan, then track with MPC; writes plan.csv and log.csv"),
        ("sweep", cmd_sweep, "energy sweep over arm ratio and swing time"),
        ("avoid", cmd_avoid, "obstacle avoidance with the constraint off and on"),
        ("disturb", cmd_disturb, "tracking with an impulsive disturbance"),
    ):
        sub = subs.add_parser(name, help=help_)
        _common(sub)
        sub.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
