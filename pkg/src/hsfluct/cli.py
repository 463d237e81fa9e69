"""Command line entry points.

Every subcommand reads an INI-style config, runs one pipeline, and writes
CSV artifacts under the output directory. Exit codes: 0 when all declared
tolerances are met, 1 when a statistical check fails or a replica fails,
2 on hard errors (bad config, invalid arguments, solver abort).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import boltzmann as _b
from . import collision as _c
from . import dsmc as _d
from . import trajio as _io
from .config import ConfigError, load_config
from .dynamics import run
from .ensemble import ExperimentReport, ReportRow, replica_rng, write_csv
from .experiments import (REGISTRY, _design, _grid, _profile, run_experiment)
from .profiles import sample_configuration


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _finish(report: ExperimentReport) -> int:
    print(report.summary())
    return report.exit_code


def cmd_simulate(cfg) -> int:
    """One hard-sphere trajectory with conservation checks."""
    scal = cfg.scaling()
    rng = replica_rng(cfg.base_seed, 0)
    st = sample_configuration(scal, _profile(cfg), rng)
    traj = run(st, scal, t_end=cfg.horizon)
    os.makedirs(cfg.out, exist_ok=True)
    _io.write_trajectory(os.path.join(cfg.out, "trajectory.bin"), traj,
                         seed=cfg.base_seed)
    e0 = st.kinetic_energy()
    p0 = st.momentum()
    f = traj.final
    rows = [
        ReportRow("energy_drift", abs(f.kinetic_energy() - e0) / e0,
                  0.0, 1e-9),
        ReportRow("momentum_drift", float(np.abs(f.momentum() - p0).max()),
                  0.0, 1e-9),
    ]
    rep = ExperimentReport("simulate", rows)
    rep.meta["events"] = traj.n_events
    with open(os.path.join(cfg.out, "report.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(rep.to_csv())
    print(f"events={traj.n_events} particles={st.n}")
    return _finish(rep)


def cmd_ensemble(cfg) -> int:
    """Replica ensemble of empirical moments of the test family."""
    from .experiments import _family
    scal = cfg.scaling()
    prof = _profile(cfg)
    fam = _family(cfg)
    rows = []
    for k in range(cfg.replicas):
        rng = replica_rng(cfg.base_seed, k)
        st = sample_configuration(scal, prof, rng)
        traj = run(st, scal, t_end=cfg.horizon)
        s = traj.final
        rows.append([k] + [h(s.x, s.v).sum() / cfg.mu for h in fam])
    os.makedirs(cfg.out, exist_ok=True)
    names = ",".join(h.name.replace(",", ";") for h in fam)
    write_csv(os.path.join(cfg.out, "ensemble.csv"),
              "replica," + names, rows)
    print(f"wrote {cfg.replicas} replicas x {len(fam)} observables")
    return 0


def cmd_dsmc(cfg) -> int:
    """Stochastic collision solver moments on the config horizon."""
    times = np.linspace(0.0, cfg.horizon, cfg.study.snapshots)
    res = _d.dsmc_run(_profile(cfg), cfg.study.dsmc_particles, times,
                      replica_rng(cfg.base_seed, 0))
    os.makedirs(cfg.out, exist_ok=True)
    out = []
    for j, t in enumerate(times):
        v = res.snapshots[j]
        out.append((t, float(np.mean(v[:, 0])),
                    float(np.mean((v ** 2).sum(1))),
                    float(np.mean((v ** 2).sum(1) ** 2))))
    write_csv(os.path.join(cfg.out, "dsmc_moments.csv"),
              "time,mean_vx,mean_v2,mean_v4", out)
    print(f"collisions={res.n_collisions}")
    return 0


def cmd_fbe(cfg) -> int:
    """Fluctuation field ensemble around the kinetic solution."""
    from .fbe import spde_run
    grid = _grid(cfg)
    design = _design(cfg)
    f0 = _b.grid_density(grid, _profile(cfg))
    path = _b.solve_boltzmann(f0, cfg.horizon, cfg.study.solver_dt, design)
    times = np.linspace(0.0, cfg.horizon, cfg.study.snapshots)
    ens = spde_run(path, cfg.study.spde_replicas, cfg.horizon,
                   cfg.study.spde_dt, list(times),
                   replica_rng(cfg.base_seed, 0), design=design,
                   k_nodes=4000)
    nodes = grid.nodes()
    cols = {"vx": nodes[:, 0], "v2": (nodes ** 2).sum(1)}
    os.makedirs(cfg.out, exist_ok=True)
    out = []
    for j, t in enumerate(ens.times):
        row = [float(t)]
        for key in cols:
            vals = ens.pair(cols[key])[j]
            row += [float(vals.mean()), float(vals.var(ddof=1))]
        out.append(row)
    write_csv(os.path.join(cfg.out, "fbe_pairings.csv"),
              "time,mean_vx,var_vx,mean_v2,var_v2", out)
    print(f"replicas={cfg.study.spde_replicas} steps="
          f"{int(round(cfg.horizon / cfg.study.spde_dt))}")
    return 0


def cmd_trees(cfg) -> int:
    return _finish(run_experiment(cfg, "trees"))


def cmd_ldp(cfg) -> int:
    return _finish(run_experiment(cfg, "ldp-boltzmann"))


def cmd_experiment(cfg, name: str) -> int:
    return _finish(run_experiment(cfg, name))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hsfluct",
        description="hard-sphere fluctuation laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    names = ["simulate", "ensemble", "dsmc", "fbe", "trees", "ldp",
             "experiment"]
    for name in names:
        p = sub.add_parser(name)
        if name == "experiment":
            p.add_argument("name", choices=sorted(REGISTRY),
                           help="registered study name")
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config base seed")
        p.add_argument("--out", default=None,
                       help="override the output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "ensemble":
            return cmd_ensemble(cfg)
        if args.command == "dsmc":
            return cmd_dsmc(cfg)
        if args.command == "fbe":
            return cmd_fbe(cfg)
        if args.command == "trees":
            return cmd_trees(cfg)
        if args.command == "ldp":
            return cmd_ldp(cfg)
        return cmd_experiment(cfg, args.name)
    except (ConfigError, OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
