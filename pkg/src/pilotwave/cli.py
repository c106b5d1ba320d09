"""Command-line entry point.

::

    pilotwave verify                      # all invariant suites, exit 1 on any failure
    pilotwave detect --set seed=3         # coincidence experiment for configured pairs
    pilotwave scan --config scan.json --out results/
    pilotwave trajectories
    pilotwave ensemble

Artifacts go to ``--out``, else the config's ``output_dir``, else
``$PILOTWAVE_OUTPUT_DIR``, else ``./pilotwave-output``. Every run writes
``run.json`` with the fully resolved configuration and derived seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from pilotwave.config import ConfigError, load_config
from pilotwave.detection import (
    DetectorPair,
    box_probability,
    discrepancy_scan,
    placement_grid,
    screen_band_fraction,
    single_particle_anticoincidence,
    write_scan_csv,
)
from pilotwave.dynamics import integrate_batch, write_trajectory_csv
from pilotwave.ensembles import EnsembleKind, EnsembleSpec, build_ensemble, sample_density, write_manifest
from pilotwave.quantum_state import TwoParticleWaveFunction
from pilotwave.verification import (
    InvariantReport,
    continuity_residual,
    default_slice_trajectories,
    equivariance_test,
    min_pairwise_distance,
    newton_diagnostic,
    sum_conservation_report,
    symmetry_suite,
    write_reports,
)

OUTPUT_ENV_VAR = "PILOTWAVE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "pilotwave-output"
SUBCOMMANDS = ("trajectories", "ensemble", "detect", "scan", "verify")


def _fmt(v):
    return format(float(v), ".17g")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _wavefunction(cfg):
    return TwoParticleWaveFunction.from_geometry(cfg.slit_geometry(), cfg.physical_constants(), cfg.mode())


def _detection_times(cfg):
    t_detect = cfg.resolved_time(cfg.detectors.detection_time)
    t_end = cfg.resolved_time(cfg.ensembles.t_end)
    return t_detect, t_end, sorted({0.0, t_detect, t_end})


def _build_ensembles(cfg, w, sample_times, t_end):
    seeds = cfg.derived_seeds()
    specs = {
        "gibbs": EnsembleSpec(EnsembleKind.GIBBS, cfg.ensembles.gibbs_size, seeds["gibbs"]),
        "time": EnsembleSpec(
            EnsembleKind.TIME, cfg.ensembles.time_size, seeds["time"],
            cfg.ensembles.constraint_width, cfg.ensembles.independent_y,
        ),
    }
    integ = cfg.integrator_config()
    return {k: build_ensemble(w, s, t_end, integ, sample_times) for k, s in specs.items()}


def _ensemble_summary(ens, t_detect, cfg):
    return {
        "size": ens.spec.size,
        "seed": ens.spec.seed,
        "truncated_count": ens.truncated_count,
        "acceptance_rate": ens.diagnostics.acceptance_rate,
        "stats": ens.stats,
        "screen_band_fraction": screen_band_fraction(
            ens, t_detect, cfg.geometry.screen_y, cfg.detectors.screen_band_half_width
        ),
    }


# -- subcommands -------------------------------------------------------------------


def _cmd_trajectories(cfg, out):
    w = _wavefunction(cfg)
    t_end = cfg.resolved_time(cfg.trajectories.t_end)
    times = np.linspace(0.0, t_end, cfg.trajectories.n_samples)
    starts = np.array(cfg.trajectories.initial_points, dtype=float).reshape(-1, 4)
    trajs = integrate_batch(w, starts, t_end, cfg.integrator_config(), times)
    summary = []
    for i, tr in enumerate(trajs):
        name = f"trajectory_{i:03d}.csv"
        write_trajectory_csv(tr, out / name)
        summary.append({"file": name, "status": tr.status.value, "n_steps": tr.stats["n_steps"]})
    return {"t_end": t_end, "trajectories": summary}, 0


def _write_positions(path, positions):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["idx", "x1", "y1", "x2", "y2"])
        for i, row in enumerate(positions):
            writer.writerow([i] + [_fmt(v) for v in row])


def _cmd_ensemble(cfg, out):
    w = _wavefunction(cfg)
    if w.is_single_particle:
        raise ConfigError("ensembles need a two-particle statistics_mode", "statistics_mode")
    t_detect, t_end, times = _detection_times(cfg)
    ensembles = _build_ensembles(cfg, w, times, t_end)
    summary = {}
    for name, ens in ensembles.items():
        write_manifest(ens, out / f"{name}_initial.csv", out / f"{name}_manifest.json")
        _write_positions(out / f"{name}_final.csv", ens.positions_at(t_end))
        summary[name] = _ensemble_summary(ens, t_detect, cfg)
    return {"t_end": t_end, "ensembles": summary}, 0


def _configured_pairs(cfg):
    return [DetectorPair.from_bounds(p, q, cfg.detectors.allow_overlap) for p, q in cfg.detectors.pairs]


def _single_particle_detect(cfg, w, pairs, t_detect, out):
    n = cfg.ensembles.gibbs_size
    seed = cfg.derived_seeds()["single_particle"]
    header = ["xP_min", "xP_max", "xQ_min", "xQ_max", "trials", "coincidences",
              "p_rate", "p_quadrature", "q_rate", "q_quadrature"]
    rows = []
    for pair in pairs:
        res = single_particle_anticoincidence(w, n, pair, t_detect, seed, cfg.integrator_config())
        full = (-np.inf, np.inf)
        p_quad = box_probability(w, t_detect, [(pair.P.x_min, pair.P.x_max), full, full, full])
        q_quad = box_probability(w, t_detect, [(pair.Q.x_min, pair.Q.x_max), full, full, full])
        p_rate, q_rate = res.single_rates()
        rows.append([pair.P.x_min, pair.P.x_max, pair.Q.x_min, pair.Q.x_max, res.trials,
                     res.coincidences, p_rate, p_quad, q_rate, q_quad])
    with open(out / "detect.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([_fmt(v) if i not in (4, 5) else str(int(v)) for i, v in enumerate(r)])
    return {"detection_time": t_detect, "rows": [dict(zip(header, r)) for r in rows]}


def _scan_payload(rows, ensembles, t_detect, cfg):
    return {
        "detection_time": t_detect,
        "mode": cfg.detectors.mode,
        "rows": [
            {
                "P": [r.pair.P.x_min, r.pair.P.x_max],
                "Q": [r.pair.Q.x_min, r.pair.Q.x_max],
                "mirror_symmetric": r.pair.is_mirror_symmetric,
                "sqt": r.sqt,
                "gibbs_rate": r.gibbs_rate,
                "gibbs_se": r.gibbs_se,
                "time_rate": r.time_rate,
                "time_se": r.time_se,
                "discrepancy": r.discrepancy,
            }
            for r in rows
        ],
        "ensembles": {k: _ensemble_summary(e, t_detect, cfg) for k, e in ensembles.items()},
    }


def _cmd_detect(cfg, out):
    w = _wavefunction(cfg)
    pairs = _configured_pairs(cfg)
    t_detect, t_end, times = _detection_times(cfg)
    if w.is_single_particle:
        payload = _single_particle_detect(cfg, w, pairs, t_detect, out)
        _write_json(out / "detect.json", payload)
        return payload, 0
    ensembles = _build_ensembles(cfg, w, times, t_end)
    rows = discrepancy_scan(w, pairs, t_detect, ensembles["gibbs"], ensembles["time"], cfg.detectors.mode)
    write_scan_csv(rows, out / "detect.csv")
    payload = _scan_payload(rows, ensembles, t_detect, cfg)
    _write_json(out / "detect.json", payload)
    return payload, 0


def _cmd_scan(cfg, out):
    w = _wavefunction(cfg)
    if w.is_single_particle:
        raise ConfigError("scan needs a two-particle statistics_mode", "statistics_mode")
    t_detect, t_end, times = _detection_times(cfg)
    grid = placement_grid(cfg.scan.centers_p, cfg.scan.centers_q, cfg.scan.width,
                          cfg.detectors.allow_overlap)
    ensembles = _build_ensembles(cfg, w, times, t_end)
    rows = discrepancy_scan(w, grid, t_detect, ensembles["gibbs"], ensembles["time"], cfg.detectors.mode)
    write_scan_csv(rows, out / "scan.csv")
    payload = _scan_payload(rows, ensembles, t_detect, cfg)
    _write_json(out / "scan.json", payload)
    return payload, 0


def _continuity_reports(cfg, w, t_end, seed):
    n = cfg.verify.continuity_points
    times = np.linspace(0.0, t_end, 5)
    per = int(np.ceil(n / times.size))
    q = np.concatenate([sample_density(w, t, per, [seed, i])[0] for i, t in enumerate(times)])
    t = np.repeat(times, per)
    res = continuity_residual(w, q, t, node_epsilon=cfg.integrator.node_epsilon)
    reports = [InvariantReport("continuity_residual", int(q.shape[0]), float(res.max()),
                               cfg.verify.continuity_threshold)]
    # the O(h^2) law is only visible once truncation error dominates rounding
    coarse = continuity_residual(w, q, t, step=2e-2, node_epsilon=cfg.integrator.node_epsilon).max()
    fine = continuity_residual(w, q, t, step=1e-2, node_epsilon=cfg.integrator.node_epsilon).max()
    order = float(np.log2(coarse / fine))
    reports.append(InvariantReport("continuity_step_halving_order", int(q.shape[0]), abs(order - 2.0),
                                   0.25, details={"observed_order": order}))
    return reports


def _cmd_verify(cfg, out):
    w = _wavefunction(cfg)
    seeds = cfg.derived_seeds()
    integ = cfg.integrator_config()
    t_end = cfg.slit_geometry().arrival_time
    v = cfg.verify
    reports = list(symmetry_suite(w, v.symmetry_points, seeds["symmetry"], t_max=t_end))
    reports += _continuity_reports(cfg, w, t_end, seeds["continuity"])
    reports.append(equivariance_test(w, v.equivariance_size, t_end, v.equivariance_bins,
                                     seeds["equivariance"], integ, threshold=v.equivariance_threshold))

    times = np.linspace(0.0, t_end, 51)
    if not w.is_single_particle:
        slice_trajs = default_slice_trajectories(w, v.slice_trajectories, t_end, seeds["slice"], integ, times)
        rep = sum_conservation_report(slice_trajs, cfg.geometry.sigma_x, v.slice_threshold)
        reports.append(rep)
        reports.append(InvariantReport("x1_sign_preserved", rep.samples_tested,
                                       float(rep.details["sign_flips"]), 0.0))

    starts, _ = sample_density(w, 0.0, v.slice_trajectories, seeds["no_crossing"])
    trajs = [tr for tr in integrate_batch(w, starts, t_end, integ, times) if not tr.truncated]
    d_min = min_pairwise_distance(trajs)
    reports.append(InvariantReport("no_crossing", len(trajs), 0.0 if d_min > 0 else 1.0, 0.0,
                                   details={"min_distance": d_min}))

    starts, _ = sample_density(w, 0.0, v.newton_trajectories, seeds["newton"])
    newton_times = np.linspace(0.0, t_end, 201)
    worst, tested, skipped = 0.0, 0, 0
    for tr in integrate_batch(w, starts, t_end, integ, newton_times):
        rep = newton_diagnostic(tr, w, v.newton_checkpoints, node_epsilon=cfg.integrator.node_epsilon,
                                threshold=v.newton_threshold)
        worst = max(worst, rep.max_violation)
        tested += rep.samples_tested
        skipped += rep.details["skipped_near_node"]
    reports.append(InvariantReport("newton_quantum_force", tested, worst, v.newton_threshold,
                                   details={"skipped_near_node": skipped,
                                            "trajectories": v.newton_trajectories}))

    ok = write_reports(reports, out / "reports.jsonl")
    summary = {r.name: {"passed": r.passed, "max_violation": r.max_violation, "threshold": r.threshold}
               for r in reports}
    return {"reports": summary, "all_passed": ok}, 0 if ok else 1


_COMMANDS = {
    "trajectories": _cmd_trajectories,
    "ensemble": _cmd_ensemble,
    "detect": _cmd_detect,
    "scan": _cmd_scan,
    "verify": _cmd_verify,
}


# -- entry point ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="pilotwave", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                       help="dotted-path override, e.g. geometry.screen_y=30 (repeatable)")
        p.add_argument("--out", type=Path, help="artifact directory")
    return parser


def resolve_output_dir(cli_out, cfg):
    if cli_out is not None:
        return Path(cli_out)
    if cfg.output_dir is not None:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ENV_VAR, DEFAULT_OUTPUT_DIR))


def run(command, config_path=None, overrides=(), out=None):
    """Run one subcommand; returns the process exit status."""
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"pilotwave: config error: {exc}", file=sys.stderr)
        return 2
    out_dir = resolve_output_dir(out, cfg)
    cfg.output_dir = str(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result, status = _COMMANDS[command](cfg, out_dir)
    except ConfigError as exc:
        print(f"pilotwave: config error: {exc}", file=sys.stderr)
        return 2
    _write_json(
        out_dir / "run.json",
        {
            "command": command,
            "config": cfg.to_dict(),
            "seeds": cfg.derived_seeds(),
            "resolved": {
                "arrival_time": cfg.slit_geometry().arrival_time,
                "detection_time": cfg.resolved_time(cfg.detectors.detection_time),
                "ensemble_t_end": cfg.resolved_time(cfg.ensembles.t_end),
                "trajectory_t_end": cfg.resolved_time(cfg.trajectories.t_end),
            },
            "result": result,
            "exit_status": status,
        },
    )
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())
