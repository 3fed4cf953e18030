"""Command-line interface.

Subcommands: simulate, fit, cv, report. Global flags --seed, --threads
and --log-level apply to every subcommand. Exit codes: 0 success,
1 usage error, 2 data validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .errors import DataValidationError, FactorBlupError, NumericalError
from .io import config_get, parse_config, read_dataset, read_kinship, write_dataset

log = logging.getLogger("factorblup")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for CV replicates")
    common.add_argument("--log-level", default="INFO", help="logging level (DEBUG, INFO, ...)")

    parser = _Parser(prog="factorblup", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", parents=[common], help="generate a synthetic trial")
    p_sim.add_argument("--config", help="flat key=value simulation config")
    p_sim.add_argument("--preset", choices=["cimmyt-like"], help="built-in configuration")
    p_sim.add_argument("--out", required=True, help="output dataset directory")

    p_fit = sub.add_parser("fit", parents=[common], help="full-data factor fit and reports")
    p_fit.add_argument("--data", required=True, help="dataset directory")
    p_fit.add_argument("--target-timepoint", default="auto-heading",
                       help="alignment anchor: a timepoint value or 'auto-heading'")
    p_fit.add_argument("--out", required=True, help="output directory")

    p_cv = sub.add_parser("cv", parents=[common], help="cross-validated model comparison")
    p_cv.add_argument("--data", required=True, help="dataset directory")
    p_cv.add_argument("--plan", help="flat key=value CV plan config")
    p_cv.add_argument("--out", required=True, help="output directory")

    p_rep = sub.add_parser("report", parents=[common], help="re-emit CSVs from a saved report")
    p_rep.add_argument("--in", dest="in_dir", required=True, help="directory holding report.json")
    p_rep.add_argument("--out", required=True, help="output directory")
    return parser


def _sim_config_from_file(cfg: dict, seed_override):
    from .simulate import SimConfig, preset_cimmyt_like

    preset = cfg.get("preset")
    if preset == "cimmyt-like":
        base = preset_cimmyt_like(seed=config_get(cfg, "seed", int, 2015))
        if seed_override is not None:
            from dataclasses import replace

            base = replace(base, seed=seed_override)
        return base
    g = config_get(cfg, "g", int)
    s = config_get(cfg, "s", int)
    r = config_get(cfg, "r", int)
    tau = config_get(cfg, "tau", int)
    p = config_get(cfg, "p", int)
    seed = seed_override if seed_override is not None else config_get(cfg, "seed", int)
    split = config_get(cfg, "block_split", int, max(1, s // 2))
    strength_a = config_get(cfg, "strength_a", float, 0.85)
    strength_b = config_get(cfg, "strength_b", float, 0.8)
    cross_a = config_get(cfg, "crossover_a", float, strength_a)
    cross_b = config_get(cfg, "crossover_b", float, strength_b)
    switches = cfg.get("switch_timepoints", "")
    switch_idx = [int(v) for v in switches.split(",") if v.strip()]
    strengths = np.tile([strength_a, strength_b], (tau, 1))
    label_switches = {}
    if switch_idx:
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        for l in switch_idx:
            strengths[l] = [cross_a, cross_b]
            label_switches[l] = swap
    rho = tuple(float(v) for v in cfg.get("rho", "0.6,0.3").split(","))
    return SimConfig(
        g=g, s=s, r=r, tau=tau, p=p, seed=seed,
        factor_blocks=(tuple(range(split)), tuple(range(split, s))),
        strengths=strengths,
        rho=rho,
        h2_focal=config_get(cfg, "h2_focal", float, 0.6),
        h2_secondary=config_get(cfg, "h2_secondary", float, 0.8),
        label_switches=label_switches,
        n_families=config_get(cfg, "families", int, 0) or None,
        focal_mean=config_get(cfg, "focal_mean", float, 5.6),
    )


def _cmd_simulate(args) -> int:
    from .simulate import preset_cimmyt_like, simulate_trial

    if args.preset == "cimmyt-like" and not args.config:
        cfg_obj = preset_cimmyt_like(seed=args.seed if args.seed is not None else 2015)
    elif args.config:
        cfg_obj = _sim_config_from_file(parse_config(args.config), args.seed)
    else:
        raise DataValidationError("simulate needs --config or --preset")
    dataset, _ = simulate_trial(cfg_obj)
    write_dataset(dataset, args.out)
    log.info("wrote dataset (%d plots, %d traits, %d timepoints) to %s",
             dataset.design.n_plots, dataset.n_traits, dataset.design.n_timepoints, args.out)
    return 0


def _load_dataset_and_kinship(data_dir):
    from .kinship import genomic_relationship

    dataset = read_dataset(data_dir)
    kin_path = os.path.join(data_dir, "kinship.csv")
    if os.path.exists(kin_path):
        kinship = read_kinship(kin_path)
    elif dataset.markers is not None:
        kinship = genomic_relationship(dataset.markers, labels=dataset.design.genotype_ids)
    else:
        raise DataValidationError("dataset has neither markers.csv nor kinship.csv")
    return dataset, kinship


def _cmd_fit(args) -> int:
    import csv

    from .covest import heritability
    from .pipeline import full_data_artifacts, _fit_timepoint_covariances, _train_view

    dataset, _ = _load_dataset_and_kinship(args.data)
    target = args.target_timepoint
    if target != "auto-heading":
        target = float(target)
    artifacts = full_data_artifacts(dataset, target=target)
    os.makedirs(args.out, exist_ok=True)
    for name, fields in (
        ("loadings_series.csv", ["timepoint", "phase", "trait", "factor", "loading"]),
        ("factor_correlations.csv", ["timepoint_a", "factor_a", "timepoint_b", "factor_b", "correlation"]),
        ("trajectories.csv", ["genotype", "factor", "time", "value"]),
    ):
        with open(os.path.join(args.out, name), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in artifacts[name.removesuffix(".csv")]:
                w.writerow(row)
    view = _train_view(dataset, np.arange(dataset.design.n_genotypes))
    covs, _, _ = _fit_timepoint_covariances(dataset, view, range(dataset.design.n_timepoints))
    r = float(dataset.design.replicate_count)
    with open(os.path.join(args.out, "heritability.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timepoint", "trait", "h2"])
        for l, pair in enumerate(covs):
            for j, trait in enumerate(dataset.trait_labels):
                h2 = heritability(pair.sigma_G.values[j, j], pair.sigma_E.values[j, j], r)
                w.writerow([dataset.design.timepoints[l], trait, h2])
    for l, pair in enumerate(covs):
        tp = dataset.design.timepoints[l]
        np.savetxt(os.path.join(args.out, f"sigma_G_t{tp:g}.csv"), pair.sigma_G.values, delimiter=",")
        np.savetxt(os.path.join(args.out, f"sigma_E_t{tp:g}.csv"), pair.sigma_E.values, delimiter=",")
    log.info("fit artifacts written to %s (modal m* = %d)", args.out, artifacts["modal_m"])
    return 0


def _plan_from_config(cfg: dict, threads: int, seed_override):
    from .pipeline import CvPlan

    return CvPlan(
        n_replicates=config_get(cfg, "replicates", int, 100),
        train_fraction=config_get(cfg, "train_fraction", float, 2.0 / 3.0),
        scenarios=tuple(v.strip() for v in cfg.get("scenarios", "CV1,CV2").split(",")),
        stage_subsets=tuple(v.strip() for v in cfg.get("stages", "vegetative,vegetative+heading,all").split(",")),
        models=tuple(v.strip() for v in cfg.get("models", "uni,concat,pertime,pertime_noproc").split(",")),
        base_seed=seed_override if seed_override is not None else config_get(cfg, "base_seed", int, 0),
        cv2_variant=cfg.get("cv2_variant", "exact"),
        full_fit_artifacts=config_get(cfg, "artifacts", bool, True),
        threads=threads,
    )


def _cmd_cv(args) -> int:
    from .pipeline import emit_reports, run_cv

    dataset, kinship = _load_dataset_and_kinship(args.data)
    cfg = parse_config(args.plan) if args.plan else {}
    plan = _plan_from_config(cfg, args.threads, args.seed)
    report = run_cv(dataset, plan, kinship=kinship)
    paths = emit_reports(report, args.out)
    log.info("CV done: %d PA records, reports in %s", len(report.rows), args.out)
    for row in report.summary():
        log.info("  %s %s %s: mean PA %s (n=%d)",
                 row["model"], row["scenario"], row["stage"],
                 "nan" if row["mean"] is None else f"{row['mean']:.3f}", row["n"])
    return 0 if paths else 3


def _cmd_report(args) -> int:
    import json

    from .pipeline import emit_reports, report_from_dict

    path = os.path.join(args.in_dir, "report.json")
    if not os.path.exists(path):
        raise DataValidationError(f"{path} not found")
    with open(path) as fh:
        report = report_from_dict(json.load(fh))
    emit_reports(report, args.out)
    log.info("re-emitted report CSVs to %s", args.out)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "cv":
            return _cmd_cv(args)
        if args.command == "report":
            return _cmd_report(args)
        raise SystemExit(1)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except DataValidationError as exc:
        log.error("data validation failure: %s", exc)
        return 2
    except FactorBlupError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
