import argparse
import logging
import sys
from dataclasses import replace

from phibayes import __version__
from phibayes.config import ExperimentConfig, load_config
from phibayes.errors import ConfigError, PhiBayesError
from phibayes.runner import resolve_jobs
from phibayes.studies import StudyOutcome, run_single_fit, run_study

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phibayes", description="Bayesian estimation with dual phi-divergences.")
    commands = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, help=help)
        command.add_argument("--config", required=True, help="path to the TOML configuration")
        command.add_argument("--seed", type=int, help="override study.master_seed")
        command.add_argument("--gamma", help="override divergence.gamma, a number or a preset name")
        command.add_argument("--output", help="override study.output_dir")
        command.add_argument("--jobs", type=int, help="worker processes, defaults to $PHIBAYES_JOBS or 1")
        command.add_argument("--quiet", action="store_true", help="log warnings and errors only")
        command.add_argument("--gnuplot", action="store_true", help="also write a plot.gp script")
        return command

    with_config("fit", "fit the configured model once per divergence")
    with_config("study", "run the configured study")
    with_config("duality-check", "compare the dual supremum with the direct divergence")
    with_config("validate-config", "validate the configuration and print its hash")
    commands.add_parser("version", help="print the version")
    return parser


def format_table(outcome: StudyOutcome) -> str:
    """
    Fixed-width table of the estimate reports of a fit
    """
    header = f"{'estimator':<20} {'gamma':>8} {'param':>8} {'point':>12} {'ci_low':>12} {'ci_high':>12} "
    header += f"{'mc_se':>10} {'ess':>10}"
    lines = [header, "-" * len(header)]
    for details in outcome.summary.get("details") or []:
        if not details:
            continue
        for report in details["estimates"]:
            for j, point in enumerate(report["point"]):
                low, high = report["ci"][j]
                low = "nan" if low is None else f"{low:.6g}"
                high = "nan" if high is None else f"{high:.6g}"
                lines.append(
                    f"{report['estimator']:<20} {details['gamma']:>8g} {j + 1:>8d} {point:>12.6g} {low:>12} "
                    f"{high:>12} {report['mc_se'][j]:>10.3g} {report['ess'][j]:>10.1f}"
                )
    return "\n".join(lines)


def format_duality(outcome: StudyOutcome) -> str:
    header = f"{'gamma':>8} {'theta':>8} {'sup':>14} {'divergence':>14} {'gap':>10} {'argmax':>12}"
    lines = [header, "-" * len(header)]
    for row in outcome.rows.to_dict("records"):
        if row["failed"]:
            lines.append(f"{row['label']}: {row['error']}")
            continue
        lines.append(
            f"{row['gamma']:>8g} {row['theta']:>8g} {row['sup_value']:>14.10g} {row['divergence']:>14.10g} "
            f"{row['gap']:>10.2e} {row['argmax']:>12.8g}"
        )
    return "\n".join(lines)


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, {"seed": args.seed, "gamma": args.gamma, "output": args.output})


def run(args: argparse.Namespace) -> int:
    if args.command == "version":
        print(__version__)
        return EXIT_OK

    cfg = _config(args)
    if args.command == "validate-config":
        print(f"{args.config}: valid, config_hash {cfg.config_hash()}")
        return EXIT_OK

    jobs = resolve_jobs(args.jobs)
    if args.command == "fit":
        logger.info(f"Fit for {cfg.model.family} is requested")
        outcome = run_single_fit(cfg, jobs, args.gnuplot)
        print(format_table(outcome))
        print(f"\nresults: {outcome.run_dir}")
        return EXIT_NUMERICAL if outcome.failures else EXIT_OK

    if args.command == "duality-check":
        if cfg.family().param_dim != 1:
            raise ConfigError("duality-check runs on one-parameter models")
        cfg = replace(cfg, study=replace(cfg.study, kind="DualitySanity"))
        outcome = run_study(cfg, jobs, args.gnuplot)
        print(format_duality(outcome))
    else:
        logger.info(f"Study {cfg.study.kind} is requested")
        outcome = run_study(cfg, jobs, args.gnuplot)
    print(f"\n{outcome.failures} of {len(outcome.responses)} replication(s) failed, results: {outcome.run_dir}")
    return EXIT_PARTIAL if outcome.failures else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except PhiBayesError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
