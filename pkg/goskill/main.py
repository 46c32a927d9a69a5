"""goskill command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from goskill.config.settings import FULL_BUDGET, RunConfig, Settings
from goskill.errors import ConfigError, GoSkillError
from goskill.services.logger import configure_logging
from goskill.services.pipeline import cmd_baseline, cmd_collect, cmd_eval, cmd_finetune, cmd_run
from goskill.services.reporting import cmd_report

LOGGER = logging.getLogger(__name__)

AGENTS = ("goskill", "expert", "medium", "random")


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with 1 like every other configuration error."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = _ArgumentParser(description="Goal-oriented skill extraction and skill-based policies")
    parser.add_argument(
        "--config",
        default=None,
        help="Path to settings JSON file (defaults to $GOSKILL_CONFIG or config/settings.json)",
    )
    parser.add_argument("--debug", action="store_true", help="Enable verbose logging")

    common = _ArgumentParser(add_help=False)
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration value, e.g. skill.horizon=5 (repeatable)",
    )
    common.add_argument("--seed", type=int, default=None, help="Run seed")
    common.add_argument("--run-id", default=None, help="Run directory name under the run root")

    sub = parser.add_subparsers(dest="command", required=True)

    collect = sub.add_parser("collect", parents=[common], help="Generate the offline dataset")
    collect.add_argument("--preset", choices=("near-optimal", "sub-optimal"), default=None)
    collect.add_argument("--out", default=None, help="Dataset directory (defaults to paths.dataset_dir)")

    run = sub.add_parser("run", parents=[common], help="Extraction, enhancement, policy learning and evaluation")
    run.add_argument("--ablate", default=None, help="Ablation preset: no-rg, no-vq, ae, no-focal, no-resample")
    run.add_argument("--iterations", default=None, help="extraction,enhancement,policy iteration counts")
    run.add_argument("--full-budget", action="store_true", help="Use the full iteration budget")
    run.add_argument("--parallel", action="store_true", help="Run enhancement and policy learning concurrently")

    evaluate = sub.add_parser("eval", parents=[common], help="Evaluate a trained run or a scripted agent")
    evaluate.add_argument("run_dir", nargs="?", default=None)
    evaluate.add_argument("--agent", choices=AGENTS, default="goskill")

    finetune = sub.add_parser("finetune", parents=[common], help="Fine-tune a pretrained run on held-out tasks")
    finetune.add_argument("pretrain_dir")
    finetune.add_argument("--baseline", default=None, help="Flat baseline run directory to fine-tune for comparison")
    finetune.add_argument("--iterations", type=int, default=None)

    report = sub.add_parser("report", help="Tables and figures across run directories")
    report.add_argument("run_dirs", nargs="+")
    report.add_argument("--out", default="reports", help="Output directory")

    baseline = sub.add_parser("baseline", parents=[common], help="Train and evaluate the flat baseline")
    baseline.add_argument("--iterations", type=int, default=None)

    return parser.parse_args(argv)


def _parse_iterations(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--iterations expects three integers, got '{text}'") from exc
    if len(values) != 3:
        raise ConfigError(f"--iterations expects extraction,enhancement,policy, got '{text}'")
    return values


def _build_config(args: argparse.Namespace) -> RunConfig:
    settings = Settings(config_path=args.config) if args.config else Settings()
    config = settings.run_config
    overrides = list(getattr(args, "overrides", []))
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if args.command == "collect" and args.preset:
        overrides.append(f'data.preset="{args.preset}"')
    if args.command == "run":
        if args.full_budget:
            overrides.extend(
                f"schedule.{key}={value}"
                for key, value in zip(("extraction_iters", "enhancement_iters", "policy_iters"), FULL_BUDGET)
            )
        if args.iterations:
            extraction, enhancement, policy = _parse_iterations(args.iterations)
            overrides.extend(
                [
                    f"schedule.extraction_iters={extraction}",
                    f"schedule.enhancement_iters={enhancement}",
                    f"schedule.policy_iters={policy}",
                ]
            )
        if args.parallel:
            overrides.append("schedule.parallel=true")
    if args.command == "finetune" and args.iterations is not None:
        overrides.append(f"finetune.iterations={args.iterations}")
    if args.command == "baseline" and args.iterations is not None:
        overrides.append(f"baseline.iterations={args.iterations}")
    if overrides:
        config = config.with_overrides(overrides)
    if args.command == "run" and args.ablate:
        config = config.with_ablation(args.ablate)
    return config


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "report":
        summary = cmd_report([Path(p) for p in args.run_dirs], Path(args.out))
        print(f"Report written to {summary.out_dir} ({len(summary.gaps)} gaps)")
        return 0

    config = _build_config(args)
    if args.command == "collect":
        manifest = cmd_collect(config, args.out)
        print(manifest.to_text(), end="")
    elif args.command == "run":
        manifest = cmd_run(config, args.run_id)
        print(f"Run {manifest.run_id}: {manifest.status.value}")
    elif args.command == "eval":
        report = cmd_eval(config, args.run_dir, args.agent, args.run_id)
        print(report.summary_text(), end="")
    elif args.command == "finetune":
        manifest = cmd_finetune(config, args.pretrain_dir, args.baseline, args.run_id)
        print(f"Fine-tune {manifest.run_id}: {manifest.status.value}")
    elif args.command == "baseline":
        manifest = cmd_baseline(config, args.run_id)
        print(f"Baseline {manifest.run_id}: {manifest.status.value}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    configure_logging(debug=args.debug)
    try:
        return _dispatch(args)
    except GoSkillError as exc:
        LOGGER.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover - CLI entry
    sys.exit(main())
