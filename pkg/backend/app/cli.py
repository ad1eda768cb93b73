"""
Command Line Interface

One subcommand per pipeline stage. Every run resolves its experiment config
(a file, or the built-in defaults for ``--problem``), writes its outputs under
``LSEM_OUTPUT_ROOT`` and prints a one-line JSON summary on stdout.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, TextIO

import structlog
import torch

from app.core.config import (
    ExperimentConfig,
    default_config,
    dump_config,
    get_settings,
    load_config,
    with_seed,
)
from app.core.error_handling import run_guarded
from app.core.logging_config import configure_logging
from app.services.scenarios import SCENARIOS
from app.workers import export, generation, inference, learning
from app.workers.common import RunPaths

logger = structlog.get_logger(__name__)


def _csv_list(cast: Callable):
    def parse(text: str) -> List:
        try:
            return [cast(item) for item in text.split(",") if item.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e

    return parse


def _add_experiment_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config file (JSON)")
    parser.add_argument("--problem", choices=["burgers", "kdv"], default="burgers",
                        help="built-in defaults to use when --config is absent")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--model", help="model file (default: output.model_path)")
    parser.add_argument("--data", help="dataset directory (default: output.data_dir)")
    parser.add_argument("--output", help="reports directory (default: output.reports_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsem", description="Latent space element method pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("gen-data", "run the full-order model for every training initial condition"),
        ("train", "train autoencoders and interaction blocks"),
        ("scaling", "time inference for growing element counts"),
    ]:
        _add_experiment_options(sub.add_parser(name, help=help_text))

    for name, help_text in [
        ("predict", "predict a scenario and write the snapshot file"),
        ("eval", "evaluate a scenario against the full-order model"),
        ("bench", "benchmark surrogate against full-order wall-clock"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_experiment_options(p)
        p.add_argument("--scenario", choices=SCENARIOS, default="reproductive")

    ablate = sub.add_parser("ablate-overlap", help="retrain at several overlap widths and noise gains")
    _add_experiment_options(ablate)
    ablate.add_argument("--overlaps", type=_csv_list(int), help="comma-separated overlap widths in points")
    ablate.add_argument("--beta", type=_csv_list(float), help="comma-separated noise gains")

    exp = sub.add_parser("export-csv", help="convert a snapshot file or report to CSV")
    exp.add_argument("input", type=Path)
    exp.add_argument("--output", type=Path, required=True)

    cfg = sub.add_parser("config", help="inspect experiment configs")
    cfg_sub = cfg.add_subparsers(dest="config_command", required=True)
    dump = cfg_sub.add_parser("dump-defaults", help="print the complete default config")
    dump.add_argument("--problem", choices=["burgers", "kdv"], default="burgers")
    validate = cfg_sub.add_parser("validate", help="check a config file")
    validate.add_argument("path", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config(args.problem)
    if args.seed is not None:
        config = with_seed(config, args.seed)
    return config


def _paths(args: argparse.Namespace, config: ExperimentConfig) -> RunPaths:
    return RunPaths.from_config(config, model=args.model, data=args.data, output=args.output)


def _emit(payload: Dict, out: TextIO) -> None:
    print(json.dumps(payload, sort_keys=True, default=float), file=out)


def cmd_gen_data(args, out):
    config = resolve_config(args)
    result = generation.generate_data(config, _paths(args, config))
    _emit(result["processing_info"], out)


def cmd_train(args, out):
    config = resolve_config(args)
    result = learning.train_model(config, _paths(args, config))
    _emit(result["processing_info"], out)


def cmd_predict(args, out):
    config = resolve_config(args)
    result = inference.predict_scenario(config, _paths(args, config), args.scenario)
    print(inference.report_json(result), file=out)


def cmd_eval(args, out):
    config = resolve_config(args)
    result = inference.evaluate_scenario(config, _paths(args, config), args.scenario)
    print(inference.report_json(result), file=out)


def cmd_bench(args, out):
    config = resolve_config(args)
    result = inference.benchmark_scenario(config, _paths(args, config), args.scenario)
    print(inference.report_json(result), file=out)


def cmd_scaling(args, out):
    config = resolve_config(args)
    result = inference.scaling_run(config, _paths(args, config))
    _emit({"points": result["manifest"]["points"]}, out)


def cmd_ablate(args, out):
    config = resolve_config(args)
    result = inference.ablation_run(config, _paths(args, config), args.overlaps, args.beta)
    _emit({"rows": result["manifest"]["rows"]}, out)


def cmd_export(args, out):
    _emit(export.export_csv(args.input, args.output), out)


def cmd_config(args, out):
    if args.config_command == "dump-defaults":
        print(dump_config(default_config(args.problem)), file=out)
    else:
        config = load_config(args.path)
        _emit({"valid": True, "problem": config.problem}, out)


COMMANDS: Dict[str, Callable] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "scaling": cmd_scaling,
    "ablate-overlap": cmd_ablate,
    "export-csv": cmd_export,
    "config": cmd_config,
}


def main(argv: Optional[List[str]] = None, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
    args = build_parser().parse_args(argv)
    out = out or sys.stdout
    settings = get_settings()
    configure_logging(settings)
    if settings.TORCH_NUM_THREADS:
        torch.set_num_threads(settings.TORCH_NUM_THREADS)
    logger.debug("command_started", command=args.command)
    return run_guarded(args.command, lambda: COMMANDS[args.command](args, out), err)
