"""attack 子命令：执行攻击网格"""
import argparse
from pathlib import Path

from app.commands.base import add_config_arguments, resolve_spec
from app.models.specs import ExperimentSpec
from app.services.experiment import run_experiment
from app.utils.logger import attach_run_log, detach_run_log


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("attack", help="FGSM / PGD / TLBP 攻击网格")
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    spec = resolve_spec(ExperimentSpec, args)
    sink = attach_run_log(Path(spec.output))
    try:
        run_experiment(spec)
    finally:
        detach_run_log(sink)
