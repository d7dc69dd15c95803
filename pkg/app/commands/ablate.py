"""ablate 子命令：A-MPR 组件与截断区间消融"""
import argparse
from pathlib import Path

from app.commands.base import add_config_arguments, resolve_spec
from app.models.specs import AblationSpec
from app.services.experiment import run_ablation_ampr
from app.utils.logger import attach_run_log, detach_run_log


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("ablate", help="A-MPR 消融实验")
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    spec = resolve_spec(AblationSpec, args)
    sink = attach_run_log(Path(spec.output))
    try:
        run_ablation_ampr(spec)
    finally:
        detach_run_log(sink)
