"""profile 子命令：逐窗口 ASR 曲线与脉冲比例剖析"""
import argparse
from pathlib import Path

from app.commands.base import add_config_arguments, resolve_spec
from app.models.specs import ProfileSpec
from app.services.experiment import run_profile
from app.utils.logger import attach_run_log, detach_run_log


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("profile", help="逐窗口 ASR 与脉冲比例剖析")
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    spec = resolve_spec(ProfileSpec, args)
    sink = attach_run_log(Path(spec.output))
    try:
        run_profile(spec)
    finally:
        detach_run_log(sink)
