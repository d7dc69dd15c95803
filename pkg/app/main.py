"""命令行入口"""
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.commands import SUBCOMMANDS
from app.config import settings
from app.utils.errors import ConfigError, SnnBenchError
from app.utils.logger import logger


class CliParser(argparse.ArgumentParser):
    """参数错误按配置错误处理（退出码 1）"""

    def error(self, message: str) -> None:
        raise ConfigError(message)


def build_parser() -> CliParser:
    parser = CliParser(
        prog="snn-bench",
        description=f"{settings.app_name} v{settings.app_version}",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in SUBCOMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    执行子命令

    Returns:
        退出码：0 成功，1 配置错误，2 运行时 / 数值错误
    """
    try:
        args = build_parser().parse_args(argv)
        logger.info(f"{settings.app_name} v{settings.app_version}: {args.command}")
        args.handler(args)
    except ValidationError as e:
        logger.error(f"配置无效: {e}")
        return 1
    except SnnBenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"未处理的异常: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
