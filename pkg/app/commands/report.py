"""report 子命令：结果转长表"""
import argparse

from app.services.report import write_report


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("report", help="把结果文件转换为便于绘图的长表 CSV")
    parser.add_argument("inputs", nargs="+", help="summary / ablation / profile 结果文件")
    parser.add_argument("--output", "-o", required=True, help="输出 CSV 路径")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    write_report(args.inputs, args.output)
