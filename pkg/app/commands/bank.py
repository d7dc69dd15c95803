"""make-bank 子命令：离线生成膜电位库"""
import argparse

from app.commands.base import add_config_arguments, resolve_spec
from app.models.specs import BankSpec
from app.services.ampr import build_bank, save_bank
from app.services.datasets import load_dataset
from app.snn.serialization import load_model


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("make-bank", help="生成 A-MPR 膜电位库")
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    spec = resolve_spec(BankSpec, args)
    model = load_model(spec.model)
    bank = build_bank(model, load_dataset(spec, "train"), spec.to_ampr_config())
    save_bank(bank, spec.output)
