"""命令行子命令"""
from app.commands import ablate, attack, bank, profile, report, train

SUBCOMMANDS = [train, bank, attack, ablate, report, profile]

__all__ = ["SUBCOMMANDS"]
