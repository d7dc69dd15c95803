"""对抗扰动生成"""
from app.services.attacks.base import BaseAttack, Generation, WindowStep
from app.services.attacks.fgsm import FgsmAttack, fgsm
from app.services.attacks.none import NoAttack
from app.services.attacks.pgd import PgdAttack, pgd
from app.services.attacks.tlbp import TlbpAttack, tlbp, window_bounds

__all__ = [
    "BaseAttack",
    "FgsmAttack",
    "Generation",
    "NoAttack",
    "PgdAttack",
    "TlbpAttack",
    "WindowStep",
    "fgsm",
    "pgd",
    "tlbp",
    "window_bounds",
]
