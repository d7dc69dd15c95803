"""空攻击（δ = 0），作为基线"""
from app.engine.tensor import Tensor
from app.models.configs import AttackConfig
from app.services.attacks.base import BaseAttack, Generation
from app.snn.model import SnnModel


class NoAttack(BaseAttack):
    def __init__(self):
        super().__init__("none")

    def generate(self, model: SnnModel, x: Tensor, label: int, cfg: AttackConfig, bank=None) -> Generation:
        return Generation(delta=self._zeros(x))
