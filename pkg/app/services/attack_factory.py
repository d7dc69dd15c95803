"""攻击工厂类"""
from typing import Dict
from app.services.attacks import BaseAttack, FgsmAttack, NoAttack, PgdAttack, TlbpAttack
from app.utils.errors import ConfigError
from app.utils.logger import logger


class AttackFactory:
    """攻击工厂，按名称返回攻击实例（攻击对象无状态，可跨线程共享）"""

    _attacks: Dict[str, BaseAttack] = {}

    @classmethod
    def create(cls, attack_name: str) -> BaseAttack:
        """
        创建攻击实例（单例模式）

        Args:
            attack_name: 攻击名称，如 fgsm, pgd, tlbp, none

        Returns:
            攻击实例

        Raises:
            ConfigError: 不支持的攻击
        """
        attack_name = attack_name.lower()

        if attack_name in cls._attacks:
            return cls._attacks[attack_name]

        if attack_name == "fgsm":
            attack = FgsmAttack()
        elif attack_name == "pgd":
            attack = PgdAttack()
        elif attack_name == "tlbp":
            attack = TlbpAttack()
        elif attack_name == "none":
            attack = NoAttack()
        else:
            raise ConfigError(f"不支持的攻击: {attack_name}")

        cls._attacks[attack_name] = attack
        logger.info(f"创建攻击实例: {attack_name}")

        return attack

    @classmethod
    def get_supported_attacks(cls) -> list:
        return ["fgsm", "pgd", "tlbp", "none"]
