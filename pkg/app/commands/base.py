"""子命令公共参数与配置解析"""
import argparse
from typing import Any, Dict, Type

from app.config import get_attack_preset, load_flat_config
from app.models.specs import SpecT, parse_spec
from app.utils.errors import ConfigError


def add_config_arguments(parser: argparse.ArgumentParser, preset: bool = True) -> None:
    """--config 配置文件、可重复的 --set key=value 覆盖项与 --preset 预设"""
    parser.add_argument("--config", "-c", default=None, help="扁平 key=value 配置文件")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="覆盖配置项，可重复",
    )
    if preset:
        parser.add_argument("--preset", default=None, help="超参数预设：full | desk")


def _preset_values(name: str, spec_cls: Type[SpecT]) -> Dict[str, Any]:
    """把预设映射为该配置模型认识的键"""
    try:
        preset = get_attack_preset(name)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    fields = spec_cls.model_fields
    values: Dict[str, Any] = {}
    for key in ("epsilon", "pgd_step", "pgd_iters", "t1", "beta"):
        if key in fields:
            values[key] = preset[key]
    if "th_ce" in fields:
        values["th_ce"] = preset["th_ce_grid"]
    if "bounds" in fields and fields["bounds"].annotation is str:
        values["bounds"] = f"{preset['v_min']}:{preset['v_max']}"
    return values


def resolve_spec(spec_cls: Type[SpecT], args: argparse.Namespace) -> SpecT:
    """
    合并预设、配置文件与覆盖项（后者优先）并校验

    Raises:
        ConfigError: 文件缺失、覆盖项格式错误或校验失败
    """
    raw: Dict[str, Any] = {}
    if getattr(args, "preset", None):
        raw.update(_preset_values(args.preset, spec_cls))
    raw.update(load_flat_config(args.config, args.overrides))
    return parse_spec(spec_cls, raw)
