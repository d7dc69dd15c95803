"""train 子命令：STBP 训练受害模型或替代模型"""
import argparse

import numpy as np
import pandas as pd

from app.commands.base import add_config_arguments, resolve_spec
from app.models.specs import TrainSpec
from app.services.datasets import load_dataset
from app.services.results_writer import provenance_lines, write_frame
from app.services.trainer import train_stbp, train_surrogate
from app.snn.architectures import ArchitectureFactory, build_model
from app.snn.model import predict_batch
from app.snn.serialization import load_model, save_model
from app.utils.logger import logger


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="STBP 训练 SNN")
    add_config_arguments(parser, preset=False)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> None:
    spec = resolve_spec(TrainSpec, args)
    train = load_dataset(spec, "train")
    cfg = spec.to_train_config()

    if spec.surrogate_of:
        victim = load_model(spec.surrogate_of)
        model = train_surrogate(victim, train, cfg)
        history = []
    else:
        architecture = ArchitectureFactory.create(
            spec.arch, train.sample_shape, train.num_classes, spec.timesteps,
            tau=spec.tau, v_th=spec.v_th, surrogate_width=spec.surrogate_width,
        )
        model, history = train_stbp(build_model(architecture, spec.seed), train, cfg)

    path = save_model(model, spec.output)
    if history:
        write_frame(
            path.with_suffix(".history.csv"),
            pd.DataFrame([record.model_dump() for record in history]),
            provenance_lines(spec),
        )

    test = load_dataset(spec, "test")
    if len(test) == 0:
        logger.warning("测试集为空，跳过准确率统计")
        return
    preds, _ = predict_batch(model, test.images)
    logger.info(f"测试集准确率: {float(np.mean(preds == test.labels)):.4f} ({len(test)} 个样本)")
