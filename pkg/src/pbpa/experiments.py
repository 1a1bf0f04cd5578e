"""Train-and-evaluate runs on the standard synthetic split.

The split is fixed: training scenes use seeds ``0 .. n_train-1`` and test
scenes start at seed 100000, so the two never share a scene. Run seeds vary
only the model (initialisation and batch order).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .model import Model, ModelConfig, evaluate_map, inspect_attention, plan_scene, train
from .synthdata import Dataset, GenConfig, generate_dataset

TEST_SEED = 100_000


@dataclass
class Split:
    train: Dataset
    test: Dataset


@dataclass
class RunResult:
    cfg: ModelConfig
    map: float
    class_ap: np.ndarray
    top1: float
    top5: float
    seconds: float
    model: Model


def standard_split(n_train: int = 2000, n_test: int = 500, gen: GenConfig = GenConfig()) -> Split:
    return Split(generate_dataset(0, n_train, gen), generate_dataset(TEST_SEED, n_test, gen))


def run(split: Split, cfg: Optional[ModelConfig] = None, **overrides) -> RunResult:
    """Train a fresh model on ``split.train`` and score it on ``split.test``.

    ``seconds`` covers planning, training and evaluation, not data generation.
    """
    cfg = replace(cfg or ModelConfig(), **overrides)
    t0 = time.perf_counter()
    model = Model(cfg)
    train(model, split.train, [plan_scene(s, cfg) for s in split.train])
    plans = [plan_scene(s, cfg) for s in split.test]
    mp, aps = evaluate_map(model, split.test, plans)
    top1 = top5 = float("nan")
    if cfg.attention_mode != "off":
        rep = inspect_attention(model, split.test, plans)
        top1, top5 = rep.top1, rep.top5
    return RunResult(cfg, mp, aps, top1, top5, time.perf_counter() - t0, model)
