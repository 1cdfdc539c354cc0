"""Training loop tying the batch scheduler to the CMLM optimizer."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .curriculum import BatchSampler, CurriculumSchedule
from .metrics import bleu
from .natmodel import (ModelCheckpoint, ModelConfig, OptimizerConfig, decode_all, init_model,
                       make_train_batch, train_step)
from .phrase import Granularity, GranularitySample

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    token_budget: int = 1024
    strategy: str = "pmg"
    n_bins: int = 5
    c0: float = 0.01
    dcl_cumulative: bool = True
    mix_tail: float = 0.0
    valid_every: int = 500
    decode_iterations: int = 10
    length_beam: int = 3
    length_prior: bool = True


def train(
    datasets: Mapping[Granularity, Sequence[GranularitySample]],
    schedule: CurriculumSchedule,
    model_config: ModelConfig,
    opt: OptimizerConfig,
    cfg: TrainConfig,
    seed: int,
    valid: Sequence[tuple[Sequence[int], Sequence[int]]] = (),
    log: Callable[[str], None] | None = None,
) -> ModelCheckpoint:
    """Train for ``schedule.total_steps`` updates and return the best checkpoint.

    With a validation set, sentence BLEU is measured every ``valid_every``
    steps and at the end; the highest-scoring snapshot is returned (later
    snapshots win ties). Without one, the final state is returned.
    """
    log = log or logger.info
    ckpt = init_model(model_config, seed)
    sampler = BatchSampler(schedule, datasets, cfg.token_budget, seed, strategy=cfg.strategy,
                           n_bins=cfg.n_bins, c0=cfg.c0, dcl_cumulative=cfg.dcl_cumulative,
                           mix_tail=cfg.mix_tail)
    best: ModelCheckpoint | None = None
    stage = None
    total = schedule.total_steps
    for step in range(total):
        batch = sampler.batch(step)
        if batch.granularity != stage:
            stage = batch.granularity
            log(f"step={step} stage={stage.value}")
        rng = np.random.default_rng([seed, 5, step])
        tb = make_train_batch([(s.source, s.target) for s in batch.samples], rng)
        train_step(ckpt, tb, opt, dropout_seed=int(rng.integers(2**62)))
        done = step + 1
        if valid and (done % cfg.valid_every == 0 or done == total):
            score = validate(ckpt, valid, cfg)
            log(f"step={done} valid_bleu={score:.2f}")
            if best is None or score >= best.valid_bleu:
                ckpt.valid_bleu = score
                best = snapshot(ckpt)
    return best if best is not None else ckpt


def validate(ckpt: ModelCheckpoint, valid, cfg: TrainConfig) -> float:
    hyps = decode_all(ckpt, [list(s) for s, _ in valid], cfg.decode_iterations, cfg.length_beam,
                      length_prior=cfg.length_prior)
    return bleu(hyps, [list(t) for _, t in valid])


def snapshot(ckpt: ModelCheckpoint) -> ModelCheckpoint:
    with torch.no_grad():
        return copy.deepcopy(ckpt)
