"""Training-data scheduling: the word -> phrase -> sentence stage schedule and
the two length-based curriculum baselines (discretized bins and a
square-root competence function)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .phrase import ORDER, Granularity, GranularitySample

logger = logging.getLogger(__name__)

STRATEGIES = ("pmg", "dcl", "ccl", "none")
_STAGE_INDEX = {g: i for i, g in enumerate(ORDER)}


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple[tuple[Granularity, int], ...]

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("schedule has no stages")
        for g, budget in self.stages:
            if budget <= 0:
                raise ConfigError(f"stage {g.value} has non-positive budget {budget}")

    @property
    def total_steps(self) -> int:
        return sum(b for _, b in self.stages)

    @property
    def boundaries(self) -> list[int]:
        """Cumulative step at which each stage after the first begins."""
        out, acc = [], 0
        for _, b in self.stages[:-1]:
            acc += b
            out.append(acc)
        return out

    def stage_span(self, step: int) -> tuple[int, Granularity, int, int]:
        """(stage index, granularity, start, end) of the stage holding ``step``."""
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} outside schedule of {self.total_steps} steps")
        start = 0
        for k, (g, b) in enumerate(self.stages):
            if step < start + b:
                return k, g, start, start + b
            start += b
        raise AssertionError("unreachable")


def pmg_schedule(word_steps: int, phrase_steps: int, sentence_steps: int) -> CurriculumSchedule:
    budgets = (word_steps, phrase_steps, sentence_steps)
    if any(b < 0 for b in budgets):
        raise ConfigError("stage budgets must be >= 0")
    if not any(budgets):
        raise ConfigError("all stage budgets are zero")
    return CurriculumSchedule(tuple((g, b) for g, b in zip(ORDER, budgets) if b > 0))


def stage_at(schedule: CurriculumSchedule, step: int) -> Granularity:
    return schedule.stage_span(step)[1]


def dcl_bins(corpus: Sequence, n_bins: int) -> list[list]:
    """Sort by source length (stable) and cut into near-equal contiguous bins."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not corpus:
        raise DataError("empty corpus")
    if n_bins > len(corpus):
        raise ValueError(f"n_bins {n_bins} exceeds corpus size {len(corpus)}")
    ordered = sorted(corpus, key=lambda s: len(s.source))
    size, extra = divmod(len(ordered), n_bins)
    bins, start = [], 0
    for k in range(n_bins):
        end = start + size + (1 if k < extra else 0)
        bins.append(ordered[start:end])
        start = end
    return bins


def dcl_phase(step: int, total: int, n_bins: int) -> int:
    """Index of the bin whose equal share of training contains ``step``."""
    if total <= 0:
        raise ValueError("total must be positive")
    return min(n_bins - 1, step * n_bins // total)


def ccl_competence(step: int, total: int, c0: float = 0.01) -> float:
    """Square-root competence: min(1, sqrt(step/total * (1 - c0^2) + c0^2))."""
    if total == 0:
        raise ValueError("total must be positive")
    if not 0.0 < c0 <= 1.0:
        raise ValueError("c0 must lie in (0, 1]")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return min(1.0, math.sqrt(step / total * (1.0 - c0 * c0) + c0 * c0))


@dataclass
class Batch:
    samples: list[GranularitySample]
    token_count: int
    granularity: Granularity


def _fill(order: Sequence[int], pool: Sequence[GranularitySample], budget: int) -> list[GranularitySample]:
    out, tokens = [], 0
    for i in order:
        s = pool[i]
        if out and tokens + s.num_tokens > budget:
            break
        out.append(s)
        tokens += s.num_tokens
    return out


class _Stream:
    """Without-replacement draws from one dataset, reshuffled every epoch."""

    def __init__(self, samples: Sequence[GranularitySample], seed: int, stage: int):
        self.samples = samples
        self.seed = seed
        self.stage = stage
        self.epoch = -1
        self.perm: np.ndarray = np.empty(0, dtype=np.int64)
        self.cursor = 0

    def _peek(self) -> GranularitySample:
        if self.cursor >= len(self.perm):
            self.epoch += 1
            rng = np.random.default_rng([self.seed, self.stage, self.epoch])
            self.perm = rng.permutation(len(self.samples))
            self.cursor = 0
        return self.samples[self.perm[self.cursor]]

    def take(self, budget: int) -> list[GranularitySample]:
        out, tokens = [], 0
        while True:
            s = self._peek()
            if out and tokens + s.num_tokens > budget:
                return out
            out.append(s)
            tokens += s.num_tokens
            self.cursor += 1


class BatchSampler:
    """Stateful batch source; query steps in increasing order.

    ``pmg`` and ``none`` walk the schedule's stages with one epoch-permuted
    stream per stage. ``dcl`` and ``ccl`` draw sentence samples from a
    length-ordered eligible prefix that widens with training progress.
    """

    def __init__(
        self,
        schedule: CurriculumSchedule,
        datasets: Mapping[Granularity, Sequence[GranularitySample]],
        token_budget: int,
        seed: int,
        strategy: str = "pmg",
        n_bins: int = 5,
        c0: float = 0.01,
        dcl_cumulative: bool = True,
        mix_tail: float = 0.0,
    ):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}")
        if token_budget < 1:
            raise ConfigError("token_budget must be >= 1")
        if not 0.0 <= mix_tail < 1.0:
            raise ConfigError("mix_tail must lie in [0, 1)")
        if not any(datasets.get(g) for g in ORDER):
            raise DataError("all datasets are empty")
        self.schedule = schedule
        self.datasets = datasets
        self.token_budget = token_budget
        self.seed = seed
        self.strategy = strategy
        self.c0 = c0
        self.dcl_cumulative = dcl_cumulative
        self.mix_tail = mix_tail
        self._streams: dict[Granularity, _Stream] = {}
        self._warned: set[Granularity] = set()
        self._last_step = -1
        if strategy in ("dcl", "ccl"):
            sentences = datasets.get(Granularity.SENTENCE) or []
            if not sentences:
                raise DataError(f"strategy {strategy} needs sentence-level data")
            self._by_length = sorted(sentences, key=lambda s: len(s.source))
            self._bin_ends = np.cumsum([len(b) for b in dcl_bins(self._by_length, n_bins)])
            self.n_bins = n_bins

    def _stream(self, g: Granularity) -> _Stream:
        if g not in self._streams:
            self._streams[g] = _Stream(self.datasets[g], self.seed, _STAGE_INDEX[g])
        return self._streams[g]

    def _resolve(self, g: Granularity) -> Granularity:
        """First non-empty dataset at or after ``g`` in granularity order."""
        for cand in ORDER[_STAGE_INDEX[g]:] + ORDER[:_STAGE_INDEX[g]]:
            if self.datasets.get(cand):
                if cand != g and g not in self._warned:
                    logger.warning("%s dataset is empty; serving %s samples instead", g.value, cand.value)
                    self._warned.add(g)
                return cand
        raise DataError("all datasets are empty")

    def stage(self, step: int) -> Granularity:
        """Granularity actually served at ``step`` (before tail mixing)."""
        if self.strategy in ("dcl", "ccl"):
            return Granularity.SENTENCE
        return self._resolve(stage_at(self.schedule, step))

    def batch(self, step: int) -> Batch:
        if step <= self._last_step:
            raise ValueError("BatchSampler steps must increase; build a new sampler to replay")
        self._last_step = step
        if self.strategy in ("dcl", "ccl"):
            return self._length_curriculum_batch(step)

        k, g, start, end = self.schedule.stage_span(step)
        if self.mix_tail > 0 and k + 1 < len(self.schedule.stages):
            tail_start = end - self.mix_tail * (end - start)
            if step >= tail_start:
                frac = (step - tail_start + 1) / (end - tail_start + 1)
                rng = np.random.default_rng([self.seed, 97, step])
                if rng.random() < frac:
                    g = self.schedule.stages[k + 1][0]
        g = self._resolve(g)
        samples = self._stream(g).take(self.token_budget)
        return Batch(samples, sum(s.num_tokens for s in samples), g)

    def _length_curriculum_batch(self, step: int) -> Batch:
        total = self.schedule.total_steps
        n = len(self._by_length)
        if self.strategy == "dcl":
            k = dcl_phase(step, total, self.n_bins)
            lo = 0 if self.dcl_cumulative or k == 0 else int(self._bin_ends[k - 1])
            hi = int(self._bin_ends[k])
        else:
            c = ccl_competence(step, total, self.c0)
            lo, hi = 0, max(1, min(n, math.ceil(c * n - 1e-9)))
        pool = self._by_length[lo:hi]
        rng = np.random.default_rng([self.seed, 3, step])
        samples = _fill(rng.permutation(len(pool)), pool, self.token_budget)
        return Batch(samples, sum(s.num_tokens for s in samples), Granularity.SENTENCE)


def sample_batch(
    schedule: CurriculumSchedule,
    step: int,
    datasets: Mapping[Granularity, Sequence[GranularitySample]],
    token_budget: int,
    seed: int,
    **options,
) -> Batch:
    """Batch served at ``step``, recomputed by replaying the sampler from 0."""
    sampler = BatchSampler(schedule, datasets, token_budget, seed, **options)
    for s in range(step):
        sampler.batch(s)
    return sampler.batch(step)
