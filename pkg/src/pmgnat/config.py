"""Run configuration: an INI-style file of ``key = value`` lines in sections.

Values are Python literals (numbers, booleans, quoted or bare strings,
lists). Unknown sections or keys are rejected. Every field has a default, so
an empty file is a valid desk-scale configuration on the bundled toy corpus.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class PathsConfig:
    train_src: str = ""
    train_tgt: str = ""
    valid_src: str = ""
    valid_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    output_dir: str = "runs/default"


@dataclass
class BpeConfig:
    merges: int = 500          # full scale: 32K merge operations
    joint: bool = True
    max_length: int = 256


@dataclass
class AlignConfig:
    iterations: int = 5
    heuristic: str = "grow-diag-final"


@dataclass
class PhraseConfig:
    max_len: int = 6
    threshold: float = 0.05
    both_directions: bool = False
    keep_ratio: float = 1.0
    quality_scores: str = ""   # optional "key \t score" TSV; lexical scorer otherwise


@dataclass
class ScheduleConfig:
    strategy: str = "pmg"
    word_steps: int = 500      # full scale: 50K
    phrase_steps: int = 500    # full scale: 50K
    sentence_steps: int = 2000  # full scale: 200K
    token_budget: int = 512    # full scale: ~128K tokens
    c0: float = 0.01
    n_bins: int = 5
    dcl_cumulative: bool = True
    mix_tail: float = 0.0


@dataclass
class ModelSection:
    embed_dim: int = 64
    hidden_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 2
    max_length: int = 64
    dropout: float = 0.2
    label_smoothing: float = 0.1
    length_loss_weight: float = 0.1
    dtype: str = "float64"


@dataclass
class OptimConfig:
    lr: float = 2e-3           # full scale: 5e-4
    warmup: int = 100          # full scale: 10K
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8


@dataclass
class DecodeConfig:
    iterations: int = 10
    length_beam: int = 3
    length_prior: bool = True  # add log P(length) to the candidate score


@dataclass
class EvalConfig:
    length_bins: list = field(default_factory=lambda: [0, 5, 10, "inf"])
    resamples: int = 1000


@dataclass
class RunSection:
    seed: int = 1
    valid_every: int = 500


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    bpe: BpeConfig = field(default_factory=BpeConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    phrase: PhraseConfig = field(default_factory=PhraseConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimConfig = field(default_factory=OptimConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)
    base_dir: str = "."

    def validate(self) -> "RunConfig":
        from .align import HEURISTICS
        from .curriculum import STRATEGIES

        checks = [
            (self.bpe.merges >= 0, "bpe.merges must be >= 0"),
            (self.bpe.max_length >= 1, "bpe.max_length must be >= 1"),
            (self.align.iterations >= 1, "align.iterations must be >= 1"),
            (self.align.heuristic in HEURISTICS, f"align.heuristic must be one of {HEURISTICS}"),
            (self.phrase.max_len >= 1, "phrase.max_len must be >= 1"),
            (0.0 <= self.phrase.threshold <= 1.0, "phrase.threshold must lie in [0, 1]"),
            (0.0 < self.phrase.keep_ratio <= 1.0, "phrase.keep_ratio must lie in (0, 1]"),
            (self.schedule.strategy in STRATEGIES, f"schedule.strategy must be one of {STRATEGIES}"),
            (min(self.schedule.word_steps, self.schedule.phrase_steps, self.schedule.sentence_steps) >= 0,
             "schedule step budgets must be >= 0"),
            (self.schedule.word_steps + self.schedule.phrase_steps + self.schedule.sentence_steps > 0,
             "schedule step budgets are all zero"),
            (self.schedule.token_budget >= 1, "schedule.token_budget must be >= 1"),
            (0.0 < self.schedule.c0 <= 1.0, "schedule.c0 must lie in (0, 1]"),
            (self.schedule.n_bins >= 1, "schedule.n_bins must be >= 1"),
            (0.0 <= self.schedule.mix_tail < 1.0, "schedule.mix_tail must lie in [0, 1)"),
            (0.0 <= self.model.dropout < 1.0, "model.dropout must lie in [0, 1)"),
            (0.0 <= self.model.label_smoothing < 1.0, "model.label_smoothing must lie in [0, 1)"),
            (self.model.dtype in ("float64", "float32"), "model.dtype must be float64 or float32"),
            (self.optim.lr > 0, "optim.lr must be positive"),
            (self.optim.warmup >= 0, "optim.warmup must be >= 0"),
            (self.decode.iterations >= 1, "decode.iterations must be >= 1"),
            (self.decode.length_beam >= 1, "decode.length_beam must be >= 1"),
            (self.eval.resamples >= 100, "eval.resamples must be >= 100"),
            (self.run.valid_every >= 1, "run.valid_every must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        edges = self.length_edges()
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError("eval.length_bins must be strictly increasing")
        return self

    def length_edges(self) -> list[float]:
        return [math.inf if str(e) == "inf" else float(e) for e in self.eval.length_bins]

    def resolve(self, path: str) -> Path:
        p = Path(os.path.expanduser(path))
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_dir(self) -> Path:
        override = os.environ.get("PMGNAT_OUTPUT_DIR")
        return Path(override) if override else self.resolve(self.paths.output_dir)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def section_hash(self, *sections: str) -> str:
        blob = json.dumps({s: self.to_dict()[s] for s in sections}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections) -> "RunConfig":
        """Copy with selected fields overridden, e.g. ``replace(schedule={"strategy": "none"})``."""
        new = dataclasses.replace(self)
        for name, updates in sections.items():
            setattr(new, name, dataclasses.replace(getattr(self, name), **updates))
        return new.validate()


def _coerce(section: str, key: str, raw: str, default):
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw
    if isinstance(default, bool):
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "on", "off"):
            value = value.lower() in ("true", "yes", "on")
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected a boolean, got {raw!r}")
    elif isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected an integer, got {raw!r}")
    elif isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}")
        value = float(value)
    elif isinstance(default, list):
        if isinstance(value, tuple):
            value = list(value)
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key}: expected a list, got {raw!r}")
    else:
        value = str(value)
    return value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except configparser.Error as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        cfg.base_dir = str(path.parent)
        for section in parser.sections():
            if section not in cfg.to_dict():
                raise ConfigError(f"unknown config section [{section}]")
            target = getattr(cfg, section)
            for key, raw in parser.items(section):
                if not hasattr(target, key):
                    raise ConfigError(f"unknown config key {section}.{key}")
                setattr(target, key, _coerce(section, key, raw, getattr(target, key)))
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        target = getattr(cfg, section, None)
        if target is None or not hasattr(target, key):
            raise ConfigError(f"unknown config key {dotted}")
        setattr(target, key, value)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {value!r}" if isinstance(value, str) else f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
