"""End-to-end runs: vocabulary + MLM pre-training, head swap + fine-tuning,
prediction, and the three-row preprocessing/ULMFiT ablation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Dataset, SynthConfig
from .evaluation import EvalReport
from .model import CLASSIFIER, Model, ModelConfig, init_model, swap_head
from .textnorm import NO_COLLAPSE, NormConfig, tweet_text
from .tokenizer import Vocabulary, build_vocab
from .train import (
    HistoryRow, ScheduleConfig, TrainConfig, encode_dataset, finetune, predict_dataset, pretrain_mlm,
)

__all__ = ["RunConfig", "TINY_MODEL", "tiny_run_config", "ABLATION_ROWS", "corpus_texts", "run_pretrain", "run_finetune",
           "run_predict", "run_ablation", "AblationRow"]

ABLATION_ROWS = (
    ("base", False, False),
    ("w/pre-processing", True, False),
    ("w/pre-processing + ulmfit", True, True),
)


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs besides the data and the seed."""

    norm: NormConfig = NormConfig()
    model: ModelConfig = ModelConfig()
    pretrain: TrainConfig = TrainConfig(epochs=3)
    pretrain_sched: ScheduleConfig = ScheduleConfig(lr_max=1e-3)
    finetune: TrainConfig = TrainConfig(epochs=3)
    finetune_sched: ScheduleConfig = ScheduleConfig(lr_max=1e-2)
    synth: SynthConfig = SynthConfig.noisy(0.3, n_per_class=667)
    valid_fraction: float = 0.2
    vocab_min_freq: int = 1
    preprocessing: bool = True
    ulmfit: bool = True
    seeds: tuple[int, ...] = (0, 1, 2)
    paths: dict = field(default_factory=dict)

    @property
    def active_norm(self) -> NormConfig | None:
        return self.norm if self.preprocessing else None

    def finetune_config(self) -> TrainConfig:
        return self.finetune if self.ulmfit else self.finetune.without_ulmfit()


TINY_MODEL = ModelConfig(n_layers=2, hidden=32, n_heads=2, ff_dim=64)


def tiny_run_config(**overrides) -> RunConfig:
    """A seconds-scale configuration: tiny encoder, short pre-training."""
    rc = RunConfig(model=TINY_MODEL, pretrain=TrainConfig(epochs=1, max_steps=200),
                   pretrain_sched=ScheduleConfig(lr_max=3e-3))
    return replace(rc, **overrides)


def corpus_texts(data, norm: NormConfig | None) -> list[str]:
    return [tweet_text(tw, norm) for tw in data]


def run_pretrain(train: Dataset, rc: RunConfig, seed: int, vocab: Vocabulary | None = None,
                 history: list | None = None):
    """Build the vocabulary (unless given), initialize and MLM-train a model.

    Returns ``(vocab, model, per_epoch_losses)``.
    """
    norm = rc.active_norm
    if vocab is None:
        vocab = build_vocab(corpus_texts(train, norm), rc.model.vocab_size, rc.vocab_min_freq)
    mcfg = replace(rc.model, vocab_size=vocab.size, max_len=rc.pretrain.max_len)
    model = init_model(mcfg, seed)
    tcfg = replace(rc.pretrain, seed=seed)
    model, losses = pretrain_mlm(model, train, vocab, tcfg, rc.pretrain_sched, norm, history)
    return vocab, model, losses


def run_finetune(model: Model, vocab: Vocabulary, train: Dataset, valid: Dataset, rc: RunConfig,
                 seed: int, history: list | None = None) -> tuple[Model, list[EvalReport]]:
    """Swap in a classifier head and fine-tune it."""
    model = swap_head(model, CLASSIFIER, seed)
    tcfg = replace(rc.finetune_config(), seed=seed)
    return finetune(model, train, valid, vocab, tcfg, rc.finetune_sched, rc.active_norm, history)


def run_predict(model: Model, vocab: Vocabulary, data, rc: RunConfig):
    seqs = encode_dataset(data, vocab, model.config.max_len, rc.active_norm)
    return predict_dataset(model, seqs)


@dataclass
class AblationRow:
    name: str
    scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))


def run_ablation(train: Dataset, valid: Dataset, rc: RunConfig,
                 seeds: Sequence[int] | None = None) -> list[AblationRow]:
    """Final-epoch validation weighted-F1 for the three ablation settings.

    Each preprocessing setting builds its own vocabulary and pre-trained
    model per seed (so the toggle affects both stages); rows that share the
    setting share that pre-trained model.
    """
    seeds = rc.seeds if seeds is None else tuple(seeds)
    pretrained: dict = {}
    rows = []
    for name, pre, ulm in ABLATION_ROWS:
        cfg = replace(rc, preprocessing=pre, ulmfit=ulm)
        scores = []
        for s in seeds:
            if (pre, s) not in pretrained:
                vocab, model, _ = run_pretrain(train, cfg, s)
                pretrained[pre, s] = (vocab, model)
            vocab, model = pretrained[pre, s]
            _, reports = run_finetune(model, vocab, train, valid, cfg, s)
            scores.append(reports[-1].weighted_f1)
        rows.append(AblationRow(name, scores))
    return rows
