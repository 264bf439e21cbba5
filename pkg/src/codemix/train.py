"""MLM pre-training and ULMFiT-style fine-tuning.

Fine-tuning combines slanted triangular learning rates, discriminative
per-group rates (head-first, divided by a constant factor per group) and
gradual unfreezing (one more group per epoch), with AdamW updates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Dataset, Sentiment
from .evaluation import EvalReport, evaluate
from .model import CLASSIFIER, MLM, Model, WrongHead, forward_classify, loss_and_grads, predict
from .numerics import ShapeMismatch, check_finite
from .textnorm import NormConfig, tweet_text
from .tokenizer import CLS, MASK, N_SPECIAL, PAD, SEP, TokenSequence, Vocabulary, batch_arrays, encode

__all__ = [
    "StepOutOfRange", "EmptyDataset", "UnlabeledData",
    "ScheduleConfig", "TrainConfig", "OptimizerState", "HistoryRow",
    "stlr", "discriminative_lrs", "frozen_groups", "mask_tokens", "adamw_step",
    "pretrain_mlm", "finetune", "predict_dataset", "encode_dataset", "write_history",
]


class StepOutOfRange(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class UnlabeledData(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-3
    cut_frac: float = 0.1
    ratio: float = 32.0
    discr_factor: float = 2.6
    total_steps: int = 100

    def __post_init__(self):
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")
        if not 0.0 < self.cut_frac < 1.0:
            raise ValueError("cut_frac must lie in (0, 1)")
        if self.ratio <= 1.0:
            raise ValueError("ratio must exceed 1")
        if self.discr_factor < 1.0:
            raise ValueError("discr_factor must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if math.floor(self.total_steps * self.cut_frac) < 1:
            raise ValueError("total_steps * cut_frac must be >= 1")

    @property
    def cut(self) -> int:
        return math.floor(self.total_steps * self.cut_frac)

    def spanning(self, steps: int) -> "ScheduleConfig":
        """Copy whose schedule covers ``steps`` updates (at least one warm-up step)."""
        return replace(self, total_steps=max(steps, math.ceil(1.0 / self.cut_frac)))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    weight_decay: float = 1e-2
    max_len: int = 70
    epochs: int = 3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    unfreeze_per_epoch: bool = True
    stlr: bool = True
    discriminative: bool = True
    mask_rate: float = 0.15
    max_steps: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must lie in [0, 1]")

    @property
    def ulmfit(self) -> bool:
        return self.unfreeze_per_epoch and self.stlr and self.discriminative

    def without_ulmfit(self) -> "TrainConfig":
        return replace(self, unfreeze_per_epoch=False, stlr=False, discriminative=False)


def stlr(t: int, cfg: ScheduleConfig) -> float:
    """Slanted triangular learning rate at step ``t``: a linear rise to
    ``lr_max`` at ``cut`` followed by a linear decay, floored at
    ``lr_max / ratio``."""
    T = cfg.total_steps
    if not 0 <= t <= T:
        raise StepOutOfRange(f"step {t} outside [0, {T}]")
    cut = math.floor(T * cfg.cut_frac)
    if cut < 1:
        raise StepOutOfRange(f"total_steps={T} too small for cut_frac={cfg.cut_frac}")
    if t < cut:
        p = t / cut
    else:
        p = 1.0 - (t - cut) / (cut * (1.0 / cfg.cut_frac - 1.0))
    return cfg.lr_max * (1.0 + p * (cfg.ratio - 1.0)) / cfg.ratio


def discriminative_lrs(lr_top: float, factor: float, n_groups: int) -> list[float]:
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    if factor < 1.0:
        raise ValueError("factor must be >= 1")
    lrs = [lr_top]
    for _ in range(n_groups - 1):
        lrs.append(lrs[-1] / factor)
    return lrs


def frozen_groups(epoch: int, n_groups: int) -> set[int]:
    """Groups (head-first indices) that stay frozen during ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return set(range(min(epoch, n_groups - 1) + 1, n_groups))


def mask_tokens(seq: TokenSequence, rate: float, seed, vocab_size: int | None = None):
    """BERT-style corruption of one sequence.

    Each real, non-special token is selected with probability ``rate``; a
    selected token becomes MASK (80%), a random non-special id (10%) or stays
    as is (10%). Returns ``(corrupted_ids, positions, original_ids)``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    ids = np.asarray(seq.ids, dtype=np.int64)
    candidates = np.flatnonzero((np.asarray(seq.attention_mask) == 1) & (ids >= N_SPECIAL))
    u = rng.random(len(candidates))
    action = rng.random(len(candidates))
    if vocab_size is None:
        vocab_size = int(ids.max()) + 1
    replacement = rng.integers(N_SPECIAL, max(vocab_size, N_SPECIAL + 1), size=len(candidates))
    chosen = u < rate
    positions = candidates[chosen]
    original = ids[positions].copy()
    corrupted = ids.copy()
    act = action[chosen]
    corrupted[positions[act < 0.8]] = MASK
    swap = (act >= 0.8) & (act < 0.9)
    corrupted[positions[swap]] = replacement[chosen][swap]
    return corrupted, positions, original


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr_per_group: Sequence[float],
               weight_decay: float, groups: Sequence[Sequence[str]], frozen=frozenset(),
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place AdamW update with decoupled weight decay.

    Bias correction uses each parameter's own update count, so a group that
    was frozen starts with a fresh Adam warm-up when it is released.
    """
    if len(lr_per_group) != len(groups):
        raise ShapeMismatch(f"{len(lr_per_group)} learning rates for {len(groups)} groups")
    state.t += 1
    for g, names in enumerate(groups):
        if g in frozen:
            continue
        lr = lr_per_group[g]
        for name in names:
            p, grad = params[name], grads[name]
            if grad.shape != p.shape:
                raise ShapeMismatch(f"gradient for {name} has shape {grad.shape}, expected {p.shape}")
            if name not in state.m:
                state.m[name] = np.zeros_like(p)
                state.v[name] = np.zeros_like(p)
                state.steps[name] = 0
            state.steps[name] += 1
            k = state.steps[name]
            m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
            v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
            mhat = m / (1.0 - beta1 ** k)
            vhat = v / (1.0 - beta2 ** k)
            params[name] = p * (1.0 - lr * weight_decay) - lr * (mhat / (np.sqrt(vhat) + eps))


@dataclass
class HistoryRow:
    epoch: int
    step: int
    lr: float
    loss: float
    val_weighted_f1: float | None = None


def write_history(rows: Sequence[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "lr", "loss", "val_weighted_f1"])
        for r in rows:
            f1 = "" if r.val_weighted_f1 is None else repr(r.val_weighted_f1)
            w.writerow([r.epoch, r.step, repr(r.lr), repr(r.loss), f1])


def encode_dataset(data, vocab: Vocabulary, max_len: int,
                   norm: NormConfig | None = NormConfig()) -> list[TokenSequence]:
    return [encode(tweet_text(tw, norm), vocab, max_len) for tw in data]


def _trim(ids, mask):
    # drop all-PAD columns; real positions never attend to PAD so results are unchanged
    L = int(mask.sum(axis=1).max())
    return ids[:, :L], mask[:, :L]


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step_seed(seed: int, step: int, stream: int) -> list[int]:
    return [seed, stream, step]


def pretrain_mlm(model: Model, dataset, vocab: Vocabulary, cfg: TrainConfig,
                 sched: ScheduleConfig, norm: NormConfig | None = NormConfig(),
                 history: list | None = None) -> tuple[Model, list[float]]:
    """Masked-language-model training; returns the model and per-epoch mean loss.

    ``dataset`` is a :class:`Dataset` or a list of texts. Rates follow the
    slanted triangular schedule (when ``cfg.stlr``) with the same rate for
    every group; ``cfg.max_steps`` caps the total number of updates.
    """
    if model.head != MLM:
        raise WrongHead("pre-training needs the MLM head")
    texts = [t if isinstance(t, str) else tweet_text(t, norm) for t in dataset]
    if not texts:
        raise EmptyDataset("nothing to pre-train on")
    seqs = [encode(t, vocab, cfg.max_len) for t in texts]
    n_batches = math.ceil(len(seqs) / cfg.batch_size)
    total = cfg.epochs * n_batches if cfg.max_steps is None else cfg.max_steps
    epochs = math.ceil(total / n_batches)
    sched = sched.spanning(total)
    groups = model.groups
    state = OptimizerState()
    epoch_losses = []
    step = 0
    for epoch in range(epochs):
        rng = np.random.default_rng([cfg.seed, 10, epoch])
        losses = []
        for b, idx in enumerate(_batches(len(seqs), cfg.batch_size, rng)):
            if step >= total:
                break
            rows, positions, targets = [], [], []
            for r, i in enumerate(idx):
                corrupted, pos, orig = mask_tokens(seqs[i], cfg.mask_rate,
                                                   [cfg.seed, 11, step, r], vocab.size)
                rows.append(corrupted)
                positions.extend((r, int(p)) for p in pos)
                targets.extend(int(o) for o in orig)
            lr = stlr(step, sched) if cfg.stlr else sched.lr_max
            if positions:
                ids = np.stack(rows)
                mask = np.array([seqs[i].attention_mask for i in idx])
                ids, mask = _trim(ids, mask)
                loss, grads, _ = loss_and_grads(model, ids, mask, np.array(targets),
                                                np.array(positions), train=True,
                                                seed=_step_seed(cfg.seed, step, 12))
                check_finite(np.array(loss), "loss")
                adamw_step(model.params, grads, state, [lr] * len(groups), cfg.weight_decay,
                           groups, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
                losses.append(loss)
                if history is not None:
                    history.append(HistoryRow(epoch, step, lr, loss))
            step += 1
        if losses:
            epoch_losses.append(float(np.mean(losses)))
    return model, epoch_losses


def predict_dataset(model: Model, seqs: Sequence[TokenSequence], batch_size: int = 64) -> list[Sentiment]:
    preds: list[Sentiment] = []
    for i in range(0, len(seqs), batch_size):
        ids, mask = _trim(*batch_arrays(seqs[i:i + batch_size]))
        preds.extend(predict(forward_classify(model, (ids, mask))))
    return preds


def finetune(model: Model, train_set, valid_set, vocab: Vocabulary, cfg: TrainConfig,
             sched: ScheduleConfig, norm: NormConfig | None = NormConfig(),
             history: list | None = None) -> tuple[Model, list[EvalReport]]:
    """Fine-tune the classifier; one validation report per epoch.

    With every ULMFiT switch on, epoch ``e`` trains the ``e + 1`` groups
    nearest the head at rates ``stlr(t) / factor**g``. Switching them off
    gives a constant rate shared by all groups with nothing frozen.
    """
    if model.head != CLASSIFIER:
        raise WrongHead("fine-tuning needs the classifier head")
    train_set = list(train_set)
    if not train_set:
        raise EmptyDataset("empty training set")
    if any(tw.label is None for tw in train_set) or any(tw.label is None for tw in valid_set):
        raise UnlabeledData("fine-tuning needs labeled train and validation tweets")
    seqs = encode_dataset(train_set, vocab, cfg.max_len, norm)
    labels = np.array([int(tw.label) for tw in train_set])
    valid_seqs = encode_dataset(valid_set, vocab, cfg.max_len, norm)
    valid_labels = [tw.label for tw in valid_set]

    n_batches = math.ceil(len(seqs) / cfg.batch_size)
    total = cfg.epochs * n_batches if cfg.max_steps is None else min(cfg.max_steps, cfg.epochs * n_batches)
    sched = sched.spanning(total)
    groups = model.groups
    n_groups = len(groups)
    state = OptimizerState()
    reports = []
    step = 0
    for epoch in range(cfg.epochs):
        frozen = frozen_groups(epoch, n_groups) if cfg.unfreeze_per_epoch else set()
        depth = n_groups - len(frozen)
        rng = np.random.default_rng([cfg.seed, 20, epoch])
        for idx in _batches(len(seqs), cfg.batch_size, rng):
            if step >= total:
                break
            ids, mask = _trim(*batch_arrays([seqs[i] for i in idx]))
            loss, grads, _ = loss_and_grads(model, ids, mask, labels[idx], train=True,
                                            seed=_step_seed(cfg.seed, step, 21), depth=depth)
            check_finite(np.array(loss), "loss")
            lr = stlr(step, sched) if cfg.stlr else sched.lr_max
            if cfg.discriminative:
                lrs = discriminative_lrs(lr, sched.discr_factor, n_groups)
            else:
                lrs = [lr] * n_groups
            adamw_step(model.params, grads, state, lrs, cfg.weight_decay, groups, frozen,
                       cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            if history is not None:
                history.append(HistoryRow(epoch, step, lr, loss))
            step += 1
        report = evaluate(valid_labels, predict_dataset(model, valid_seqs)) if valid_seqs else None
        reports.append(report)
        if history is not None and history and report is not None:
            history[-1].val_weighted_f1 = report.weighted_f1
    return model, reports
