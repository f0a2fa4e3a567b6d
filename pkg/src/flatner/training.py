"""SGD-with-momentum training loop with warmup, inverse-time decay, and dev selection."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import TaggedSentence
from .metrics import score_tags
from .tagger import FlatTagger

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    batch_size: int = 10
    lr: float = 1e-3
    lr_decay: float = 0.05
    momentum: float = 0.9
    warmup_epochs: int = 10
    max_epochs: int = 100
    seed: int = 0
    grad_clip: float = 0.0  # 0 disables clipping
    target_f1: float = 0.0  # stop once dev F1 reaches this; 0 disables

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size must be >= 1 and epoch counts >= 0")
        if self.lr < 0 or self.lr_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr and lr_decay must be >= 0, momentum in [0, 1)")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Per-epoch learning rate.

    Epochs ``0 .. warmup-1`` ramp linearly as ``lr * (epoch + 1) / warmup``;
    afterwards ``lr / (1 + decay * (epoch - warmup))``.
    """
    if epoch < config.warmup_epochs:
        return config.lr * (epoch + 1) / config.warmup_epochs
    return config.lr / (1.0 + config.lr_decay * (epoch - config.warmup_epochs))


class SGD:
    """``v <- momentum * v - lr * grad; theta <- theta + v``."""

    def __init__(self, params: Sequence[nx.Parameter], momentum: float = 0.9, grad_clip: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params if p.grad is not None))

    def step(self, lr: float) -> None:
        factor = 1.0
        if self.grad_clip > 0:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                factor = self.grad_clip / norm
        for p in self.params:
            v = self.velocity[id(p)]
            v *= self.momentum
            if p.grad is not None:
                v -= lr * factor * p.grad
            p.data += v


def evaluate(tagger: FlatTagger, sentences: Sequence[TaggedSentence], batch_size: int = 16):
    pred = tagger.predict([s.chars for s in sentences], batch_size)
    return score_tags([s.tags for s in sentences], pred, tagger.scheme)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int = -1
    best_dev_f1: float = -1.0
    best_state: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def train(tagger: FlatTagger, train_set: Sequence[TaggedSentence], config: TrainConfig,
          dev_set: Sequence[TaggedSentence] | None = None, checkpoint: str | Path | None = None,
          history_path: str | Path | None = None) -> TrainResult:
    """Train in place and leave the tagger holding the best-dev parameters.

    Dev scores are computed on float32-rounded weights, the same values a
    checkpoint stores, so re-evaluating a saved checkpoint reproduces them.
    Without a dev set the last epoch is kept.
    """
    if not train_set:
        raise ValueError("training set is empty")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    opt = SGD(list(tagger.params.values()), config.momentum, config.grad_clip)
    result = TrainResult([])
    last_good = tagger.state_dict()
    hist_fh = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(config.max_epochs):
            started = time.perf_counter()
            lr = lr_schedule(epoch, config)
            order = shuffle_rng.permutation(len(train_set))
            total = 0.0
            for i in range(0, len(order), config.batch_size):
                batch = [train_set[k] for k in order[i:i + config.batch_size]]
                opt.zero_grad()
                loss = tagger.loss(batch, training=True, rng=dropout_rng)
                value = float(loss.data)
                if not math.isfinite(value):
                    tagger.load_state_dict(last_good)
                    raise TrainingDiverged(f"loss became {value} in epoch {epoch}", result.history)
                loss.backward()
                opt.step(lr)
                total += value
            last_good = tagger.state_dict()

            record = {"epoch": epoch, "lr": lr, "loss": total / len(train_set), "dev_f1": None}
            if dev_set:
                tagger.load_state_dict(tagger.quantized_state())
                record["dev_f1"] = evaluate(tagger, dev_set).f1
                tagger.load_state_dict(last_good)
                if record["dev_f1"] > result.best_dev_f1:
                    result.best_epoch, result.best_dev_f1 = epoch, record["dev_f1"]
                    result.best_state = {k: v.copy() for k, v in last_good.items()}
                    if checkpoint:
                        tagger.save(checkpoint, extra={"best_epoch": epoch, "best_dev_f1": record["dev_f1"]})
            record["seconds"] = round(time.perf_counter() - started, 3)
            result.history.append(record)
            logger.info("epoch %d lr %.2e loss %.4f dev_f1 %s", epoch, lr, record["loss"], record["dev_f1"])
            if hist_fh:
                hist_fh.write(json.dumps(record) + "\n")
                hist_fh.flush()
            if dev_set and config.target_f1 and record["dev_f1"] >= config.target_f1:
                break
    finally:
        if hist_fh:
            hist_fh.close()

    if result.best_state:
        tagger.load_state_dict(result.best_state)
    else:
        result.best_epoch = len(result.history) - 1
        result.best_state = tagger.state_dict()
        if checkpoint:
            tagger.save(checkpoint, extra={"best_epoch": result.best_epoch, "best_dev_f1": None})
    return result
