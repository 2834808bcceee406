"""SGD training, fine-tuning and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .graph import ModelGraph, backward, forward_train, predict


@dataclass
class LRSchedule:
    initial: float = 0.05
    decay_epochs: tuple = ()
    factor: float = 0.1

    def at(self, epoch: int) -> float:
        return self.initial * self.factor ** sum(epoch >= e for e in self.decay_epochs)


@dataclass
class Trainer:
    """Owns the mutable optimizer state for one model."""

    model: ModelGraph
    schedule: LRSchedule = field(default_factory=LRSchedule)
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    velocity: dict = field(default_factory=dict)
    epoch: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def step(self, images, labels, lr=None) -> float:
        logits, tape = forward_train(self.model, images)
        loss, grad = engine.softmax_cross_entropy(logits, labels)
        grads = backward(self.model, tape, grad)
        params = self.model.parameters()
        # pruning may have changed parameter shapes since the last step
        velocity = {k: v for k, v in self.velocity.items() if k in params and v.shape == params[k].shape}
        new_params, self.velocity = engine.sgd_step(
            params, grads, lr if lr is not None else self.schedule.at(self.epoch),
            self.momentum, self.weight_decay, velocity)
        self.model.set_parameters(new_params)
        return loss

    def sample_batch(self, data):
        idx = self.rng.choice(len(data), size=min(self.batch_size, len(data)), replace=False)
        return data.images[idx], data.labels[idx]

    def run_epoch(self, data) -> float:
        order = self.rng.permutation(len(data))
        losses = []
        for s in range(0, len(order), self.batch_size):
            idx = order[s:s + self.batch_size]
            losses.append(self.step(data.images[idx], data.labels[idx]))
        self.epoch += 1
        return float(np.mean(losses))


def evaluate(model: ModelGraph, data, batch_size: int = 500):
    """Top-1 accuracy fraction and mean cross-entropy."""
    correct, loss_sum = 0, 0.0
    for s in range(0, len(data), batch_size):
        logits = predict(model, data.images[s:s + batch_size])
        labels = data.labels[s:s + batch_size]
        correct += int((logits.argmax(axis=1) == labels).sum())
        loss_sum += float(engine.cross_entropy_per_sample(logits, labels).sum())
    return correct / len(data), loss_sum / len(data)


def finetune(model: ModelGraph, data, epochs: int, schedule: LRSchedule | None = None, batch_size: int = 32,
             momentum: float = 0.9, weight_decay: float = 1e-4, seed: int = 0, history: list | None = None):
    """Train a copy of ``model`` for ``epochs`` epochs of SGD; returns the copy."""
    model = model.copy()
    if epochs <= 0:
        return model
    trainer = Trainer(model, schedule or LRSchedule(), batch_size, momentum, weight_decay, seed)
    for _ in range(epochs):
        loss = trainer.run_epoch(data)
        if history is not None:
            history.append({"epoch": trainer.epoch, "lr": trainer.schedule.at(trainer.epoch - 1), "train_loss": loss})
    return model
