import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from effbench.consts import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    ADAM_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_SEEDS,
)
from effbench.data.dataset import BatchIterator, Dataset
from effbench.engine.autograd import ComputeGraph, CrossEntropyLoss, backward
from effbench.engine.optim import AdamState, adam_step
from effbench.engine.tensor import Rng
from effbench.error_handling import TrainingError

EVAL_BATCH_SIZE = 256


@dataclass
class TrainConfig:
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    # when set, training stops after this many updates regardless of epochs
    steps: Optional[int] = None
    seeds: Tuple[int, ...] = DEFAULT_SEEDS

    def adam_state(self, parameters) -> AdamState:
        return AdamState.for_parameters(
            parameters, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        config = cls(**{key: value for key, value in data.items() if key in known})
        config.seeds = tuple(config.seeds)
        return config


@dataclass
class RunRecord:
    seed: int
    epoch_losses: List[float] = field(default_factory=list)
    epoch_accuracies: List[float] = field(default_factory=list)
    loss_curve: List[float] = field(default_factory=list)
    steps: int = 0
    final_train_accuracy: Optional[float] = None
    final_test_accuracy: Optional[float] = None
    wall_time: float = 0.0
    status: str = "ok"
    message: str = ""

    @property
    def final_accuracy(self) -> Optional[float]:
        """test accuracy when a test split was given, train accuracy otherwise"""
        if self.final_test_accuracy is not None:
            return self.final_test_accuracy
        return self.final_train_accuracy

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


@dataclass
class Evaluation:
    accuracy: float
    per_class: List[float]
    count: int


def _accuracy(output: np.ndarray, labels: np.ndarray) -> float:
    predictions = output.reshape(output.shape[0], -1).argmax(axis=1)
    return float((predictions == labels).mean())


def train_step(
    graph: ComputeGraph,
    batch: Tuple[np.ndarray, np.ndarray],
    state: Optional[AdamState],
    config: TrainConfig,
    rng: Optional[Rng] = None,
) -> Tuple[float, float, AdamState]:
    """forward in train mode, cross-entropy, backward, one Adam update.

    Without ``state`` the optimizer starts fresh from the hyperparameters in ``config``.
    """
    if state is None:
        state = config.adam_state(graph.parameters)
    images, labels = batch
    loss = graph.evaluate_loss(images, CrossEntropyLoss(labels), mode="train", rng=rng)
    if not math.isfinite(loss):
        raise TrainingError(f"Non-finite loss {loss} at step {state.t + 1}")
    accuracy = _accuracy(graph.output(graph.output_name), labels)
    grads = backward(graph)
    _, state = adam_step(graph.parameters, grads, state)
    return loss, accuracy, state


def evaluate(graph: ComputeGraph, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE) -> Evaluation:
    """inference-mode accuracy, overall and per class"""
    predictions = []
    for images, _ in BatchIterator(dataset, batch_size):
        out = graph.forward(images, mode="infer").data
        predictions.append(out.reshape(out.shape[0], -1).argmax(axis=1))
    predicted = np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)
    correct = predicted == dataset.labels
    per_class = [
        float(correct[dataset.labels == label].mean()) if (dataset.labels == label).any() else 0.0
        for label in range(dataset.class_count)
    ]
    return Evaluation(float(correct.mean()) if len(correct) else 0.0, per_class, len(correct))


def fit(
    graph: ComputeGraph,
    train_set: Dataset,
    config: TrainConfig,
    seed: int,
    test_set: Optional[Dataset] = None,
) -> RunRecord:
    """Train one seed; a non-finite loss aborts the run and is reported in the record."""
    record = RunRecord(seed=seed)
    state = None
    dropout_rng = Rng((seed, 1))
    batches_per_epoch = -(-len(train_set) // config.batch_size)
    epochs = config.epochs if config.steps is None else -(-config.steps // batches_per_epoch)
    logger.info(f"seed {seed}: training {epochs} epochs of {batches_per_epoch} batches")
    started = time.perf_counter()
    try:
        for epoch in range(epochs):
            loss_sum = correct_sum = seen = 0.0
            for images, labels in BatchIterator(train_set, config.batch_size, seed=(seed, 2, epoch)):
                if config.steps is not None and record.steps >= config.steps:
                    break
                loss, accuracy, state = train_step(graph, (images, labels), state, config, dropout_rng)
                record.loss_curve.append(loss)
                record.steps += 1
                loss_sum += loss * len(labels)
                correct_sum += accuracy * len(labels)
                seen += len(labels)
                logger.debug(f"seed {seed} step {record.steps}: loss {loss:.5f} accuracy {accuracy:.3f}")
            if seen:
                record.epoch_losses.append(loss_sum / seen)
                record.epoch_accuracies.append(correct_sum / seen)
                logger.info(
                    f"seed {seed} epoch {epoch + 1}/{epochs}: loss {record.epoch_losses[-1]:.4f} "
                    f"accuracy {record.epoch_accuracies[-1]:.4f}"
                )
    except TrainingError as e:
        record.status, record.message = "aborted", e.description
        record.wall_time = time.perf_counter() - started
        logger.error(f"seed {seed} aborted: {e.description}")
        return record

    record.final_train_accuracy = evaluate(graph, train_set).accuracy
    if test_set is not None:
        record.final_test_accuracy = evaluate(graph, test_set).accuracy
    record.wall_time = time.perf_counter() - started
    logger.info(
        f"seed {seed} finished after {record.steps} steps: train accuracy "
        f"{record.final_train_accuracy:.4f}, test accuracy {record.final_test_accuracy}"
    )
    return record


def summarize(records: List[RunRecord]) -> Dict:
    """mean and population standard deviation of the final accuracies of finished seeds"""
    finals = [r.final_accuracy for r in records if r.status == "ok" and r.final_accuracy is not None]
    return dict(
        seeds=[r.seed for r in records],
        finals=finals,
        aborted=[r.seed for r in records if r.status != "ok"],
        mean=float(np.mean(finals)) if finals else None,
        std=float(np.std(finals)) if finals else None,
    )
