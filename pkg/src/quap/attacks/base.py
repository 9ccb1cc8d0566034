"""Pieces shared by the one-query and two-query attacks."""

import time
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum

import numpy as np

from ..data import Dataset, DatasetStream
from ..errors import ConfigurationError


class OracleLoss:
    """Per-example attacker loss evaluated through a counted oracle.

    Keeps the losses of the most recent calls so drivers can report a
    trace without spending extra queries.
    """

    def __init__(self, oracle, objective):
        self.oracle = oracle
        self.objective = objective
        self.seen = []

    def __call__(self, points, labels):
        logits = self.oracle.query(points)
        losses = self.objective.per_example(logits, labels)
        self.seen.append(losses)
        return losses

    def drain(self):
        out = np.concatenate(self.seen) if self.seen else np.zeros(0)
        self.seen = []
        return out


def as_stream(dataset, seed):
    if isinstance(dataset, DatasetStream):
        return dataset
    if isinstance(dataset, Dataset):
        return dataset.stream(seed)
    raise TypeError("dataset must be a Dataset or DatasetStream")


def check_labels(stream, objective):
    if objective.needs_labels and stream.dataset.labels is None:
        raise ConfigurationError("untargeted attacks need labelled query images")


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value):
        return {k: _plain(v) for k, v in asdict(value).items()}
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class AttackReport:
    algorithm: str
    config: dict
    queries_per_image: int
    images_consumed: int = 0
    total_queries: int = 0
    iterations: int = 0
    stop_reason: str = ""
    loss_trace: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    wall_time: float = 0.0
    # tiles snapshotted when the attack had consumed at most N images
    checkpoints: dict = field(default_factory=dict, repr=False)
    extras: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "config": _plain(self.config),
            "queries_per_image": self.queries_per_image,
            "images_consumed": self.images_consumed,
            "total_queries": self.total_queries,
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "loss_trace": [float(v) for v in self.loss_trace],
            "ledger": _plain(self.ledger),
            "checkpoint_images": sorted(int(k) for k in self.checkpoints),
            "wall_time": self.wall_time,
        }


class Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def snapshot_checkpoints(report, checkpoints, consumed, tile):
    for c in checkpoints:
        if consumed <= c:
            report.checkpoints[int(c)] = np.array(tile, copy=True)


config_dict = _plain
