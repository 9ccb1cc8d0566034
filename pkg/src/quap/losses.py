"""Attacker objectives computed from raw logits.

Untargeted attacks maximise the cross entropy of the true label. Targeted
attacks maximise ``logit[target] - max_{k != target} logit[k]``, which is
positive exactly when the target wins.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError


class Mode(str, Enum):
    UNTARGETED = "untargeted"
    TARGETED = "targeted"


@dataclass(frozen=True)
class AttackObjective:
    mode: Mode = Mode.UNTARGETED
    target_class: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.TARGETED:
            if self.target_class is None or self.target_class < 0:
                raise DomainError("targeted objective needs a non-negative target_class")
        elif self.target_class is not None:
            raise DomainError("untargeted objective takes no target_class")

    @classmethod
    def untargeted(cls):
        return cls(Mode.UNTARGETED)

    @classmethod
    def targeted(cls, target):
        return cls(Mode.TARGETED, int(target))

    @property
    def needs_labels(self):
        return self.mode is Mode.UNTARGETED

    def per_example(self, logits, labels=None):
        if self.mode is Mode.UNTARGETED:
            if labels is None:
                raise DomainError("untargeted loss needs true labels")
            return cross_entropy_rows(logits, labels)
        return targeted_loss_rows(logits, self.target_class)


def _as_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None]
    if logits.shape[-1] < 2:
        raise DomainError("need at least two classes")
    return logits


def cross_entropy_rows(logits, labels):
    logits = _as_logits(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    k = logits.shape[1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("one label per row of logits required")
    if np.any((labels < 0) | (labels >= k)):
        raise IndexError(f"label out of range for {k} classes")
    top = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - top).sum(axis=1)) + top[:, 0]
    picked = logits[np.arange(len(labels)), labels]
    # log-sum-exp is never below any single logit; the clamp only removes rounding
    return np.maximum(lse - picked, 0.0)


def cross_entropy(logits, label):
    """``log sum_k exp(logits_k) - logits[label]`` for one logit vector."""
    return float(cross_entropy_rows(np.asarray(logits)[None], [label])[0])


def targeted_loss_rows(logits, target):
    logits = _as_logits(logits)
    k = logits.shape[1]
    if not 0 <= target < k:
        raise IndexError(f"target {target} out of range for {k} classes")
    others = logits.copy()
    others[:, target] = -np.inf
    # argmax returns the first maximum, so competitor ties go to the lowest index
    competitor = others.argmax(axis=1)
    return logits[:, target] - logits[np.arange(len(logits)), competitor]


def targeted_loss(logits, target):
    return float(targeted_loss_rows(np.asarray(logits)[None], target)[0])


def batch_loss(logits, labels, objective):
    """Mean attacker loss over a batch of logit vectors.

    Labels are ignored by targeted objectives and may be ``None`` there.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or len(logits) == 0:
        raise DomainError("empty batch")
    if labels is not None and len(labels) != len(logits):
        raise ValueError("labels and logits differ in length")
    return float(np.mean(objective.per_example(logits, labels)))
