"""Holdout success rates for universal perturbations.

Untargeted: among holdout images the classifier gets right, the fraction
that the perturbation makes it get wrong. Targeted: among holdout images
not already assigned to the target, the fraction the perturbation pushes
onto the target (true labels play no role in eligibility).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError
from .perturbation import UniversalPerturbation, perturb_batch


@dataclass
class EvaluationResult:
    mode: str
    success_rate: float
    eligible_count: int
    success_count: int
    target_class: int | None = None
    # class -> {"eligible": n, "success": k}; keyed by true label when known
    per_class: dict = field(default_factory=dict)
    clean_logits: np.ndarray | None = field(default=None, repr=False)
    perturbed_logits: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "mode": self.mode,
            "target_class": self.target_class,
            "success_rate": self.success_rate,
            "eligible_count": self.eligible_count,
            "success_count": self.success_count,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }


def _logits(oracle, images, perturbation, chunk):
    data = perturbation.data if isinstance(perturbation, UniversalPerturbation) else np.asarray(perturbation)
    clean, pert = [], []
    for s in range(0, len(images), chunk):
        x = np.asarray(images[s : s + chunk], dtype=np.float64)
        clean.append(oracle(x))
        points, _ = perturb_batch(x, data)
        pert.append(oracle(points))
    return np.concatenate(clean), np.concatenate(pert)


def _per_class(keys, eligible, success):
    out = {}
    for k in np.unique(keys[eligible]):
        mask = eligible & (keys == k)
        out[int(k)] = {"eligible": int(mask.sum()), "success": int((success & mask).sum())}
    return out


def evaluate_untargeted(oracle, perturbation, holdout, chunk=2048, keep_logits=False):
    if holdout.labels is None:
        raise EvaluationError("untargeted evaluation needs holdout labels")
    clean, pert = _logits(oracle, holdout.images, perturbation, chunk)
    labels = holdout.labels
    eligible = clean.argmax(axis=1) == labels
    success = eligible & (pert.argmax(axis=1) != labels)
    n_el = int(eligible.sum())
    if n_el == 0:
        raise EvaluationError("no holdout image is classified correctly")
    n_ok = int(success.sum())
    return EvaluationResult(
        mode="untargeted",
        success_rate=n_ok / n_el,
        eligible_count=n_el,
        success_count=n_ok,
        per_class=_per_class(labels, eligible, success),
        clean_logits=clean if keep_logits else None,
        perturbed_logits=pert if keep_logits else None,
    )


def evaluate_targeted(oracle, perturbation, holdout, target, chunk=2048, keep_logits=False):
    clean, pert = _logits(oracle, holdout.images, perturbation, chunk)
    if not 0 <= target < clean.shape[1]:
        raise EvaluationError(f"target {target} out of range")
    eligible = clean.argmax(axis=1) != target
    success = eligible & (pert.argmax(axis=1) == target)
    n_el = int(eligible.sum())
    if n_el == 0:
        raise EvaluationError("every holdout image is already classified as the target")
    n_ok = int(success.sum())
    keys = holdout.labels if holdout.labels is not None else clean.argmax(axis=1)
    return EvaluationResult(
        mode="targeted",
        success_rate=n_ok / n_el,
        eligible_count=n_el,
        success_count=n_ok,
        target_class=int(target),
        per_class=_per_class(keys, eligible, success),
        clean_logits=clean if keep_logits else None,
        perturbed_logits=pert if keep_logits else None,
    )


def evaluate(oracle, perturbation, holdout, objective, **kw):
    if objective.needs_labels:
        return evaluate_untargeted(oracle, perturbation, holdout, **kw)
    return evaluate_targeted(oracle, perturbation, holdout, objective.target_class, **kw)
