"""Two-Gaussian toy problem with a closed-form softmax-regression oracle.

Small enough (at most 64 inputs, at most 16 tile coordinates) that the best
corner perturbation can be found by enumerating every sign pattern, which
gives a ground truth to compare the black-box attacks against.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import sign_pattern_scan
from .data import Dataset
from .errors import ConfigurationError, EvaluationError
from .oracle import DenseLayer, FeedForwardModel
from .perturbation import expand_array


@dataclass(frozen=True)
class TwoGaussianTask:
    """Class-conditional isotropic Gaussians ``N(mean_k, noise^2 I)`` in [0, 1]."""

    mean0: np.ndarray
    mean1: np.ndarray
    noise: float
    prior1: float
    image_shape: tuple

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        labels = (rng.random(n) < self.prior1).astype(np.int64)
        means = np.where(labels[:, None] == 1, self.mean1.ravel(), self.mean0.ravel())
        x = means + self.noise * rng.standard_normal(means.shape)
        images = np.clip(x, 0.0, 1.0).reshape((n,) + self.image_shape)
        return Dataset(images, labels)

    def bayes_model(self):
        """Softmax regression with the Bayes-optimal weights for the unclipped mixture."""
        m0, m1 = self.mean0.ravel(), self.mean1.ravel()
        var = self.noise**2
        w = np.stack([m0, m1], axis=1) / var
        b = np.array(
            [
                -m0 @ m0 / (2 * var) + np.log(1.0 - self.prior1),
                -m1 @ m1 / (2 * var) + np.log(self.prior1),
            ]
        )
        return FeedForwardModel([DenseLayer(w, b, "identity")], self.image_shape)


def two_gaussian_task(side=8, channels=1, separation=0.05, noise=0.2, prior1=0.5, seed=0):
    """Means ``0.5 -+ separation * s`` for a random sign image ``s``."""
    if side * side * channels > 64:
        raise ConfigurationError("the toy problem is limited to 64 input dimensions")
    rng = np.random.default_rng(seed)
    shape = (side, side, channels)
    s = rng.choice([-1.0, 1.0], size=shape)
    return TwoGaussianTask(0.5 - separation * s, 0.5 + separation * s, float(noise), float(prior1), shape)


def _affine_weights(model):
    if len(model.layers) != 1 or model.layers[0].activation != "identity":
        raise ConfigurationError("brute force needs a single affine layer")
    return model.layers[0].weight, model.layers[0].bias


def sign_contributions(model, images, tile_side, epsilon):
    """Logit change per image, tile coordinate and sign option (-eps, +eps).

    Exact for an affine model: clipping acts pixel by pixel, so the change
    from coordinate ``q`` only involves the pixels that replicate it.
    """
    w, _ = _affine_weights(model)
    n, h, wd, c = images.shape
    m = tile_side * tile_side * c
    # owner[p] = tile coordinate that pixel p copies
    owner = expand_array(np.arange(m, dtype=np.float64).reshape(tile_side, tile_side, c), h, wd)
    owner = owner.astype(np.int64).ravel()
    flat = images.reshape(n, -1)
    contrib = np.zeros((n, m, 2, w.shape[1]))
    for o, d in enumerate((-epsilon, epsilon)):
        change = np.clip(flat + d, 0.0, 1.0) - flat
        for q in range(m):
            cols = owner == q
            contrib[:, q, o, :] = change[:, cols] @ w[cols]
    return contrib


@dataclass
class BruteForceResult:
    success_rate: float
    success_count: int
    eligible_count: int
    tile: np.ndarray
    counts: np.ndarray


def brute_force_optimum(model, holdout, tile_side, epsilon, target=None):
    """Best holdout success rate over every corner tile ``eps * {-1, +1}^m``.

    Eligibility follows the attack evaluation: correctly classified images
    for untargeted, images not already assigned to ``target`` otherwise.
    """
    images = np.asarray(holdout.images, dtype=np.float64)
    logits = model(images)
    pred = logits.argmax(axis=1)
    if target is None:
        eligible = pred == holdout.labels
    else:
        eligible = pred != target
    if not eligible.any():
        raise EvaluationError("no eligible holdout images")
    images, logits = images[eligible], logits[eligible]
    labels = holdout.labels[eligible] if holdout.labels is not None else np.zeros(len(images), np.int64)
    contrib = sign_contributions(model, images, tile_side, epsilon)
    counts = sign_pattern_scan(logits, contrib, labels, -1 if target is None else int(target))
    best = int(np.argmax(counts))
    c = images.shape[3]
    m = tile_side * tile_side * c
    bits = (best >> np.arange(m)) & 1
    tile = np.where(bits == 1, epsilon, -epsilon).astype(np.float64).reshape(tile_side, tile_side, c)
    n_el = int(eligible.sum())
    return BruteForceResult(int(counts[best]) / n_el, int(counts[best]), n_el, tile, counts)
