"""Two queries per image: momentum sign ascent on finite-difference gradients.

Every iteration estimates the gradient of the attacker loss with respect to
the tile along ``directions_per_step`` basis directions, each on a fresh
batch queried at ``delta +- mu z``. The estimate is folded into a running
average with weight one half, and the tile steps by ``eta`` in the sign of
that average before being projected back into the epsilon ball.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..finite_diff import BasisKind, DirectionBasis, FdConfig, averaged_gradient
from ..ledger import QueryLedger
from ..losses import AttackObjective
from ..perturbation import PerturbationTile, project_linf, tile_expand
from .base import (
    AttackReport,
    OracleLoss,
    Stopwatch,
    as_stream,
    check_labels,
    config_dict,
    snapshot_checkpoints,
)


@dataclass(frozen=True)
class YoqtConfig:
    tile_side: int = 7
    batch_size: int = 10
    directions_per_step: int = 1
    max_iterations: int | None = None
    smoothing: float = 0.0005
    step_size: float = 1.0
    epsilon: float = 0.3
    basis: BasisKind = BasisKind.FFT
    # number of leading basis vectors to cycle through; None means all
    basis_size: int | None = None
    objective: AttackObjective = field(default_factory=AttackObjective.untargeted)
    seed: int = 0
    checkpoints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "basis", BasisKind(self.basis))
        if self.tile_side < 1 or self.batch_size < 1 or self.directions_per_step < 1:
            raise ConfigurationError("tile_side, batch_size and directions_per_step must be >= 1")
        if not self.epsilon > 0 or not self.smoothing > 0 or not self.step_size > 0:
            raise ConfigurationError("epsilon, smoothing and step_size must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")

    @property
    def images_per_iteration(self):
        return self.directions_per_step * self.batch_size


@dataclass
class MomentumState:
    g_avg: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    def push(self, g_hat):
        self.g_avg = 0.5 * self.g_avg + 0.5 * np.asarray(g_hat, dtype=np.float64)
        return self.g_avg


def sign_step(delta, g_avg, eta, epsilon):
    """``P_eps(delta + eta * sign(g_avg))`` with ``sign(0) = 0``."""
    return project_linf(np.asarray(delta, dtype=np.float64) + eta * np.sign(g_avg), epsilon)


def run_yoqt(oracle, dataset, config, ledger=None, keep_history=False):
    """Run the attack for ``max_iterations`` iterations or until the data runs out.

    With ``keep_history`` the report's ``extras`` carry every gradient
    estimate and momentum vector, in iteration order.
    """
    stream = as_stream(dataset, config.seed)
    check_labels(stream, config.objective)
    h, w, c = stream.dataset.image_shape
    l = config.tile_side
    if l > min(h, w):
        raise ConfigurationError(f"tile side {l} exceeds image size {h}x{w}")
    if stream.remaining < config.images_per_iteration:
        raise ConfigurationError(
            f"need {config.images_per_iteration} images for one iteration, have {stream.remaining}"
        )
    ledger = QueryLedger(2, config.epsilon) if ledger is None else ledger
    tile_shape = (l, l, c)
    basis = DirectionBasis(config.basis, tile_shape, config.basis_size, seed=config.seed)
    fd = FdConfig(config.smoothing, config.directions_per_step, config.batch_size, basis)
    loss_fn = OracleLoss(oracle, config.objective)
    start_queries = oracle.query_counter
    start_images = stream.consumed

    report = AttackReport("yoqt", config_dict(config), queries_per_image=2)
    delta = np.zeros(tile_shape)
    momentum = MomentumState.zeros(tile_shape)
    history = {"g_hat": [], "g_avg": []}
    snapshot_checkpoints(report, config.checkpoints, 0, delta)
    with Stopwatch() as clock:
        report.stop_reason = "max_iterations"
        t = 0
        while config.max_iterations is None or t < config.max_iterations:
            if stream.remaining < config.images_per_iteration:
                report.stop_reason = "exhausted"
                break
            g_hat = averaged_gradient(loss_fn, stream, delta, fd, t, config.epsilon, ledger)
            g_avg = momentum.push(g_hat)
            delta = sign_step(delta, g_avg, config.step_size, config.epsilon)
            if keep_history:
                history["g_hat"].append(g_hat.copy())
                history["g_avg"].append(g_avg.copy())
            report.loss_trace.append(float(loss_fn.drain().mean()))
            t += 1
            report.iterations = t
            snapshot_checkpoints(report, config.checkpoints, stream.consumed - start_images, delta)
    report.wall_time = clock.elapsed
    report.images_consumed = stream.consumed - start_images
    report.total_queries = oracle.query_counter - start_queries
    report.ledger = ledger.summary().to_dict()
    report.extras.update(tile=delta.copy(), ledger=ledger, basis=basis)
    if keep_history:
        report.extras["history"] = history
    tile = PerturbationTile(delta, config.epsilon)
    return tile_expand(tile, h, w), report
