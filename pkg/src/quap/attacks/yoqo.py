"""One query per image: evolve a perturbation tile with CMA-ES.

Each generation draws ``population_size`` tiles from the search
distribution, scores every tile on its own batch of never-seen images and
hands the ranking to the CMA-ES update. Every image is queried exactly once.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .. import cma
from ..errors import ConfigurationError
from ..ledger import QueryLedger
from ..losses import AttackObjective
from ..perturbation import PerturbationTile, perturb_batch, tile_expand
from .base import (
    AttackReport,
    OracleLoss,
    Stopwatch,
    as_stream,
    check_labels,
    config_dict,
    snapshot_checkpoints,
)

PICKS = ("best", "generation", "mean")


@dataclass(frozen=True)
class YoqoConfig:
    tile_side: int = 7
    population_size: int = 150
    batch_size: int = 1
    max_iterations: int | None = None
    epsilon: float = 0.3
    initial_step: float | None = None
    objective: AttackObjective = field(default_factory=AttackObjective.untargeted)
    seed: int = 0
    # "best": best tile ever evaluated; "generation": best tile of the final
    # generation; "mean": the search distribution's mean clamped to the box
    pick: str = "best"
    checkpoints: tuple = ()
    # CMA-ES learns from the raw draws ("raw") or the clamped tiles ("clamped")
    update_on: str = "raw"

    def __post_init__(self):
        if self.tile_side < 1 or self.population_size < 2 or self.batch_size < 1:
            raise ConfigurationError("tile_side >= 1, population_size >= 2, batch_size >= 1 required")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")
        if self.pick not in PICKS:
            raise ConfigurationError(f"pick must be one of {PICKS}")
        if self.update_on not in ("raw", "clamped"):
            raise ConfigurationError("update_on must be 'raw' or 'clamped'")

    @property
    def sigma0(self):
        return 0.6 * self.epsilon if self.initial_step is None else self.initial_step

    @property
    def images_per_generation(self):
        return self.population_size * self.batch_size


def fitness_of_tile(tile, batch, oracle_loss, epsilon=None, ledger=None):
    """Mean attacker loss of one tile over a batch, one query per image."""
    tile = tile.data if isinstance(tile, PerturbationTile) else np.asarray(tile)
    points, dist = perturb_batch(batch.images, tile)
    if ledger is not None:
        ledger.record_batch(batch.ids, dist, epsilon)
    return float(np.mean(oracle_loss(points, batch.labels)))


def _generation_fitness(tiles, batch, loss_fn, config, ledger):
    """Score each of the stacked tiles on its own ``batch_size`` images."""
    b = config.batch_size
    per_image = np.repeat(tiles, b, axis=0)
    points, dist = perturb_batch(batch.images, per_image)
    ledger.record_batch(batch.ids, dist, config.epsilon)
    losses = loss_fn(points, batch.labels)
    return losses.reshape(len(tiles), b).mean(axis=1)


def run_yoqo(oracle, dataset, config, ledger=None, trace=None):
    """Run the attack until ``max_iterations`` generations or the data runs out.

    ``dataset`` is a ``DatasetStream`` or a ``Dataset`` (shuffled with
    ``config.seed``). Returns the expanded perturbation and an
    :class:`AttackReport`; the report's ``extras`` hold the best-ever tile,
    the last generation's best tile and the final distribution mean.
    """
    stream = as_stream(dataset, config.seed)
    check_labels(stream, config.objective)
    h, w, c = stream.dataset.image_shape
    l = config.tile_side
    if l > min(h, w):
        raise ConfigurationError(f"tile side {l} exceeds image size {h}x{w}")
    if stream.remaining < config.images_per_generation:
        raise ConfigurationError(
            f"need {config.images_per_generation} images for one generation, have {stream.remaining}"
        )
    ledger = QueryLedger(1, config.epsilon) if ledger is None else ledger
    tile_shape = (l, l, c)
    n = l * l * c
    params = cma.default_params(n, config.population_size)
    state = cma.initial_state(n, config.sigma0)
    rng = np.random.default_rng(config.seed)
    loss_fn = OracleLoss(oracle, config.objective)
    start_queries = oracle.query_counter
    start_images = stream.consumed

    report = AttackReport("yoqo", config_dict(config), queries_per_image=1)
    best_tile, best_f = np.zeros(tile_shape), -np.inf
    gen_tile = np.zeros(tile_shape)

    def current_pick():
        if config.pick == "best":
            return best_tile
        if config.pick == "generation":
            return gen_tile
        return np.clip(state.mean, -config.epsilon, config.epsilon).reshape(tile_shape)

    snapshot_checkpoints(report, config.checkpoints, 0, current_pick())
    with Stopwatch() as clock:
        report.stop_reason = "max_iterations"
        while config.max_iterations is None or report.iterations < config.max_iterations:
            if stream.remaining < config.images_per_generation:
                report.stop_reason = "exhausted"
                break
            z, raw = cma.sample_population(state, params, config.epsilon, rng, return_raw=True)
            tiles = z.reshape((config.population_size,) + tile_shape)
            batch = stream.take(config.images_per_generation)
            f = _generation_fitness(tiles, batch, loss_fn, config, ledger)
            loss_fn.drain()
            # the engine minimises, the attacker maximises
            ranked = cma.rank_population(raw if config.update_on == "raw" else z, -f)
            j = int(np.argmax(f))
            gen_tile = tiles[j].copy()
            if f[j] > best_f:
                best_f, best_tile = float(f[j]), tiles[j].copy()
            before = state.repairs
            state = cma.update(state, params, ranked)
            report.iterations += 1
            report.loss_trace.append(float(f[j]))
            report.extras.setdefault("mean_fitness", []).append(float(f.mean()))
            if trace is not None:
                rec = cma.trace_record(state, cma.rank_population(z, f, maximize=True), state.repairs > before)
                trace.write(json.dumps(rec) + "\n")
            snapshot_checkpoints(
                report, config.checkpoints, stream.consumed - start_images, current_pick()
            )
    report.wall_time = clock.elapsed
    report.images_consumed = stream.consumed - start_images
    report.total_queries = oracle.query_counter - start_queries
    report.ledger = ledger.summary().to_dict()
    report.extras.update(
        best_tile=best_tile,
        best_fitness=best_f,
        generation_tile=gen_tile,
        mean_tile=np.clip(state.mean, -config.epsilon, config.epsilon).reshape(tile_shape),
        cma_state=state,
        ledger=ledger,
    )
    tile = PerturbationTile(current_pick(), config.epsilon)
    return tile_expand(tile, h, w), report

