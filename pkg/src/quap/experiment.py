"""Seeded repetitions of an attack, with every artifact written to disk.

A config is a flat ``key = value`` text file; ``#`` starts a comment.
Relative paths are resolved against the config file's directory. Run ``k``
uses seed ``seed + k`` and writes to ``<out>/run_<k>/``; one line per run
plus a closing summary line go to ``<out>/results.jsonl``. Wall-clock
times appear only in the per-run ``report.json``, so rerunning a config
reproduces ``results.jsonl`` byte for byte.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from .attacks import YoqoConfig, YoqtConfig, run_yoqo, run_yoqt
from .data import Dataset, load_dataset, write_uapt
from .errors import ConfigurationError, QuapError, RunError
from .evaluation import evaluate
from .finite_diff import BasisKind
from .losses import AttackObjective
from .oracle import ClassifierOracle, load_model
from .perturbation import expand_array

log = logging.getLogger(__name__)

ALGORITHMS = ("yoqo", "yoqt")
PATH_KEYS = ("dataset", "labels", "holdout", "holdout_labels", "oracle")


def _opt_int(v):
    return None if v in (None, "", "none") else int(v)


def _opt_float(v):
    return None if v in (None, "", "none") else float(v)


def _opt_str(v):
    return None if v in (None, "", "none") else str(v)


def _int_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    dataset: str
    oracle: str
    labels: str | None = None
    holdout: str | None = None
    holdout_labels: str | None = None
    # used only when no separate holdout file is given
    holdout_fraction: float = 1 / 6
    tile_size: int = 7
    population: int = 150
    batch: int | None = None
    directions: int = 1
    basis_size: int | None = None
    sigma0: float | None = None
    mu: float = 0.0005
    eta: float = 1.0
    basis: str = "fft"
    epsilon: float = 0.3
    target_class: int | None = None
    seed: int = 0
    repetitions: int = 5
    iterations: int | None = None
    checkpoints: tuple = ()
    pick: str = "best"
    update_on: str = "raw"

    _CONVERT = {
        "algorithm": str,
        "dataset": str,
        "oracle": str,
        "labels": _opt_str,
        "holdout": _opt_str,
        "holdout_labels": _opt_str,
        "holdout_fraction": float,
        "tile_size": int,
        "population": int,
        "batch": _opt_int,
        "directions": int,
        "basis_size": _opt_int,
        "sigma0": _opt_float,
        "mu": float,
        "eta": float,
        "basis": str,
        "epsilon": float,
        "target_class": _opt_int,
        "seed": int,
        "repetitions": int,
        "iterations": _opt_int,
        "checkpoints": _int_tuple,
        "pick": str,
        "update_on": str,
    }

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            object.__setattr__(self, f.name, self._CONVERT[f.name](value))
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be at least 1")
        BasisKind(self.basis)

    @property
    def batch_size(self):
        if self.batch is not None:
            return self.batch
        return 1 if self.algorithm == "yoqo" else 10

    @property
    def objective(self):
        if self.target_class is None:
            return AttackObjective.untargeted()
        return AttackObjective.targeted(self.target_class)

    @classmethod
    def from_mapping(cls, mapping, base_dir=None):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        values = dict(mapping)
        if base_dir is not None:
            for key in PATH_KEYS:
                v = values.get(key)
                if v not in (None, "", "none") and not Path(v).is_absolute():
                    values[key] = str(Path(base_dir) / v)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        except ValueError as exc:
            if isinstance(exc, QuapError):
                raise
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_text(cls, text, base_dir=None):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        return cls.from_mapping(values, base_dir)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        return cls.from_text(path.read_text(), path.parent)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(str(x) for x in v)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def attack_config(self, run_index):
        seed = self.seed + run_index
        if self.algorithm == "yoqo":
            return YoqoConfig(
                tile_side=self.tile_size,
                population_size=self.population,
                batch_size=self.batch_size,
                max_iterations=self.iterations,
                epsilon=self.epsilon,
                initial_step=self.sigma0,
                objective=self.objective,
                seed=seed,
                pick=self.pick,
                checkpoints=self.checkpoints,
                update_on=self.update_on,
            )
        return YoqtConfig(
            tile_side=self.tile_size,
            batch_size=self.batch_size,
            directions_per_step=self.directions,
            max_iterations=self.iterations,
            smoothing=self.mu,
            step_size=self.eta,
            epsilon=self.epsilon,
            basis=self.basis,
            basis_size=self.basis_size,
            objective=self.objective,
            seed=seed,
            checkpoints=self.checkpoints,
        )


@dataclass
class ExperimentResult:
    config_hash: str
    rates: list
    median_rate: float
    runs: list = field(default_factory=list)

    def to_dict(self):
        return {
            "record": "summary",
            "config_hash": self.config_hash,
            "rates": self.rates,
            "median_success_rate": self.median_rate,
        }


def float32_within(values, epsilon):
    """float32 copy of ``values`` whose magnitudes never exceed ``epsilon``.

    Rounding to float32 can push a coordinate sitting exactly on the bound
    just past it; such coordinates are pulled back by one ulp.
    """
    lim = np.float32(epsilon)
    if float(lim) > epsilon:
        lim = np.nextafter(lim, np.float32(0))
    return np.clip(np.asarray(values, dtype=np.float32), -lim, lim)


def load_inputs(config):
    """(query set, holdout set, model) with disjoint image ids."""
    data = load_dataset(config.dataset, config.labels)
    if config.holdout is not None:
        held = load_dataset(config.holdout, config.holdout_labels)
        # separate files would otherwise both number their images from 0
        held = Dataset(held.images, held.labels, held.ids + len(data))
        query = data
    else:
        query, held = data.split_holdout(config.holdout_fraction, config.seed)
    model = load_model(config.oracle, query.image_shape)
    return query, held, model


@lru_cache(maxsize=2)
def _cached_inputs(config):
    return load_inputs(config)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def run_repetition(config, run_index, inputs, out_dir):
    """One seeded attack plus its holdout evaluation; returns the run record."""
    query, holdout, model = inputs
    oracle = ClassifierOracle(model)
    acfg = config.attack_config(run_index)
    attack = run_yoqo if config.algorithm == "yoqo" else run_yoqt
    perturbation, report = attack(oracle, query, acfg)

    ledger = report.extras["ledger"]
    overlap = np.intersect1d(ledger.base_ids(), holdout.ids)
    if len(overlap):
        raise RunError(f"{len(overlap)} holdout images were queried", run_index)
    if report.total_queries != oracle.query_counter:
        raise RunError("report query count disagrees with the oracle counter", run_index)

    result = evaluate(model, perturbation, holdout, config.objective)
    h, w, _ = query.image_shape
    checkpoint_rates = {
        str(k): evaluate(model, expand_array(t, h, w), holdout, config.objective).success_rate
        for k, t in sorted(report.checkpoints.items())
    }

    run_dir = Path(out_dir) / f"run_{run_index:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    tile = perturbation.data[: acfg.tile_side, : acfg.tile_side]
    write_uapt(run_dir / "perturbation.uapt", float32_within(perturbation.data, config.epsilon))
    write_uapt(run_dir / "tile.uapt", float32_within(tile, config.epsilon))
    sidecar = {
        "algorithm": config.algorithm,
        "config_hash": config.digest(),
        "run_index": run_index,
        "seed": acfg.seed,
        "epsilon": config.epsilon,
        "images_queried": report.images_consumed,
        "oracle_calls": report.total_queries,
        "queries_per_image": report.queries_per_image,
    }
    _dump(run_dir / "perturbation.json", sidecar)
    _dump(run_dir / "report.json", report.to_dict())
    _dump(run_dir / "evaluation.json", result.to_dict())
    ledger.save(run_dir / "ledger.jsonl")

    return {
        "record": "run",
        "run_index": run_index,
        "seed": acfg.seed,
        "algorithm": config.algorithm,
        "config_hash": config.digest(),
        "success_rate": result.success_rate,
        "eligible_count": result.eligible_count,
        "success_count": result.success_count,
        "images_queried": report.images_consumed,
        "oracle_calls": report.total_queries,
        "iterations": report.iterations,
        "stop_reason": report.stop_reason,
        "ledger_max_per_image": report.ledger["max_per_image"],
        "ledger_violations": report.ledger["violations"],
        "checkpoint_rates": checkpoint_rates,
    }


def _guarded(config, k, inputs, out_dir):
    try:
        return run_repetition(config, k, inputs, out_dir)
    except RunError:
        raise
    except Exception as exc:
        raise RunError(f"{type(exc).__name__}: {exc}", k) from exc


def _worker(args):
    config, k, out_dir = args
    return _guarded(config, k, _cached_inputs(config), out_dir)


def run_experiment(config, out_dir, jobs=1, inputs=None):
    """Run every repetition and write the artifacts; returns the summary.

    ``jobs > 1`` runs repetitions in worker processes, each loading its own
    data and oracle. ``inputs`` short-circuits loading in-process.
    """
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.from_file(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text())
    indices = range(config.repetitions)
    if jobs > 1 and inputs is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_worker, [(config, k, str(out)) for k in indices]))
    else:
        inputs = load_inputs(config) if inputs is None else inputs
        runs = []
        for k in indices:
            runs.append(_guarded(config, k, inputs, out))
            log.info("run %d: success rate %.4f", k, runs[-1]["success_rate"])

    rates = [r["success_rate"] for r in runs]
    result = ExperimentResult(config.digest(), rates, float(np.median(rates)), runs)
    summary = result.to_dict()
    if config.checkpoints:
        keys = runs[0]["checkpoint_rates"].keys()
        summary["median_checkpoint_rates"] = {
            k: float(np.median([r["checkpoint_rates"][k] for r in runs])) for k in keys
        }
    with open(out / "results.jsonl", "w") as fh:
        for r in runs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return result
