"""Command line entry point: ``quap <subcommand>``.

Every subcommand prints line-delimited JSON records on stdout.
"""

import json
import logging
import sys
from dataclasses import asdict, fields

import click
import numpy as np

from .data import load_dataset, read_uapt
from .errors import QuapError
from .evaluation import evaluate_targeted, evaluate_untargeted
from .experiment import ExperimentConfig, run_experiment
from .ledger import QueryLedger, audit_neighborhoods
from .oracle import load_model, save_model, train_reference
from .perturbation import expand_array

# CLI flag -> config key
ATTACK_FLAGS = {
    "algorithm": "algorithm",
    "epsilon": "epsilon",
    "tile_side": "tile_size",
    "population": "population",
    "batch": "batch",
    "directions": "directions",
    "basis_size": "basis_size",
    "sigma0": "sigma0",
    "mu": "mu",
    "eta": "eta",
    "basis": "basis",
    "target_class": "target_class",
    "iterations": "iterations",
    "seed": "seed",
    "repetitions": "repetitions",
    "dataset": "dataset",
    "labels": "labels",
    "holdout": "holdout",
    "holdout_labels": "holdout_labels",
    "oracle": "oracle",
    "checkpoints": "checkpoints",
    "fidelity_pick": "pick",
    "update_on": "update_on",
}


def _emit(record):
    click.echo(json.dumps(record, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Universal perturbations under a per-image query budget."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr)


@main.command("train-oracle")
@click.option("--dataset", required=True, type=click.Path(exists=True), help="Training images (IDX or UAPT).")
@click.option("--labels", required=True, type=click.Path(exists=True))
@click.option("--holdout", type=click.Path(exists=True), help="Images for reporting holdout accuracy.")
@click.option("--holdout-labels", type=click.Path(exists=True))
@click.option("--hidden", default="128", show_default=True, help="Hidden widths, comma separated; empty for softmax regression.")
@click.option("--epochs", default=5, show_default=True)
@click.option("--lr", "learning_rate", default=0.1, show_default=True)
@click.option("--batch", "batch_size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Where to write the NNW1 weight file.")
def train_oracle(dataset, labels, holdout, holdout_labels, hidden, epochs, learning_rate, batch_size, seed, out):
    """Train the dense reference classifier."""
    train = load_dataset(dataset, labels)
    held = load_dataset(holdout, holdout_labels) if holdout else None
    widths = tuple(int(h) for h in hidden.split(",") if h.strip())
    model, report = train_reference(
        train, widths, learning_rate, epochs, seed, batch_size=batch_size, holdout=held
    )
    save_model(out, model)
    _emit({"record": "training", "weights": str(out), **asdict(report)})


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), help="key = value config file; flags override it.")
@click.option("--algorithm", type=click.Choice(["yoqo", "yoqt"]))
@click.option("--epsilon", type=float)
@click.option("--tile-side", type=int)
@click.option("--population", type=int, help="CMA-ES population size (yoqo).")
@click.option("--batch", type=int, help="Images per fitness or gradient estimate.")
@click.option("--directions", type=int, help="Directions per iteration (yoqt).")
@click.option("--basis-size", type=int, help="Leading basis vectors to cycle through (yoqt).")
@click.option("--sigma0", type=float, help="Initial CMA-ES step size (yoqo).")
@click.option("--mu", type=float, help="Finite-difference smoothing (yoqt).")
@click.option("--eta", type=float, help="Sign step size (yoqt).")
@click.option("--basis", type=click.Choice(["fft", "canonical", "random"]))
@click.option("--target-class", type=int)
@click.option("--iterations", type=int)
@click.option("--seed", type=int)
@click.option("--repetitions", type=int)
@click.option("--dataset", type=click.Path(exists=True))
@click.option("--labels", type=click.Path(exists=True))
@click.option("--holdout", type=click.Path(exists=True))
@click.option("--holdout-labels", type=click.Path(exists=True))
@click.option("--oracle", type=click.Path(exists=True))
@click.option("--checkpoints", help="Image counts at which to snapshot the tile, e.g. '500,1000'.")
@click.option("--fidelity-pick", type=click.Choice(["best", "generation", "mean"]), help="Which tile yoqo returns.")
@click.option("--update-on", type=click.Choice(["raw", "clamped"]), help="Samples the yoqo distribution learns from.")
@click.option("--jobs", default=1, show_default=True, help="Repetitions run in parallel.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def attack(config_path, jobs, out, **flags):
    """Run seeded attack repetitions and evaluate them on the holdout."""
    values = {}
    if config_path:
        # paths inside the file come back already resolved against its directory
        from_file = ExperimentConfig.from_file(config_path)
        values = {f.name: getattr(from_file, f.name) for f in fields(from_file)}
    for flag, key in ATTACK_FLAGS.items():
        if flags[flag] is not None:
            values[key] = flags[flag]
    missing = [k for k in ("algorithm", "dataset", "oracle") if k not in values]
    if missing:
        raise click.UsageError(f"missing {', '.join(missing)} (give a flag or a --config entry)")
    config = ExperimentConfig.from_mapping(values)
    result = run_experiment(config, out, jobs=jobs)
    for r in result.runs:
        _emit(r)
    _emit(result.to_dict())


@main.command("evaluate")
@click.option("--perturbation", required=True, type=click.Path(exists=True), help="UAPT file holding one perturbation.")
@click.option("--oracle", required=True, type=click.Path(exists=True))
@click.option("--holdout", required=True, type=click.Path(exists=True))
@click.option("--holdout-labels", type=click.Path(exists=True))
@click.option("--target-class", type=int)
def evaluate_cmd(perturbation, oracle, holdout, holdout_labels, target_class):
    """Success rate of a saved perturbation on a holdout set."""
    pert = read_uapt(perturbation)
    if len(pert) != 1:
        raise click.UsageError(f"expected one perturbation, file holds {len(pert)}")
    held = load_dataset(holdout, holdout_labels)
    model = load_model(oracle, held.image_shape)
    h, w, _ = held.image_shape
    data = pert[0].astype(np.float64)
    if data.shape[:2] != (h, w):
        data = expand_array(data, h, w)
    if target_class is None:
        res = evaluate_untargeted(model, data, held)
    else:
        res = evaluate_targeted(model, data, held, target_class)
    _emit({"record": "evaluation", **res.to_dict()})


@main.command("audit-ledger")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", type=click.Path(exists=True), help="Query images, for the pairwise neighbourhood scan.")
@click.option("--epsilon", type=float, help="Defaults to the ledger's own epsilon.")
@click.option("--capacity", default=1024, show_default=True, help="Flagged pairs to list.")
def audit_ledger(ledger_path, dataset, epsilon, capacity):
    """Re-check a saved query ledger.

    Exit status: 0 clean, 1 budget or distance violations in the ledger,
    3 ledger clean but two queried images lie closer than 2 * epsilon.
    """
    ledger = QueryLedger.load(ledger_path)
    summary = ledger.summary()
    _emit({"record": "ledger", **summary.to_dict(), "clean": summary.clean})
    status = 0 if summary.clean else 1
    if dataset:
        eps = ledger.epsilon if epsilon is None else epsilon
        if eps is None:
            raise click.UsageError("the ledger records no epsilon; pass --epsilon")
        audit = audit_neighborhoods(ledger, load_dataset(dataset), eps, capacity)
        _emit({"record": "neighborhoods", **audit.to_dict()})
        if status == 0 and not audit.clean:
            status = 3
    sys.exit(status)


def run():
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except QuapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
