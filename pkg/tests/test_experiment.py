import json

import numpy as np
import pytest

from quap.data import read_uapt
from quap.errors import ConfigurationError, RunError
from quap.experiment import ExperimentConfig, float32_within, load_inputs, run_experiment
from quap.ledger import QueryLedger


def toy_config(d, **kw):
    base = dict(
        algorithm="yoqt", dataset=d / "query.uapt", labels=d / "query.uapl",
        holdout=d / "holdout.uapt", holdout_labels=d / "holdout.uapl", oracle=d / "oracle.nnw",
        tile_size=2, epsilon=0.2, batch=5, directions=2, repetitions=1,
    )
    base.update(kw)
    return ExperimentConfig.from_mapping(base)


# ---------------------------------------------------------------- config


def test_config_text_parsing(tmp_path):
    text = "algorithm = yoqo  # one query\n\ndataset = q.uapt\noracle = /abs/m.nnw\nbatch = none\ncheckpoints = 500, 1000\n"
    cfg = ExperimentConfig.from_text(text, tmp_path)
    assert cfg.dataset == str(tmp_path / "q.uapt") and cfg.oracle == "/abs/m.nnw"
    assert cfg.batch is None and cfg.batch_size == 1
    assert cfg.checkpoints == (500, 1000)
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


def test_config_defaults_follow_the_algorithm():
    assert ExperimentConfig("yoqt", "d", "o").batch_size == 10
    assert ExperimentConfig("yoqt", "d", "o").objective.needs_labels
    assert not ExperimentConfig("yoqo", "d", "o", target_class=3).objective.needs_labels


@pytest.mark.parametrize(
    "text",
    [
        "algorithm = yoqt\nalgorithm = yoqo\ndataset = d\noracle = o",
        "algorithm = yoqt\ndataset = d\noracle = o\nwidth = 3",
        "algorithm = sgd\ndataset = d\noracle = o",
        "algorithm = yoqt\ndataset = d\noracle = o\nbasis = wavelet",
        "algorithm = yoqt\ndataset = d\noracle = o\nrepetitions = 0",
        "algorithm = yoqt\ndataset = d\noracle = o\nepsilon = large",
        "algorithm yoqt",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text(text)


def test_digest_and_per_run_seeds():
    cfg = ExperimentConfig("yoqo", "d", "o", seed=10)
    assert cfg.digest() == ExperimentConfig("yoqo", "d", "o", seed=10).digest()
    assert cfg.digest() != ExperimentConfig("yoqo", "d", "o", seed=11).digest()
    assert cfg.attack_config(3).seed == 13


def test_float32_within_never_exceeds_epsilon():
    out = float32_within(np.array([0.3, -0.3, 0.1]), 0.3)
    assert np.abs(out.astype(np.float64)).max() <= 0.3
    assert out[2] == np.float32(0.1)


def test_separate_holdout_ids_follow_the_query_ids(toy_files):
    query, held, model = load_inputs(toy_config(toy_files))
    assert held.ids.min() == len(query)
    assert model.input_shape == (4, 4, 1)
    query, held, _ = load_inputs(toy_config(toy_files, holdout=None, holdout_labels=None))
    assert len(held) == 100 and not set(query.ids) & set(held.ids)


# ---------------------------------------------------------------- runs


def test_single_repetition_median_is_its_rate(toy_files, tmp_path):
    result = run_experiment(toy_config(toy_files), tmp_path)
    assert result.median_rate == result.rates[0]
    run = tmp_path / "run_000"
    for name in ("perturbation.uapt", "tile.uapt", "perturbation.json", "report.json", "evaluation.json", "ledger.jsonl"):
        assert (run / name).exists()


def test_five_repetitions_reproduce_byte_for_byte(toy_files, tmp_path):
    cfg = toy_config(toy_files, repetitions=5, checkpoints=(100, 600))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert a.median_rate == sorted(a.rates)[2]
    first = (tmp_path / "a" / "results.jsonl").read_bytes()
    assert first == (tmp_path / "b" / "results.jsonl").read_bytes()
    lines = [json.loads(line) for line in first.decode().splitlines()]
    assert [r["run_index"] for r in lines[:-1]] == list(range(5))
    assert [r["seed"] for r in lines[:-1]] == list(range(5))
    summary = lines[-1]
    assert summary["record"] == "summary" and summary["median_success_rate"] == a.median_rate
    assert set(summary["median_checkpoint_rates"]) == {"100", "600"}


def test_saved_artifacts_reload_within_the_ball(toy_files, tmp_path):
    run_experiment(toy_config(toy_files, algorithm="yoqo", population=6, batch=1), tmp_path)
    run = tmp_path / "run_000"
    pert = read_uapt(run / "perturbation.uapt")
    tile = read_uapt(run / "tile.uapt")
    assert pert.shape == (1, 4, 4, 1) and tile.shape == (1, 2, 2, 1)
    assert np.abs(pert.astype(np.float64)).max() <= 0.2
    side = json.loads((run / "perturbation.json").read_text())
    assert side["queries_per_image"] == 1 and side["images_queried"] == side["oracle_calls"]
    ledger = QueryLedger.load(run / "ledger.jsonl")
    assert ledger.summary().max_per_image == 1 and len(ledger) == side["oracle_calls"]


def test_parallel_jobs_write_the_same_results(toy_files, tmp_path):
    cfg = toy_config(toy_files, repetitions=2)
    run_experiment(cfg, tmp_path / "serial")
    run_experiment(cfg, tmp_path / "pool", jobs=2)
    assert (tmp_path / "serial" / "results.jsonl").read_bytes() == (tmp_path / "pool" / "results.jsonl").read_bytes()


def test_failures_name_the_run(toy_files, tmp_path):
    cfg = toy_config(toy_files, algorithm="yoqo", population=1000, batch=1)
    with pytest.raises(RunError) as info:
        run_experiment(cfg, tmp_path)
    assert info.value.run_index == 0 and str(info.value).startswith("run 0:")
