"""Universal adversarial perturbations under a per-image query budget.

Two black-box attacks share one tile parametrisation and one query ledger:
``run_yoqo`` spends a single query per image and searches with CMA-ES,
``run_yoqt`` spends two and climbs finite-difference gradient signs.
"""

from . import cma
from ._kernels import backend
from .attacks import AttackReport, YoqoConfig, YoqtConfig, run_yoqo, run_yoqt
from .data import Dataset, DatasetStream, load_dataset, load_idx
from .errors import (
    BudgetError,
    ConfigurationError,
    DatasetExhausted,
    DivergenceError,
    EvaluationError,
    NumericalDegeneracyError,
    ParseError,
    ProtocolError,
    QuapError,
    RunError,
    ShapeError,
)
from .evaluation import EvaluationResult, evaluate, evaluate_targeted, evaluate_untargeted
from .finite_diff import BasisKind, DirectionBasis
from .ledger import QueryLedger, audit_neighborhoods
from .losses import AttackObjective
from .oracle import ClassifierOracle, FeedForwardModel, load_model, save_model, train_reference
from .perturbation import PerturbationTile, UniversalPerturbation, tile_expand

__version__ = "0.1.0"

__all__ = [
    "AttackObjective",
    "AttackReport",
    "BasisKind",
    "BudgetError",
    "ClassifierOracle",
    "ConfigurationError",
    "Dataset",
    "DatasetExhausted",
    "DatasetStream",
    "DirectionBasis",
    "DivergenceError",
    "EvaluationError",
    "EvaluationResult",
    "FeedForwardModel",
    "NumericalDegeneracyError",
    "ParseError",
    "PerturbationTile",
    "ProtocolError",
    "QuapError",
    "QueryLedger",
    "RunError",
    "ShapeError",
    "UniversalPerturbation",
    "YoqoConfig",
    "YoqtConfig",
    "audit_neighborhoods",
    "backend",
    "cma",
    "evaluate",
    "evaluate_targeted",
    "evaluate_untargeted",
    "load_dataset",
    "load_idx",
    "load_model",
    "run_yoqo",
    "run_yoqt",
    "save_model",
    "tile_expand",
    "train_reference",
]
