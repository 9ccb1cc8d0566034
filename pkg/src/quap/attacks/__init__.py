from .base import AttackReport, OracleLoss
from .yoqo import YoqoConfig, fitness_of_tile, run_yoqo
from .yoqt import MomentumState, YoqtConfig, run_yoqt, sign_step

__all__ = [
    "AttackReport",
    "MomentumState",
    "OracleLoss",
    "YoqoConfig",
    "YoqtConfig",
    "fitness_of_tile",
    "run_yoqo",
    "run_yoqt",
    "sign_step",
]
