"""Constrained prefix/suffix embedding optimization.

Trainable insert tokens are built as rotated low-rank combinations of an
orthonormal basis, spliced around a frozen prompt embedding, and tuned by a
projected Adam loop against a pluggable reward oracle. Oracles may run
in-process (analytic scorers) or behind a newline-delimited JSON protocol.
"""

from .augment import AugmentedEmbedding, PromptEmbedding, synthetic_prompt
from .inserts import InsertionParams, ParamGrads, init_params, param_count
from .linalg import Mat, SeededRng
from .optim import (
    CosineSchedule,
    Mode,
    RunMetrics,
    StepDecay,
    TrainConfig,
    TrainingAborted,
    mix_inserts,
    train_batch,
    train_promptwise,
)
from .rewards import (
    OracleResult,
    RewardOracle,
    cosine_oracle,
    finite_diff_grad,
    net_oracle,
    quadratic_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedEmbedding",
    "CosineSchedule",
    "InsertionParams",
    "Mat",
    "Mode",
    "OracleResult",
    "ParamGrads",
    "PromptEmbedding",
    "RewardOracle",
    "RunMetrics",
    "SeededRng",
    "StepDecay",
    "TrainConfig",
    "TrainingAborted",
    "cosine_oracle",
    "finite_diff_grad",
    "init_params",
    "mix_inserts",
    "net_oracle",
    "param_count",
    "quadratic_oracle",
    "synthetic_prompt",
    "train_batch",
    "train_promptwise",
    "__version__",
]
