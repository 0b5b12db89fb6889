"""Reward oracles.

An oracle scores an augmented embedding and returns the gradient of that
score with respect to the embedding matrix. Everything downstream of the
embeddings (image sampling, learned scorers, remote processes) is the
oracle's private business. The analytic oracles here make the whole
optimizer verifiable at desk scale; a finite-difference checker validates
any oracle's gradient.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .augment import AugmentedEmbedding, PromptEmbedding
from .linalg import Mat, SeededRng, ShapeError, token_mean


class OracleError(RuntimeError):
    """Evaluation failed (bad input, undefined score, remote fault)."""


@dataclass(frozen=True)
class OracleResult:
    reward: float
    grad: Mat  # d(reward)/d(aug.emb), same shape as the input
    aux: dict | None = None


class RewardOracle(ABC):
    """Deterministic scorer of augmented embeddings."""

    @abstractmethod
    def evaluate(self, aug: AugmentedEmbedding, prompt: PromptEmbedding) -> OracleResult:
        ...

    @abstractmethod
    def describe(self) -> str:
        ...

    def dims(self) -> tuple[int | None, int | None]:
        """(embedding dimension, max token count); None means unconstrained."""
        return (None, None)


def _check_dims(aug: AugmentedEmbedding, expected_d: int | None):
    if expected_d is not None and aug.d != expected_d:
        raise OracleError(
            f"oracle expects embedding dimension {expected_d}, got {aug.d}"
        )


class _QuadraticOracle(RewardOracle):
    def __init__(self, target: Mat):
        if target.cols != 1:
            raise ShapeError(f"target must be a column vector, got {target.shape}")
        self._target = target

    def evaluate(self, aug, prompt):
        _check_dims(aug, self._target.rows)
        mu = token_mean(aug.emb).a
        diff = mu - self._target.a
        reward = -float(np.sum(diff * diff))
        col = -2.0 * diff / aug.total_tokens
        grad = Mat(np.broadcast_to(col, aug.emb.shape))
        return OracleResult(reward=reward, grad=grad)

    def describe(self):
        return f"quadratic(target {self._target.rows}-dim)"

    def dims(self):
        return (self._target.rows, None)


def quadratic_oracle(target: Mat) -> RewardOracle:
    """reward = -||mean(aug) - target||^2; maximal (zero) at mean == target."""
    return _QuadraticOracle(target)


class _CosineOracle(RewardOracle):
    def __init__(self, target: Mat):
        if target.cols != 1:
            raise ShapeError(f"target must be a column vector, got {target.shape}")
        self._t = target.a
        self._t_norm = float(np.sqrt(np.sum(self._t * self._t)))
        if self._t_norm == 0.0:
            raise ShapeError("cosine target must be nonzero")

    def evaluate(self, aug, prompt):
        _check_dims(aug, self._t.shape[0])
        mu = token_mean(aug.emb).a
        mu_norm = float(np.sqrt(np.sum(mu * mu)))
        if mu_norm <= 1e-12:
            raise OracleError("undefined cosine at zero mean")
        dot = float(np.sum(mu * self._t))
        reward = dot / (mu_norm * self._t_norm)
        # quotient rule: d/dmu = t/(|mu||t|) - dot * mu / (|mu|^3 |t|)
        d_mu = self._t / (mu_norm * self._t_norm) - dot * mu / (
            mu_norm**3 * self._t_norm
        )
        grad = Mat(np.broadcast_to(d_mu / aug.total_tokens, aug.emb.shape))
        return OracleResult(reward=reward, grad=grad)

    def describe(self):
        return f"cosine(target {self._t.shape[0]}-dim)"

    def dims(self):
        return (self._t.shape[0], None)


def cosine_oracle(target: Mat) -> RewardOracle:
    """Cosine similarity between the augmented token mean and a target."""
    return _CosineOracle(target)


class _NetOracle(RewardOracle):
    """Frozen seeded two-layer tanh network over the token mean."""

    def __init__(self, seed: int, hidden_width: int, d: int):
        if hidden_width < 1:
            raise ShapeError(f"hidden_width must be >= 1, got {hidden_width}")
        rng = SeededRng(seed)
        self._d = d
        self._w1 = rng.normal(hidden_width * d).reshape(hidden_width, d) / np.sqrt(d)
        self._b1 = rng.uniform(hidden_width, -0.5, 0.5)
        self._w2 = rng.normal(hidden_width) / np.sqrt(hidden_width)
        self._b2 = float(rng.uniform(1, -0.5, 0.5)[0])
        self._seed = seed

    def evaluate(self, aug, prompt):
        _check_dims(aug, self._d)
        mu = token_mean(aug.emb).a[:, 0]
        h = np.tanh(self._w1 @ mu + self._b1)
        reward = float(self._w2 @ h + self._b2)
        d_mu = self._w1.T @ (self._w2 * (1.0 - h * h))
        col = (d_mu / aug.total_tokens).reshape(-1, 1)
        grad = Mat(np.broadcast_to(col, aug.emb.shape))
        return OracleResult(reward=reward, grad=grad)

    def describe(self):
        return f"net(seed={self._seed}, width={len(self._b1)}, d={self._d})"

    def dims(self):
        return (self._d, None)


def net_oracle(seed: int, hidden_width: int, d: int) -> RewardOracle:
    """A frozen random scorer mimicking a learned reward head."""
    return _NetOracle(seed, hidden_width, d)


def finite_diff_grad(
    oracle: RewardOracle,
    aug: AugmentedEmbedding,
    prompt: PromptEmbedding,
    h: float = 1e-5,
) -> Mat:
    """Central-difference gradient of the oracle's reward, entry by entry."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    base = aug.emb.a
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            plus = base.copy()
            plus[i, j] += h
            minus = base.copy()
            minus[i, j] -= h
            r_plus = oracle.evaluate(
                AugmentedEmbedding(Mat(plus), aug.n_pre, aug.k, aug.n_suff), prompt
            ).reward
            r_minus = oracle.evaluate(
                AugmentedEmbedding(Mat(minus), aug.n_pre, aug.k, aug.n_suff), prompt
            ).reward
            grad[i, j] = (r_plus - r_minus) / (2.0 * h)
    return Mat(grad)
