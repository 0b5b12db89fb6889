"""Constrained Adam training loop.

Each epoch: build prefix/suffix inserts, optionally pass them through the
residual cross-attention, splice around the frozen prompt, score with the
reward oracle, form the objective L = -reward + gamma * conformity, run the
hand-derived backward pass to all trainable parameters, clip by global
norm, take a bias-corrected Adam step, then re-project onto the feasible
set (clamp coefficients, wrap angles, re-orthonormalize bases). The best
checkpoint is the parameter set that produced the highest raw reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import augment
from .augment import AugmentedEmbedding, PromptEmbedding
from .inserts import (
    ANGLE_FIELDS,
    HALF_PI,
    InsertionParams,
    MAT_FIELDS,
    ParamGrads,
    backward_insert,
    build_insert,
    init_params,
)
from .linalg import Mat, SeededRng, ShapeError, global_norm, qr_orthonormalize
from .rewards import RewardOracle


class Mode(str, Enum):
    IPGO = "ipgo"
    IPGO_PLUS = "ipgo-plus"


@dataclass(frozen=True)
class StepDecay:
    """lr0 scaled by factor every `period` epochs."""

    lr0: float
    factor: float
    period: int


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine interpolation from lr_hi (first epoch) down to lr_lo (last)."""

    lr_hi: float
    lr_lo: float


Schedule = StepDecay | CosineSchedule


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode
    epochs: int
    schedule: Schedule
    gamma: float
    clip_norm: float
    n_pre: int
    n_suff: int
    m_pre: int
    m_suff: int
    seed: int
    batch_size: int = 1

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if isinstance(self.schedule, StepDecay):
            if self.schedule.lr0 <= 0 or self.schedule.period < 1:
                raise ValueError("step schedule needs lr0 > 0 and period >= 1")
        elif isinstance(self.schedule, CosineSchedule):
            if self.schedule.lr_hi <= 0 or self.schedule.lr_lo <= 0:
                raise ValueError("cosine schedule needs positive rates")
        else:
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    reward: float
    p_conf: float
    objective: float
    grad_norm: float
    lr: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "reward": self.reward,
            "p_conf": self.p_conf,
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "lr": self.lr,
        }


@dataclass
class RunMetrics:
    records: list[EpochRecord] = field(default_factory=list)
    best_reward: float = -math.inf
    best_epoch: int = -1

    def to_jsonl(self) -> str:
        """One JSON record per epoch plus a final summary line."""
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        lines.append(
            json.dumps(
                {
                    "summary": True,
                    "epochs": len(self.records),
                    "best_reward": self.best_reward,
                    "best_epoch": self.best_epoch,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"


class TrainingAborted(RuntimeError):
    """Oracle failure mid-run; partial metrics are preserved on the error."""

    def __init__(self, message: str, metrics: RunMetrics):
        super().__init__(message)
        self.metrics = metrics


def lr_at(schedule: Schedule, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if isinstance(schedule, StepDecay):
        return schedule.lr0 * schedule.factor ** (epoch // schedule.period)
    if total_epochs == 1:
        return schedule.lr_hi
    frac = epoch / (total_epochs - 1)
    return schedule.lr_lo + 0.5 * (schedule.lr_hi - schedule.lr_lo) * (
        1.0 + math.cos(math.pi * frac)
    )


# --- gradient plumbing -------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def grad_global_norm(grads: ParamGrads) -> float:
    items = [getattr(grads, f) for f in MAT_FIELDS]
    items += [getattr(grads, f) for f in ANGLE_FIELDS]
    return global_norm(items)


def clip_grads(grads: ParamGrads, c: float) -> ParamGrads:
    """Scale all gradients so the global norm does not exceed c."""
    if c <= 0:
        raise ValueError(f"clip norm must be > 0, got {c}")
    norm = grad_global_norm(grads)
    if norm <= c:
        return grads
    s = c / norm
    kwargs = {f: Mat(getattr(grads, f).a * s) for f in MAT_FIELDS}
    kwargs.update({f: getattr(grads, f) * s for f in ANGLE_FIELDS})
    return ParamGrads(**kwargs)


def zero_grads_like(params: InsertionParams) -> ParamGrads:
    kwargs = {f: Mat(np.zeros(getattr(params, f).shape)) for f in MAT_FIELDS}
    kwargs.update({f: 0.0 for f in ANGLE_FIELDS})
    return ParamGrads(**kwargs)


def add_scaled_grads(acc: ParamGrads, grads: ParamGrads, s: float) -> ParamGrads:
    kwargs = {f: Mat(getattr(acc, f).a + s * getattr(grads, f).a) for f in MAT_FIELDS}
    kwargs.update({f: getattr(acc, f) + s * getattr(grads, f) for f in ANGLE_FIELDS})
    return ParamGrads(**kwargs)


@dataclass(frozen=True)
class AdamState:
    """First/second moments per parameter plus the step counter."""

    m: dict
    v: dict
    t: int

    @staticmethod
    def init(params: InsertionParams) -> "AdamState":
        m = {f: np.zeros(getattr(params, f).shape) for f in MAT_FIELDS}
        m.update({f: 0.0 for f in ANGLE_FIELDS})
        v = {f: np.zeros(getattr(params, f).shape) for f in MAT_FIELDS}
        v.update({f: 0.0 for f in ANGLE_FIELDS})
        return AdamState(m=m, v=v, t=0)


def adam_step(
    state: AdamState, params: InsertionParams, grads: ParamGrads, lr: float
) -> tuple[InsertionParams, AdamState]:
    """One bias-corrected Adam step minimizing the objective (no weight decay)."""
    t = state.t + 1
    corr1 = 1.0 - ADAM_BETA1**t
    corr2 = 1.0 - ADAM_BETA2**t
    new_m, new_v, new_fields = {}, {}, {}
    for f in MAT_FIELDS:
        g = getattr(grads, f).a
        m = ADAM_BETA1 * state.m[f] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[f] + (1.0 - ADAM_BETA2) * g * g
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)
        new_m[f], new_v[f] = m, v
        new_fields[f] = Mat(getattr(params, f).a - step)
    for f in ANGLE_FIELDS:
        g = getattr(grads, f)
        m = ADAM_BETA1 * state.m[f] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[f] + (1.0 - ADAM_BETA2) * g * g
        step = lr * (m / corr1) / (math.sqrt(v / corr2) + ADAM_EPS)
        new_m[f], new_v[f] = m, v
        new_fields[f] = getattr(params, f) - step
    return InsertionParams(**new_fields), AdamState(m=new_m, v=new_v, t=t)


def _wrap_angle(t: float) -> float:
    while t > HALF_PI:
        t -= math.pi
    while t <= -HALF_PI:
        t += math.pi
    return t


def enforce_constraints(params: InsertionParams) -> InsertionParams:
    """Post-step projection: clamp coefficients to [-1, 1], wrap angles into
    (-pi/2, pi/2] (a rotated line has period pi), re-orthonormalize bases.
    """
    kwargs = {
        "basis_pre": qr_orthonormalize(params.basis_pre),
        "basis_suff": qr_orthonormalize(params.basis_suff),
        "coeffs_pre": Mat(np.clip(params.coeffs_pre.a, -1.0, 1.0)),
        "coeffs_suff": Mat(np.clip(params.coeffs_suff.a, -1.0, 1.0)),
    }
    kwargs.update({f: _wrap_angle(getattr(params, f)) for f in ANGLE_FIELDS})
    return InsertionParams(**kwargs)


# --- forward / backward through the whole chain ------------------------------


def build_inserts(params: InsertionParams, validate: bool = True) -> tuple[Mat, Mat]:
    """The raw (pre-attention) prefix and suffix token matrices."""
    v_pre = build_insert(
        params.basis_pre,
        params.coeffs_pre,
        params.theta1_pre,
        params.theta2_pre,
        validate=validate,
    )
    v_suff = build_insert(
        params.basis_suff,
        params.coeffs_suff,
        params.theta1_suff,
        params.theta2_suff,
        validate=validate,
    )
    return v_pre, v_suff


def forward_augmented(
    params: InsertionParams,
    prompt: PromptEmbedding,
    mode: Mode,
    validate: bool = True,
) -> AugmentedEmbedding:
    """Full forward pass to the augmented embedding."""
    v_pre, v_suff = build_inserts(params, validate=validate)
    if mode == Mode.IPGO_PLUS:
        v_pre = augment.attach_attention(v_pre, prompt)
        v_suff = augment.attach_attention(v_suff, prompt)
    return augment.concat(v_pre, prompt, v_suff)


def objective_value(
    params: InsertionParams,
    prompt: PromptEmbedding,
    oracle: RewardOracle,
    mode: Mode,
    gamma: float,
    validate: bool = True,
) -> tuple[float, float, float]:
    """(objective, reward, p_conf) without gradients."""
    aug = forward_augmented(params, prompt, mode, validate=validate)
    res = oracle.evaluate(aug, prompt)
    p_conf, _ = augment.conformity_penalty(aug, prompt)
    return -res.reward + gamma * p_conf, res.reward, p_conf


def objective_and_grads(
    params: InsertionParams,
    prompt: PromptEmbedding,
    oracle: RewardOracle,
    mode: Mode,
    gamma: float,
) -> tuple[float, float, float, ParamGrads]:
    """Objective L = -reward + gamma * p_conf and its exact gradients."""
    v_pre, v_suff = build_inserts(params)
    if mode == Mode.IPGO_PLUS:
        v_pre_x = augment.attach_attention(v_pre, prompt)
        v_suff_x = augment.attach_attention(v_suff, prompt)
    else:
        v_pre_x, v_suff_x = v_pre, v_suff
    aug = augment.concat(v_pre_x, prompt, v_suff_x)

    res = oracle.evaluate(aug, prompt)
    p_conf, d_conf = augment.conformity_penalty(aug, prompt)
    objective = -res.reward + gamma * p_conf

    d_aug = -res.grad.a + gamma * d_conf.a
    d_pre = Mat(d_aug[:, : aug.n_pre])
    d_suff = Mat(d_aug[:, aug.n_pre + aug.k :])
    if mode == Mode.IPGO_PLUS:
        d_pre = augment.backward_attention(v_pre, prompt, d_pre)
        d_suff = augment.backward_attention(v_suff, prompt, d_suff)

    db_pre, dc_pre, dt1_pre, dt2_pre = backward_insert(
        params.basis_pre, params.coeffs_pre, params.theta1_pre, params.theta2_pre, d_pre
    )
    db_suff, dc_suff, dt1_suff, dt2_suff = backward_insert(
        params.basis_suff,
        params.coeffs_suff,
        params.theta1_suff,
        params.theta2_suff,
        d_suff,
    )
    grads = ParamGrads(
        basis_pre=db_pre,
        basis_suff=db_suff,
        coeffs_pre=dc_pre,
        coeffs_suff=dc_suff,
        theta1_pre=dt1_pre,
        theta2_pre=dt2_pre,
        theta1_suff=dt1_suff,
        theta2_suff=dt2_suff,
    )
    return objective, res.reward, p_conf, grads


# --- drivers -----------------------------------------------------------------


def _check_oracle_dims(oracle: RewardOracle, d: int):
    od, _ = oracle.dims()
    if od is not None and od != d:
        raise ShapeError(f"oracle dimension {od} does not match prompt dimension {d}")


def train_promptwise(
    prompt: PromptEmbedding,
    oracle: RewardOracle,
    cfg: TrainConfig,
    on_epoch=None,
) -> tuple[InsertionParams, RunMetrics]:
    """Optimize one prompt's inserts; returns the best checkpoint and metrics.

    `on_epoch(epoch, params)` fires after each constraint enforcement,
    seeing exactly the parameters the next epoch will train from.
    """
    cfg.validate()
    _check_oracle_dims(oracle, prompt.d)
    params = init_params(prompt.d, cfg.m_pre, cfg.m_suff, cfg.n_pre, cfg.n_suff, cfg.seed)
    adam = AdamState.init(params)
    metrics = RunMetrics()
    best_params = params
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch, cfg.epochs)
        try:
            objective, reward, p_conf, grads = objective_and_grads(
                params, prompt, oracle, cfg.mode, cfg.gamma
            )
        except Exception as exc:
            raise TrainingAborted(f"oracle failed at epoch {epoch}: {exc}", metrics) from exc
        grad_norm = grad_global_norm(grads)
        if reward > metrics.best_reward:
            metrics.best_reward = reward
            metrics.best_epoch = epoch
            best_params = params
        grads = clip_grads(grads, cfg.clip_norm)
        params, adam = adam_step(adam, params, grads, lr)
        params = enforce_constraints(params)
        if on_epoch is not None:
            on_epoch(epoch, params)
        metrics.records.append(
            EpochRecord(
                epoch=epoch,
                reward=reward,
                p_conf=p_conf,
                objective=objective,
                grad_norm=grad_norm,
                lr=lr,
            )
        )
    return best_params, metrics


def train_batch(
    prompts: list[PromptEmbedding], oracle: RewardOracle, cfg: TrainConfig
) -> tuple[InsertionParams, RunMetrics]:
    """One shared parameter set over a prompt batch.

    Attention (the ipgo-plus mode) is what lets shared inserts adapt per
    prompt, so that mode is required. Minibatch objectives and gradients are
    prompt means; the checkpoint rule uses the epoch-average reward and the
    parameters held at the start of that epoch.
    """
    cfg.validate()
    if cfg.mode != Mode.IPGO_PLUS:
        raise ValueError("batch training requires ipgo-plus mode")
    if not prompts:
        raise ValueError("batch training needs at least one prompt")
    d = prompts[0].d
    for p in prompts:
        if p.d != d:
            raise ShapeError(f"mixed embedding dimensions in batch: {d} vs {p.d}")
    _check_oracle_dims(oracle, d)

    params = init_params(d, cfg.m_pre, cfg.m_suff, cfg.n_pre, cfg.n_suff, cfg.seed)
    adam = AdamState.init(params)
    # separate stream for the per-epoch shuffle so it never perturbs init
    shuffle_rng = SeededRng(cfg.seed ^ 0x5B4FF1E0)
    metrics = RunMetrics()
    best_params = params

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch, cfg.epochs)
        order = shuffle_rng.shuffled_indices(len(prompts))
        epoch_start_params = params
        rewards_sum = 0.0
        pconf_sum = 0.0
        objective_sum = 0.0
        grad_norm_sum = 0.0
        n_eval = 0
        n_minibatches = 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo : lo + cfg.batch_size]
            acc = zero_grads_like(params)
            inv = 1.0 / len(chunk)
            for idx in chunk:
                try:
                    objective, reward, p_conf, grads = objective_and_grads(
                        params, prompts[idx], oracle, cfg.mode, cfg.gamma
                    )
                except Exception as exc:
                    raise TrainingAborted(
                        f"oracle failed at epoch {epoch} on prompt {idx}: {exc}", metrics
                    ) from exc
                acc = add_scaled_grads(acc, grads, inv)
                rewards_sum += reward
                pconf_sum += p_conf
                objective_sum += objective
                n_eval += 1
            grad_norm_sum += grad_global_norm(acc)
            n_minibatches += 1
            acc = clip_grads(acc, cfg.clip_norm)
            params, adam = adam_step(adam, params, acc, lr)
            params = enforce_constraints(params)
        epoch_reward = rewards_sum / n_eval
        if epoch_reward > metrics.best_reward:
            metrics.best_reward = epoch_reward
            metrics.best_epoch = epoch
            best_params = epoch_start_params
        metrics.records.append(
            EpochRecord(
                epoch=epoch,
                reward=epoch_reward,
                p_conf=pconf_sum / n_eval,
                objective=objective_sum / n_eval,
                grad_norm=grad_norm_sum / n_minibatches,
                lr=lr,
            )
        )
    return best_params, metrics


def mix_inserts(
    a: tuple[Mat, Mat], b: tuple[Mat, Mat], lam: float
) -> tuple[Mat, Mat]:
    """Convex blend of two learned (prefix, suffix) pairs at the embedding level."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    for x, y in zip(a, b):
        if x.shape != y.shape:
            raise ShapeError(f"insert shape mismatch: {x.shape} vs {y.shape}")
    if lam == 1.0:
        return a
    if lam == 0.0:
        return b
    return (
        Mat(lam * a[0].a + (1.0 - lam) * b[0].a),
        Mat(lam * a[1].a + (1.0 - lam) * b[1].a),
    )
