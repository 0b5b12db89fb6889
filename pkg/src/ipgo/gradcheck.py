"""Finite-difference verification of every backward pass.

The analytic side uses the hand-derived gradients; the numeric side uses
central differences of forward evaluations only. Component relative error
is |a - b| / max(|a|, |b|, 1e-8); the floor keeps genuinely-zero components
from amplifying finite-difference noise while leaving any real formula
error (which scales with the component itself) clearly visible.
"""

from __future__ import annotations

import numpy as np

from . import augment
from .augment import AugmentedEmbedding, PromptEmbedding, synthetic_prompt
from .inserts import ANGLE_FIELDS, MAT_FIELDS, InsertionParams
from .linalg import Mat, SeededRng, qr_orthonormalize
from .optim import Mode, forward_augmented, objective_and_grads, objective_value
from .rewards import (
    RewardOracle,
    cosine_oracle,
    finite_diff_grad,
    net_oracle,
    quadratic_oracle,
)

REL_FLOOR = 1e-8


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_feasible_params(
    d: int, m_pre: int, m_suff: int, n_pre: int, n_suff: int, seed: int
) -> InsertionParams:
    """A feasible point in the interior of the constraint set, with all
    rotations active, so no gradient component is structurally zero."""
    rng = SeededRng(seed)
    return InsertionParams(
        basis_pre=qr_orthonormalize(rng.normal_mat(d, m_pre)),
        basis_suff=qr_orthonormalize(rng.normal_mat(d, m_suff)),
        coeffs_pre=rng.uniform_mat(n_pre, m_pre, -0.8, 0.8),
        coeffs_suff=rng.uniform_mat(n_suff, m_suff, -0.8, 0.8),
        theta1_pre=float(rng.uniform(1, -1.2, 1.2)[0]),
        theta2_pre=float(rng.uniform(1, -1.2, 1.2)[0]),
        theta1_suff=float(rng.uniform(1, -1.2, 1.2)[0]),
        theta2_suff=float(rng.uniform(1, -1.2, 1.2)[0]),
    )


def flatten_params(p) -> np.ndarray:
    parts = [getattr(p, f).a.ravel() for f in MAT_FIELDS]
    parts.append(np.array([getattr(p, f) for f in ANGLE_FIELDS]))
    return np.concatenate(parts)


def unflatten_params(flat: np.ndarray, like: InsertionParams) -> InsertionParams:
    fields = {}
    pos = 0
    for f in MAT_FIELDS:
        shape = getattr(like, f).shape
        size = shape[0] * shape[1]
        fields[f] = Mat(flat[pos : pos + size].reshape(shape))
        pos += size
    for i, f in enumerate(ANGLE_FIELDS):
        fields[f] = float(flat[pos + i])
    return InsertionParams(**fields)


def _field_slices(like: InsertionParams) -> dict:
    slices = {}
    pos = 0
    for f in MAT_FIELDS:
        shape = getattr(like, f).shape
        size = shape[0] * shape[1]
        slices[f] = slice(pos, pos + size)
        pos += size
    for i, f in enumerate(ANGLE_FIELDS):
        slices[f] = slice(pos + i, pos + i + 1)
    return slices


def full_chain_check(
    params: InsertionParams,
    prompt: PromptEmbedding,
    oracle: RewardOracle,
    mode: Mode,
    gamma: float,
    h: float = 1e-5,
) -> dict:
    """Compare the complete analytic gradient of the training objective with
    central finite differences; returns per-field and overall max errors."""
    _, _, _, grads = objective_and_grads(params, prompt, oracle, mode, gamma)
    analytic = flatten_params(grads)
    x0 = flatten_params(params)
    fd = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fp = objective_value(
            unflatten_params(xp, params), prompt, oracle, mode, gamma, validate=False
        )[0]
        fm = objective_value(
            unflatten_params(xm, params), prompt, oracle, mode, gamma, validate=False
        )[0]
        fd[i] = (fp - fm) / (2.0 * h)
    per_field = {
        f: rel_err(analytic[s], fd[s]) for f, s in _field_slices(params).items()
    }
    return {"max_rel_err": rel_err(analytic, fd), "per_field": per_field}


def _attention_check(d: int, n: int, k: int, seed: int, h: float) -> float:
    rng = SeededRng(seed)
    prompt = PromptEmbedding(emb=rng.normal_mat(d, k))
    v0 = rng.normal_mat(d, n)
    g = rng.normal_mat(d, n)

    def f(flat):
        v = Mat(flat.reshape(d, n))
        return float(np.sum(g.a * augment.attach_attention(v, prompt).a))

    x0 = v0.a.ravel().copy()
    fd = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fd[i] = (f(xp) - f(xm)) / (2.0 * h)
    analytic = augment.backward_attention(v0, prompt, g).a.ravel()
    return rel_err(analytic, fd)


def _conformity_check(d: int, n: int, k: int, seed: int, h: float) -> float:
    rng = SeededRng(seed)
    prompt = PromptEmbedding(emb=rng.normal_mat(d, k))
    aug = augment.concat(rng.normal_mat(d, n), prompt, rng.normal_mat(d, n))
    _, grad = augment.conformity_penalty(aug, prompt)

    def f(flat):
        a = AugmentedEmbedding(Mat(flat.reshape(aug.emb.shape)), n, k, n)
        return augment.conformity_penalty(a, prompt)[0]

    x0 = aug.emb.a.ravel().copy()
    fd = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fd[i] = (f(xp) - f(xm)) / (2.0 * h)
    return rel_err(grad.a.ravel(), fd)


def analytic_oracles(d: int, seed: int) -> list[RewardOracle]:
    rng = SeededRng(seed)
    return [
        quadratic_oracle(rng.normal_mat(d, 1)),
        cosine_oracle(rng.normal_mat(d, 1)),
        net_oracle(seed=seed, hidden_width=6, d=d),
    ]


def run_gradcheck(
    seeds: int = 5,
    d: int = 8,
    m: int = 3,
    n_pre: int = 2,
    n_suff: int = 2,
    k: int = 4,
    gamma: float = 1e-3,
    h: float = 1e-5,
    tolerance: float = 1e-5,
) -> dict:
    """Every backward pass against finite differences over seeded configs."""
    checks = {}
    worst_chain = 0.0
    for seed in range(seeds):
        prompt = synthetic_prompt(d, k, seed=seed + 50)
        params = random_feasible_params(d, m, m, n_pre, n_suff, seed=seed * 17 + 3)
        for mode in (Mode.IPGO, Mode.IPGO_PLUS):
            for oracle in analytic_oracles(d, seed):
                out = full_chain_check(params, prompt, oracle, mode, gamma, h)
                worst_chain = max(worst_chain, out["max_rel_err"])
    checks["full_chain"] = worst_chain
    checks["attention"] = max(
        _attention_check(d, n_pre, k, seed=seed + 900, h=h) for seed in range(seeds)
    )
    checks["conformity"] = max(
        _conformity_check(d, max(n_pre, 1), k, seed=seed + 700, h=h)
        for seed in range(seeds)
    )
    worst_oracle = 0.0
    for seed in range(seeds):
        prompt = synthetic_prompt(d, k, seed=seed + 300)
        params = random_feasible_params(d, m, m, n_pre, n_suff, seed=seed + 11)
        aug = forward_augmented(params, prompt, Mode.IPGO)
        for oracle in analytic_oracles(d, seed + 31):
            fd = finite_diff_grad(oracle, aug, prompt, h=h)
            analytic = oracle.evaluate(aug, prompt).grad
            worst_oracle = max(worst_oracle, rel_err(analytic.a, fd.a))
    checks["oracle_grads"] = worst_oracle
    worst = max(checks.values())
    return {
        "checks": checks,
        "max_rel_err": worst,
        "tolerance": tolerance,
        "passed": bool(worst < tolerance),
    }


def gradient_snapshot(
    d: int = 8,
    m: int = 3,
    n_pre: int = 2,
    n_suff: int = 2,
    k: int = 4,
    gamma: float = 1e-3,
    seed: int = 0,
) -> dict:
    """Bit-exact analytic gradients of one seeded configuration.

    Matrix gradients are encoded like wire payloads so the snapshot can be
    frozen into the fixture corpus and compared byte-for-byte.
    """
    from .wire import matrix_payload

    prompt = synthetic_prompt(d, k, seed=seed + 50)
    params = random_feasible_params(d, m, m, n_pre, n_suff, seed=seed * 17 + 3)
    snapshot = {"d": d, "m": m, "n_pre": n_pre, "n_suff": n_suff, "k": k, "seed": seed}
    for mode in (Mode.IPGO, Mode.IPGO_PLUS):
        oracle = analytic_oracles(d, seed)[0]
        objective, reward, p_conf, grads = objective_and_grads(
            params, prompt, oracle, mode, gamma
        )
        entry = {"objective": objective, "reward": reward, "p_conf": p_conf}
        for f in MAT_FIELDS:
            entry[f] = matrix_payload(getattr(grads, f))
        for f in ANGLE_FIELDS:
            entry[f] = getattr(grads, f)
        snapshot[mode.value] = entry
    return snapshot
