"""Prompt augmentation: splicing insert tokens around a frozen prompt,
the conformity penalty tying the augmented token mean to the prompt's, and
the parameter-free residual cross-attention that lets shared inserts adapt
to each prompt.

Embeddings are stored one column per token; attention transposes views so
tokens become rows, never copying semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Mat, SeededRng, ShapeError, token_mean


@dataclass(frozen=True)
class PromptEmbedding:
    """A frozen d x K token-embedding matrix for one prompt."""

    emb: Mat
    prompt_id: str = ""

    def __post_init__(self):
        if self.emb.cols < 1:
            raise ShapeError("prompt embedding needs at least one token")
        if self.emb.rows % 2 != 0:
            raise ShapeError("prompt embedding dimension must be even")

    @property
    def d(self) -> int:
        return self.emb.rows

    @property
    def k(self) -> int:
        return self.emb.cols


@dataclass(frozen=True)
class AugmentedEmbedding:
    """prefix + prompt + suffix columns with recorded segment boundaries."""

    emb: Mat
    n_pre: int
    k: int
    n_suff: int

    def __post_init__(self):
        if self.n_pre + self.k + self.n_suff != self.emb.cols:
            raise ShapeError(
                f"segment lengths ({self.n_pre}, {self.k}, {self.n_suff}) "
                f"do not sum to {self.emb.cols} columns"
            )

    @property
    def d(self) -> int:
        return self.emb.rows

    @property
    def total_tokens(self) -> int:
        return self.emb.cols

    def prefix_part(self) -> Mat:
        return Mat(self.emb.a[:, : self.n_pre])

    def prompt_part(self) -> Mat:
        return Mat(self.emb.a[:, self.n_pre : self.n_pre + self.k])

    def suffix_part(self) -> Mat:
        return Mat(self.emb.a[:, self.n_pre + self.k :])


def concat(v_pre: Mat, prompt: PromptEmbedding, v_suff: Mat) -> AugmentedEmbedding:
    """Column-wise concatenation prefix | prompt | suffix.

    The prompt columns pass through bit-identically. Either insert side may
    be empty (d x 0) but not both.
    """
    d = prompt.d
    if v_pre.rows != d or v_suff.rows != d:
        raise ShapeError(
            f"dimension mismatch: prefix {v_pre.shape}, prompt "
            f"{prompt.emb.shape}, suffix {v_suff.shape}"
        )
    if v_pre.cols == 0 and v_suff.cols == 0:
        raise ShapeError("prefix and suffix may not both be empty")
    emb = Mat(np.hstack([v_pre.a, prompt.emb.a, v_suff.a]))
    return AugmentedEmbedding(emb=emb, n_pre=v_pre.cols, k=prompt.k, n_suff=v_suff.cols)


def conformity_penalty(aug: AugmentedEmbedding, prompt: PromptEmbedding) -> tuple[float, Mat]:
    """Squared distance between token means, with its gradient.

    Returns (p, dAug) where p = ||mean(aug) - mean(prompt)||^2 over the token
    axis and dAug broadcasts 2*(mu_aug - mu_prompt)/L to every column.
    """
    if aug.d != prompt.d:
        raise ShapeError(f"dimension mismatch: {aug.d} vs {prompt.d}")
    diff = token_mean(aug.emb).a - token_mean(prompt.emb).a  # d x 1
    p = float(np.sum(diff * diff))
    l_total = aug.total_tokens
    d_aug = np.broadcast_to(2.0 * diff / l_total, (aug.d, l_total))
    return p, Mat(d_aug)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def scaled_dot_attention(q: Mat, k: Mat, w: Mat) -> Mat:
    """softmax(q k^T / sqrt(d)) w with tokens as rows."""
    if q.cols != k.cols:
        raise ShapeError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.rows != w.rows:
        raise ShapeError(f"key/value count mismatch: {k.shape} vs {w.shape}")
    if k.rows < 1:
        raise ShapeError("attention needs at least one key")
    probs = _softmax_rows(q.a @ k.a.T / np.sqrt(q.cols))
    return Mat(probs @ w.a)


def attach_attention(v: Mat, prompt: PromptEmbedding) -> Mat:
    """Residual cross-attention from insert tokens to prompt tokens.

    Returns v + Attention(v, prompt, prompt); queries are the insert tokens,
    keys and values the prompt tokens. No trainable parameters.
    """
    if v.rows != prompt.d:
        raise ShapeError(f"dimension mismatch: {v.shape} vs {prompt.emb.shape}")
    if v.cols == 0:
        return v
    att = scaled_dot_attention(Mat(v.a.T), Mat(prompt.emb.a.T), Mat(prompt.emb.a.T))
    return Mat(v.a + att.a.T)


def backward_attention(v: Mat, prompt: PromptEmbedding, d_out: Mat) -> Mat:
    """Gradient of attach_attention w.r.t. v (the prompt stays frozen).

    Includes the softmax Jacobian: for each query row with probabilities a
    and upstream row g, d(logits) = a * (g - <g, a>).
    """
    if d_out.shape != v.shape:
        raise ShapeError(f"upstream gradient shape {d_out.shape} != {v.shape}")
    if v.cols == 0:
        return d_out
    keys = prompt.emb.a.T  # K x d
    scale = 1.0 / np.sqrt(v.rows)
    logits = v.a.T @ keys.T * scale  # N x K
    probs = _softmax_rows(logits)

    d_att = d_out.a.T  # N x d, gradient of the attention term's output rows
    d_probs = d_att @ keys.T  # N x K
    inner = np.sum(d_probs * probs, axis=1, keepdims=True)
    d_logits = probs * (d_probs - inner)
    d_q = d_logits @ keys * scale  # N x d
    return Mat(d_out.a + d_q.T)


def synthetic_prompt(d: int, k: int, seed: int, prompt_id: str = "") -> PromptEmbedding:
    """A seeded Gaussian prompt embedding with unit-norm token columns."""
    if k < 1:
        raise ShapeError("synthetic prompt needs at least one token")
    raw = SeededRng(seed).normal_mat(d, k).a
    norms = np.sqrt(np.sum(raw * raw, axis=0, keepdims=True))
    pid = prompt_id or f"synthetic-{d}x{k}-{seed}"
    return PromptEmbedding(emb=Mat(raw / norms), prompt_id=pid)
