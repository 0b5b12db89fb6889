"""Oracle spec strings shared by the CLI, the service, and the reference
protocol server.

Grammar:
    quadratic              squared-distance reward against the prompt mean
    quadratic:PATH         ... against a target column read from PATH
    cosine | cosine:PATH   cosine alignment, same target convention
    net[:WIDTH[:SEED]]     frozen random two-layer scorer (width 8, seed 1)
    remote:ENDPOINT        external oracle; ENDPOINT is tcp:HOST:PORT or a
                           command line spawned over a pipe
"""

from __future__ import annotations

import hashlib

from . import fileio, wire
from .augment import PromptEmbedding, synthetic_prompt
from .linalg import token_mean
from .rewards import (
    RewardOracle,
    cosine_oracle,
    net_oracle,
    quadratic_oracle,
)


class OracleSpecError(ValueError):
    pass


class _PromptMeanQuadratic(RewardOracle):
    """Quadratic reward whose target is each prompt's own token mean."""

    def evaluate(self, aug, prompt):
        return quadratic_oracle(token_mean(prompt.emb)).evaluate(aug, prompt)

    def describe(self):
        return "quadratic(target = prompt mean)"


class _PromptMeanCosine(RewardOracle):
    def evaluate(self, aug, prompt):
        return cosine_oracle(token_mean(prompt.emb)).evaluate(aug, prompt)

    def describe(self):
        return "cosine(target = prompt mean)"


def _target_from_file(path: str):
    mat, _ = fileio.read_embedding(path)
    if mat.cols != 1:
        mat = token_mean(mat)
    return mat


def build_oracle(
    spec: str,
    d: int | None = None,
    timeout_s: float | None = None,
    truncate_at: int = wire.DEFAULT_TRUNCATE_AT,
) -> RewardOracle:
    """Instantiate the oracle a spec string names.

    `d` is required only by specs whose scorer needs a bound dimension
    (net). Remote specs validate `d` during the hello handshake.
    """
    spec = spec.strip()
    if not spec:
        raise OracleSpecError("empty oracle spec")
    if spec.startswith("remote:"):
        endpoint = spec[len("remote:") :]
        if not endpoint:
            raise OracleSpecError("remote spec needs an endpoint")
        return wire.remote_oracle(
            endpoint, expect_d=d, timeout_s=timeout_s, truncate_at=truncate_at
        )
    head, _, rest = spec.partition(":")
    if head == "quadratic":
        return quadratic_oracle(_target_from_file(rest)) if rest else _PromptMeanQuadratic()
    if head == "cosine":
        return cosine_oracle(_target_from_file(rest)) if rest else _PromptMeanCosine()
    if head == "net":
        parts = rest.split(":") if rest else []
        width = int(parts[0]) if len(parts) >= 1 and parts[0] else 8
        seed = int(parts[1]) if len(parts) >= 2 else 1
        if d is None:
            raise OracleSpecError("net oracle needs the embedding dimension")
        return net_oracle(seed, width, d)
    raise OracleSpecError(f"unknown oracle spec {spec!r}")


def synthetic_text_encoder(d: int, max_tokens: int = 77, base_seed: int = 0):
    """A deterministic stand-in for a frozen text encoder.

    Token count follows the whitespace token count (capped), and the
    embedding is a seeded Gaussian keyed by the text digest, so identical
    text always encodes identically.
    """

    def encode(text: str) -> PromptEmbedding:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little") ^ base_seed
        k = min(max(1, len(text.split())), max_tokens)
        prompt = synthetic_prompt(d, k, seed)
        return PromptEmbedding(emb=prompt.emb, prompt_id=digest[:8].hex())

    return encode
