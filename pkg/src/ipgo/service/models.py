"""Request/response models for the service.

Matrix payloads reuse the wire protocol's encoding (base64 little-endian
float64, column-major) so there is exactly one binary matrix format in the
system. Artifact files cross the API as base64 of the exact bytes the
binary file format defines; clients write them verbatim, which is what
makes client-side outputs byte-reproducible.
"""

from __future__ import annotations

import base64
from typing import Literal

from pydantic import BaseModel, Field

from ..augment import PromptEmbedding, synthetic_prompt
from ..linalg import Mat
from ..optim import CosineSchedule, EpochRecord, Mode, StepDecay, TrainConfig
from ..wire import decode_matrix, encode_matrix


class MatrixModel(BaseModel):
    d: int
    cols: int
    data: str

    @classmethod
    def from_mat(cls, mat: Mat) -> "MatrixModel":
        return cls(d=mat.rows, cols=mat.cols, data=encode_matrix(mat))

    def to_mat(self) -> Mat:
        return decode_matrix(self.data, self.d, self.cols)


class SyntheticSpec(BaseModel):
    d: int = 8
    k: int = 4
    seed: int = 0


class PromptModel(BaseModel):
    """Either an inline matrix or a synthesis spec."""

    matrix: MatrixModel | None = None
    synthetic: SyntheticSpec | None = None
    prompt_id: str = ""

    def to_prompt(self) -> PromptEmbedding:
        if (self.matrix is None) == (self.synthetic is None):
            raise ValueError("prompt needs exactly one of 'matrix' or 'synthetic'")
        if self.matrix is not None:
            return PromptEmbedding(emb=self.matrix.to_mat(), prompt_id=self.prompt_id)
        s = self.synthetic
        return synthetic_prompt(s.d, s.k, s.seed, prompt_id=self.prompt_id)


class ScheduleModel(BaseModel):
    kind: Literal["step", "cosine"] = "step"
    lr0: float = 1e-3
    factor: float = 0.9
    period: int = 10
    lr_hi: float = 1e-4
    lr_lo: float = 1e-5

    def to_schedule(self):
        if self.kind == "step":
            return StepDecay(self.lr0, self.factor, self.period)
        return CosineSchedule(self.lr_hi, self.lr_lo)


class TrainConfigModel(BaseModel):
    mode: Literal["ipgo", "ipgo-plus"] = "ipgo"
    epochs: int = 50
    schedule: ScheduleModel = Field(default_factory=ScheduleModel)
    gamma: float = 1e-3
    clip_norm: float = 1.0
    n_pre: int = 10
    n_suff: int = 10
    m_pre: int = 300
    m_suff: int = 300
    seed: int = 0
    batch_size: int = 4
    truncate_at: int = 2

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            mode=Mode(self.mode),
            epochs=self.epochs,
            schedule=self.schedule.to_schedule(),
            gamma=self.gamma,
            clip_norm=self.clip_norm,
            n_pre=self.n_pre,
            n_suff=self.n_suff,
            m_pre=self.m_pre,
            m_suff=self.m_suff,
            seed=self.seed,
            batch_size=self.batch_size,
        )


class EpochRecordModel(BaseModel):
    epoch: int
    reward: float
    p_conf: float
    objective: float
    grad_norm: float
    lr: float

    @classmethod
    def from_record(cls, r: EpochRecord) -> "EpochRecordModel":
        return cls(**r.to_dict())


class OptimizeRequest(BaseModel):
    prompt: PromptModel
    oracle: str = "quadratic"
    config: TrainConfigModel = Field(default_factory=TrainConfigModel)


class BatchOptimizeRequest(BaseModel):
    prompts: list[PromptModel]
    oracle: str = "quadratic"
    config: TrainConfigModel = Field(default_factory=TrainConfigModel)


class OptimizeResponse(BaseModel):
    best_reward: float
    best_epoch: int
    records: list[EpochRecordModel]
    metrics_jsonl: str
    params_file: str  # base64 of the params-role artifact file
    inserts_file: str  # base64 of the insert_pair-role artifact file
    config_echo: str  # canonical JSON of the effective configuration


class MixRequest(BaseModel):
    a_file: str  # base64 insert_pair file
    b_file: str
    lam: float


class MixResponse(BaseModel):
    mixed_file: str


class GradcheckRequest(BaseModel):
    seeds: int = 5
    d: int = 8
    m: int = 3
    n_pre: int = 2
    n_suff: int = 2
    k: int = 4
    gamma: float = 1e-3
    h: float = 1e-5
    tolerance: float = 1e-5
    include_snapshot: bool = False


class GradcheckResponse(BaseModel):
    checks: dict[str, float]
    max_rel_err: float
    tolerance: float
    passed: bool
    snapshot: dict | None = None


class RotationDemoRequest(BaseModel):
    count: int = 50
    seed: int = 2026
    steps: int = 5000


class RotationDemoResponse(BaseModel):
    comparison_csv: str
    trajectories_csv: str
    summary: dict


class SyntheticRequest(BaseModel):
    d: int = 8
    k: int = 4
    seed: int = 0
    prompt_id: str = ""


class SyntheticResponse(BaseModel):
    matrix: MatrixModel
    file: str  # base64 prompt-role file
    prompt_id: str


class HealthResponse(BaseModel):
    status: str
    version: str


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))
