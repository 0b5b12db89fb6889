"""HTTP service wrapping the optimizer.

Training runs are long; wrapping them behind a service lets several clients
submit jobs against one host and keeps the CLI a thin transport layer. All
numeric payloads cross as base64-wrapped raw float64 bytes, so a run
launched through the API is bit-identical to one launched in-process.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException

from .. import __version__, descent2d, fileio, gradcheck
from ..augment import PromptEmbedding
from ..inserts import ConstraintError
from ..linalg import LinalgError
from ..optim import (
    RunMetrics,
    TrainingAborted,
    build_inserts,
    mix_inserts,
    train_batch,
    train_promptwise,
)
from ..oracle_specs import OracleSpecError, build_oracle
from ..rewards import OracleError
from ..wire import ProtocolError, RemoteOracle
from . import models as m

_BAD_REQUEST = (
    ValueError,
    LinalgError,
    ConstraintError,
    OracleSpecError,
    fileio.FileFormatError,
)
_UPSTREAM = (OracleError, ProtocolError)


def _http_error(status: int, exc: Exception) -> HTTPException:
    return HTTPException(
        status_code=status,
        detail={"error": type(exc).__name__, "message": str(exc)},
    )


def _config_echo(req_oracle: str, config: m.TrainConfigModel, prompt_ids: list[str]) -> str:
    payload = {
        "oracle": req_oracle,
        "config": config.model_dump(),
        "prompt_ids": prompt_ids,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _train_response(
    best, metrics: RunMetrics, oracle_spec: str, config: m.TrainConfigModel, prompt_ids
) -> m.OptimizeResponse:
    v_pre, v_suff = build_inserts(best)
    return m.OptimizeResponse(
        best_reward=metrics.best_reward,
        best_epoch=metrics.best_epoch,
        records=[m.EpochRecordModel.from_record(r) for r in metrics.records],
        metrics_jsonl=metrics.to_jsonl(),
        params_file=m.b64(fileio.params_file_bytes(best)),
        inserts_file=m.b64(fileio.insert_pair_file_bytes(v_pre, v_suff)),
        config_echo=_config_echo(oracle_spec, config, prompt_ids),
    )


def _run_training(req, prompts: list[PromptEmbedding]):
    cfg = req.config.to_config()
    oracle = build_oracle(
        req.oracle, d=prompts[0].d, truncate_at=req.config.truncate_at
    )
    try:
        if len(prompts) == 1 and not isinstance(req, m.BatchOptimizeRequest):
            best, metrics = train_promptwise(prompts[0], oracle, cfg)
        else:
            best, metrics = train_batch(prompts, oracle, cfg)
    finally:
        if isinstance(oracle, RemoteOracle):
            oracle.close()
    return best, metrics


def create_app() -> FastAPI:
    app = FastAPI(title="ipgo", version=__version__)

    @app.exception_handler(Exception)
    async def _unhandled(request, exc):  # pragma: no cover - safety net
        raise exc

    @app.get("/v1/health", response_model=m.HealthResponse)
    def health():
        return m.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/optimize", response_model=m.OptimizeResponse)
    def optimize(req: m.OptimizeRequest):
        try:
            prompt = req.prompt.to_prompt()
            best, metrics = _run_training(req, [prompt])
            return _train_response(best, metrics, req.oracle, req.config, [prompt.prompt_id])
        except TrainingAborted as exc:
            raise _http_error(502, exc)
        except _UPSTREAM as exc:
            raise _http_error(502, exc)
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    @app.post("/v1/optimize-batch", response_model=m.OptimizeResponse)
    def optimize_batch(req: m.BatchOptimizeRequest):
        try:
            prompts = [p.to_prompt() for p in req.prompts]
            best, metrics = _run_training(req, prompts)
            return _train_response(
                best, metrics, req.oracle, req.config, [p.prompt_id for p in prompts]
            )
        except TrainingAborted as exc:
            raise _http_error(502, exc)
        except _UPSTREAM as exc:
            raise _http_error(502, exc)
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    @app.post("/v1/mix", response_model=m.MixResponse)
    def mix(req: m.MixRequest):
        try:
            a = fileio.parse_insert_pair_bytes(m.unb64(req.a_file), label="a_file")
            b = fileio.parse_insert_pair_bytes(m.unb64(req.b_file), label="b_file")
            mixed = mix_inserts(a, b, req.lam)
            return m.MixResponse(
                mixed_file=m.b64(fileio.insert_pair_file_bytes(*mixed))
            )
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    @app.post("/v1/gradcheck", response_model=m.GradcheckResponse)
    def run_gradcheck(req: m.GradcheckRequest):
        try:
            report = gradcheck.run_gradcheck(
                seeds=req.seeds,
                d=req.d,
                m=req.m,
                n_pre=req.n_pre,
                n_suff=req.n_suff,
                k=req.k,
                gamma=req.gamma,
                h=req.h,
                tolerance=req.tolerance,
            )
            if req.include_snapshot:
                report["snapshot"] = gradcheck.gradient_snapshot(
                    d=req.d,
                    m=req.m,
                    n_pre=req.n_pre,
                    n_suff=req.n_suff,
                    k=req.k,
                    gamma=req.gamma,
                )
            return m.GradcheckResponse(**report)
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    @app.post("/v1/demo-rotation", response_model=m.RotationDemoResponse)
    def demo_rotation(req: m.RotationDemoRequest):
        try:
            rows, summary = descent2d.run_quadratic_suite(
                count=req.count, seed=req.seed, steps=req.steps
            )
            return m.RotationDemoResponse(
                comparison_csv=descent2d.comparison_csv(rows),
                trajectories_csv=descent2d.trajectories_csv(
                    req.count, req.seed, req.steps
                ),
                summary=summary,
            )
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    @app.post("/v1/synthetic", response_model=m.SyntheticResponse)
    def synthetic(req: m.SyntheticRequest):
        try:
            prompt = m.PromptModel(
                synthetic=m.SyntheticSpec(d=req.d, k=req.k, seed=req.seed),
                prompt_id=req.prompt_id,
            ).to_prompt()
            return m.SyntheticResponse(
                matrix=m.MatrixModel.from_mat(prompt.emb),
                file=m.b64(fileio.embedding_file_bytes(prompt.emb)),
                prompt_id=prompt.prompt_id,
            )
        except _BAD_REQUEST as exc:
            raise _http_error(400, exc)

    return app


app = create_app()
