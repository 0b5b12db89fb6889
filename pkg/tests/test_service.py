import base64
import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from ipgo.augment import synthetic_prompt
from ipgo.fileio import parse_insert_pair_bytes, parse_params_bytes
from ipgo.linalg import token_mean
from ipgo.optim import Mode, StepDecay, TrainConfig, train_promptwise
from ipgo.rewards import quadratic_oracle
from ipgo.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def _train_payload(epochs=5, seed=3, mode="ipgo", oracle="quadratic"):
    return {
        "prompt": {"synthetic": {"d": 8, "k": 3, "seed": 101}},
        "oracle": oracle,
        "config": {
            "mode": mode,
            "epochs": epochs,
            "seed": seed,
            "schedule": {"kind": "step", "lr0": 1e-3, "factor": 0.9, "period": 10},
            "gamma": 1e-3,
            "clip_norm": 1.0,
            "n_pre": 2,
            "n_suff": 2,
            "m_pre": 3,
            "m_suff": 3,
        },
    }


class TestHealth:
    def test_health(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"


class TestOptimize:
    def test_matches_in_process_training(self, client):
        resp = client.post("/v1/optimize", json=_train_payload())
        assert resp.status_code == 200
        body = resp.json()

        prompt = synthetic_prompt(8, 3, seed=101)
        cfg = TrainConfig(
            mode=Mode.IPGO,
            epochs=5,
            schedule=StepDecay(1e-3, 0.9, 10),
            gamma=1e-3,
            clip_norm=1.0,
            n_pre=2,
            n_suff=2,
            m_pre=3,
            m_suff=3,
            seed=3,
        )
        best, metrics = train_promptwise(prompt, quadratic_oracle(token_mean(prompt.emb)), cfg)
        assert body["best_reward"] == metrics.best_reward
        assert body["best_epoch"] == metrics.best_epoch
        assert [r["reward"] for r in body["records"]] == [r.reward for r in metrics.records]
        assert body["metrics_jsonl"] == metrics.to_jsonl()

        params = parse_params_bytes(base64.b64decode(body["params_file"]))
        assert params.basis_pre.a.tobytes() == best.basis_pre.a.tobytes()
        v_pre, v_suff = parse_insert_pair_bytes(base64.b64decode(body["inserts_file"]))
        assert v_pre.shape == (8, 2) and v_suff.shape == (8, 2)

    def test_batch_endpoint_degenerate_matches_promptwise(self, client):
        single = _train_payload(mode="ipgo-plus")
        batch = {
            "prompts": [single["prompt"]],
            "oracle": single["oracle"],
            "config": dict(single["config"], batch_size=1),
        }
        r_single = client.post("/v1/optimize", json=single).json()
        r_batch = client.post("/v1/optimize-batch", json=batch).json()
        assert r_batch["metrics_jsonl"] == r_single["metrics_jsonl"]
        assert r_batch["params_file"] == r_single["params_file"]

    def test_bad_oracle_spec_is_400(self, client):
        payload = _train_payload(oracle="astrology")
        resp = client.post("/v1/optimize", json=payload)
        assert resp.status_code == 400
        assert resp.json()["detail"]["error"] == "OracleSpecError"

    def test_unreachable_remote_oracle_is_502(self, client):
        payload = _train_payload(oracle="remote:definitely-not-a-binary")
        resp = client.post("/v1/optimize", json=payload)
        assert resp.status_code == 502
        assert "definitely-not-a-binary" in resp.json()["detail"]["message"]

    def test_prompt_needs_exactly_one_source(self, client):
        payload = _train_payload()
        payload["prompt"] = {"prompt_id": "empty"}
        resp = client.post("/v1/optimize", json=payload)
        assert resp.status_code == 400


class TestMix:
    def test_endpoint_round_trip(self, client):
        run = client.post("/v1/optimize", json=_train_payload()).json()
        a_file = run["inserts_file"]
        other = client.post("/v1/optimize", json=_train_payload(seed=9)).json()
        b_file = other["inserts_file"]
        resp = client.post("/v1/mix", json={"a_file": a_file, "b_file": b_file, "lam": 1.0})
        assert resp.status_code == 200
        assert resp.json()["mixed_file"] == a_file

    def test_bad_lambda_is_400(self, client):
        run = client.post("/v1/optimize", json=_train_payload()).json()
        resp = client.post(
            "/v1/mix",
            json={"a_file": run["inserts_file"], "b_file": run["inserts_file"], "lam": 2.0},
        )
        assert resp.status_code == 400


class TestGradcheck:
    def test_report_passes(self, client):
        resp = client.post("/v1/gradcheck", json={"seeds": 2})
        body = resp.json()
        assert body["passed"] is True
        assert set(body["checks"]) == {"full_chain", "attention", "conformity", "oracle_grads"}

    def test_snapshot_is_deterministic(self, client):
        a = client.post("/v1/gradcheck", json={"seeds": 1, "include_snapshot": True}).json()
        b = client.post("/v1/gradcheck", json={"seeds": 1, "include_snapshot": True}).json()
        assert a["snapshot"] == b["snapshot"]
        assert a["snapshot"]["ipgo"]["basis_pre"]["data"]


class TestDemoAndSynthetic:
    def test_demo_rotation_deterministic(self, client):
        req = {"count": 8, "seed": 11, "steps": 2000}
        a = client.post("/v1/demo-rotation", json=req).json()
        b = client.post("/v1/demo-rotation", json=req).json()
        assert a["comparison_csv"] == b["comparison_csv"]
        assert a["trajectories_csv"] == b["trajectories_csv"]
        assert a["summary"]["max_tangency_residual"] < 1e-10

    def test_synthetic_matches_library(self, client):
        body = client.post("/v1/synthetic", json={"d": 8, "k": 4, "seed": 7}).json()
        from ipgo.service.models import MatrixModel

        mat = MatrixModel(**body["matrix"]).to_mat()
        ref = synthetic_prompt(8, 4, 7)
        assert mat.a.tobytes() == ref.emb.a.tobytes()
        assert body["prompt_id"] == ref.prompt_id
