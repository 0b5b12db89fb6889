import json
import os
import sys
import threading

import numpy as np
import pytest

from ipgo.augment import concat, synthetic_prompt
from ipgo.linalg import Mat, SeededRng, token_mean
from ipgo.oracle_server import make_server
from ipgo.optim import Mode, StepDecay, TrainConfig, train_promptwise
from ipgo.rewards import quadratic_oracle
from ipgo.wire import (
    HandshakeError,
    MalformedMessageError,
    OracleServer,
    OracleTcpServer,
    OracleTimeoutError,
    RemoteOracleError,
    TransportError,
    decode_matrix,
    encode_matrix,
    matrix_from_payload,
    matrix_payload,
    remote_oracle,
)

HELPERS = os.path.join(os.path.dirname(__file__), "helpers")
PY = sys.executable


def _serve_cmd(oracle_spec, d, extra=""):
    return f"{PY} -m ipgo.oracle_server --oracle {oracle_spec} --d {d} {extra}".strip()


def _random_aug(d, seed, n_pre=2, k=3, n_suff=2):
    rng = SeededRng(seed)
    prompt = synthetic_prompt(d, k, seed=seed + 7)
    aug = concat(rng.normal_mat(d, n_pre), prompt, rng.normal_mat(d, n_suff))
    return aug, prompt


class TestMatrixCodec:
    def test_round_trip_bit_exact(self):
        for seed in range(20):
            m = SeededRng(seed).normal_mat(5, 4)
            back = decode_matrix(encode_matrix(m), 5, 4)
            assert back.a.tobytes() == m.a.tobytes()

    def test_special_values_round_trip(self):
        m = Mat([[0.0, -0.0], [5e-324, 1.7976931348623157e308]])
        back = matrix_from_payload(matrix_payload(m))
        assert back.a.tobytes() == m.a.tobytes()

    def test_wrong_length_rejected(self):
        m = SeededRng(1).normal_mat(3, 3)
        with pytest.raises(MalformedMessageError, match="bytes"):
            decode_matrix(encode_matrix(m), 3, 4)

    def test_bad_base64_rejected(self):
        with pytest.raises(MalformedMessageError):
            decode_matrix("!!!not base64!!!", 1, 1)


class TestOracleServerDispatch:
    def _server(self, d=8):
        target = token_mean(synthetic_prompt(d, 3, seed=1).emb)
        return OracleServer(quadratic_oracle(target), d=d, max_tokens=97)

    def test_hello(self):
        srv = self._server()
        reply = json.loads(srv.handle_line('{"id": 5, "op": "hello", "version": 1}'))
        assert reply == {
            "ok": True,
            "version": 1,
            "d": 8,
            "max_tokens": 97,
            "oracle": srv.oracle.describe(),
            "id": 5,
        }

    def test_evaluate_matches_in_process(self):
        srv = self._server()
        aug, prompt = _random_aug(8, seed=3)
        req = {
            "id": 9,
            "op": "evaluate",
            "prompt_id": prompt.prompt_id,
            "n_pre": aug.n_pre,
            "n_suff": aug.n_suff,
            "truncate_at": 2,
        }
        req.update(matrix_payload(aug.emb))
        reply = json.loads(srv.handle_line(json.dumps(req)))
        direct = srv.oracle.evaluate(aug, prompt)
        assert reply["ok"] and reply["id"] == 9
        assert reply["reward"] == direct.reward
        assert matrix_from_payload(reply["grad"]).a.tobytes() == direct.grad.a.tobytes()

    def test_unknown_op_is_error_response(self):
        reply = json.loads(self._server().handle_line('{"id": 1, "op": "destroy"}'))
        assert reply["ok"] is False and "destroy" in reply["error"]

    def test_bad_json_is_error_response(self):
        reply = json.loads(self._server().handle_line("not json"))
        assert reply["ok"] is False

    def test_segment_validation(self):
        srv = self._server()
        req = {"id": 2, "op": "evaluate", "n_pre": 3, "n_suff": 3, "prompt_id": ""}
        req.update(matrix_payload(SeededRng(4).normal_mat(8, 5)))
        reply = json.loads(srv.handle_line(json.dumps(req)))
        assert reply["ok"] is False and "prompt tokens" in reply["error"]

    def test_encode_via_synthetic_encoder(self):
        srv = make_server("quadratic", d=8, max_tokens=77, encode_seed=11)
        req = json.dumps({"id": 3, "op": "encode", "text": "a quiet harbor at dawn"})
        r1 = json.loads(srv.handle_line(req))
        r2 = json.loads(srv.handle_line(json.dumps({"id": 4, "op": "encode", "text": "a quiet harbor at dawn"})))
        assert r1["ok"] and r1["d"] == 8 and r1["cols"] == 5
        assert r1["data"] == r2["data"]
        assert r1["prompt_id"] == r2["prompt_id"]


class TestRemotePipe:
    def test_null_oracle_runs_flat_training(self):
        cmd = f"{PY} {os.path.join(HELPERS, 'null_oracle.py')} 8"
        prompt = synthetic_prompt(8, 3, seed=5)
        with remote_oracle(cmd, expect_d=8, timeout_s=30) as oracle:
            cfg = TrainConfig(
                mode=Mode.IPGO,
                epochs=4,
                schedule=StepDecay(1e-3, 0.9, 10),
                gamma=0.0,
                clip_norm=1.0,
                n_pre=2,
                n_suff=2,
                m_pre=3,
                m_suff=3,
                seed=6,
            )
            _, metrics = train_promptwise(prompt, oracle, cfg)
        assert [r.reward for r in metrics.records] == [0.0, 0.0, 0.0, 0.0]

    def test_remote_quadratic_matches_in_process(self, tmp_path):
        from ipgo.fileio import write_embedding

        d = 8
        target = token_mean(synthetic_prompt(d, 3, seed=1).emb)
        target_path = str(tmp_path / "target.ipgo")
        write_embedding(target_path, target)
        local = quadratic_oracle(target)
        cmd = _serve_cmd(f"quadratic:{target_path}", d)
        with remote_oracle(cmd, expect_d=d, timeout_s=30) as remote:
            assert remote.dims()[0] == d
            for seed in range(100):
                aug, prompt = _random_aug(d, seed=seed + 100)
                r_remote = remote.evaluate(aug, prompt)
                r_local = local.evaluate(aug, prompt)
                assert abs(r_remote.reward - r_local.reward) <= 1e-12
                assert np.abs(r_remote.grad.a - r_local.grad.a).max() <= 1e-12

    def test_handshake_dim_mismatch(self):
        cmd = f"{PY} {os.path.join(HELPERS, 'null_oracle.py')} 4"
        with pytest.raises(HandshakeError, match="expected 8"):
            remote_oracle(cmd, expect_d=8, timeout_s=30)

    def test_server_closing_mid_request_raises_transport_error(self):
        cmd = f"{PY} {os.path.join(HELPERS, 'broken_oracle.py')} close"
        aug, prompt = _random_aug(8, seed=9)
        with remote_oracle(cmd, expect_d=8, timeout_s=30) as oracle:
            with pytest.raises(TransportError):
                oracle.evaluate(aug, prompt)

    def test_timeout_is_typed(self):
        cmd = f"{PY} {os.path.join(HELPERS, 'broken_oracle.py')} slow"
        aug, prompt = _random_aug(8, seed=10)
        oracle = remote_oracle(cmd, expect_d=8, timeout_s=1.0)
        try:
            with pytest.raises(OracleTimeoutError):
                oracle.evaluate(aug, prompt)
        finally:
            oracle.close()

    def test_garbage_json_is_typed(self):
        cmd = f"{PY} {os.path.join(HELPERS, 'broken_oracle.py')} garbage"
        aug, prompt = _random_aug(8, seed=11)
        with remote_oracle(cmd, expect_d=8, timeout_s=30) as oracle:
            with pytest.raises(MalformedMessageError):
                oracle.evaluate(aug, prompt)

    def test_remote_error_surfaced_verbatim(self):
        cmd = _serve_cmd("quadratic", 8)
        with remote_oracle(cmd, expect_d=8, timeout_s=30) as oracle:
            aug, prompt = _random_aug(8, seed=12)
            bad_aug = concat(Mat(np.zeros((4, 0))), synthetic_prompt(4, 2, seed=1), Mat(np.zeros((4, 1))))
            with pytest.raises(RemoteOracleError, match="does not match server dimension"):
                oracle.evaluate(bad_aug, prompt)

    def test_missing_binary_names_endpoint(self):
        with pytest.raises(TransportError, match="no-such-oracle-binary"):
            remote_oracle("no-such-oracle-binary --flag", timeout_s=5)

    def test_timeout_env_respected(self, monkeypatch):
        monkeypatch.setenv("IPGO_ORACLE_TIMEOUT_S", "123.5")
        cmd = f"{PY} {os.path.join(HELPERS, 'null_oracle.py')} 8"
        with remote_oracle(cmd, expect_d=8) as oracle:
            assert oracle._timeout == 123.5


class TestRemoteTcp:
    def test_round_trip_over_tcp(self):
        d = 8
        target = token_mean(synthetic_prompt(d, 3, seed=1).emb)
        server = OracleTcpServer(("127.0.0.1", 0), OracleServer(quadratic_oracle(target), d=d))
        port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            with remote_oracle(f"tcp:127.0.0.1:{port}", expect_d=d, timeout_s=30) as oracle:
                local = quadratic_oracle(target)
                for seed in range(10):
                    aug, prompt = _random_aug(d, seed=seed + 500)
                    assert (
                        oracle.evaluate(aug, prompt).reward
                        == local.evaluate(aug, prompt).reward
                    )
        finally:
            server.shutdown()
            server.server_close()

    def test_unreachable_endpoint(self):
        with pytest.raises(TransportError):
            remote_oracle("tcp:127.0.0.1:1", timeout_s=2)


class TestTrainingViaRemote:
    def test_metric_traces_identical_to_in_process(self, tmp_path):
        from ipgo.fileio import write_embedding

        d = 8
        prompt = synthetic_prompt(d, 3, seed=77)
        target = token_mean(prompt.emb)
        target_path = str(tmp_path / "target.ipgo")
        write_embedding(target_path, target)
        cfg = TrainConfig(
            mode=Mode.IPGO_PLUS,
            epochs=10,
            schedule=StepDecay(0.01, 0.9, 5),
            gamma=1e-3,
            clip_norm=1.0,
            n_pre=2,
            n_suff=2,
            m_pre=3,
            m_suff=3,
            seed=13,
        )
        _, local_metrics = train_promptwise(prompt, quadratic_oracle(target), cfg)
        cmd = _serve_cmd(f"quadratic:{target_path}", d)
        with remote_oracle(cmd, expect_d=d, timeout_s=60) as oracle:
            _, remote_metrics = train_promptwise(prompt, oracle, cfg)
        assert local_metrics.records == remote_metrics.records
        assert local_metrics.best_reward == remote_metrics.best_reward
