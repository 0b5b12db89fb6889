"""Newline-delimited JSON oracle protocol.

One JSON object per line; requests carry an `id` that responses echo
exactly. Matrix payloads are base64 of raw little-endian float64 bytes in
column-major order, so numeric precision is never lost to decimal printing.

Ops:
    hello     {"id", "op": "hello", "version"}
              -> {"id", "ok": true, "version", "d", "max_tokens"}
    encode    {"id", "op": "encode", "text"}
              -> {"id", "ok": true, "d", "cols", "data", "prompt_id"}
    evaluate  {"id", "op": "evaluate", "d", "cols", "data", "prompt_id",
               "n_pre", "n_suff", "truncate_at"}
              -> {"id", "ok": true, "reward", "grad": {"d", "cols", "data"}}

Any failure is {"id", "ok": false, "error": "..."}. One request is in
flight per connection; `truncate_at` tells sampling-based oracles how many
steps from the end of the sampler their internal backpropagation may cross
(analytic oracles ignore it).
"""

from __future__ import annotations

import base64
import json
import os
import selectors
import shlex
import socket
import socketserver
import subprocess
import time

import numpy as np

from .augment import AugmentedEmbedding, PromptEmbedding
from .linalg import Mat
from .rewards import OracleError, OracleResult, RewardOracle

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 300.0
TIMEOUT_ENV = "IPGO_ORACLE_TIMEOUT_S"
DEFAULT_TRUNCATE_AT = 2


class ProtocolError(RuntimeError):
    """Base class for wire-protocol faults."""


class TransportError(ProtocolError):
    """The peer closed the connection or cannot be reached."""


class OracleTimeoutError(ProtocolError):
    pass


class MalformedMessageError(ProtocolError):
    pass


class HandshakeError(ProtocolError):
    pass


class RemoteOracleError(OracleError):
    """An error reported by the remote side, surfaced verbatim."""


# --- matrix codec ------------------------------------------------------------


def encode_matrix(mat: Mat) -> str:
    return base64.b64encode(mat.a.astype("<f8", copy=False).tobytes(order="F")).decode(
        "ascii"
    )


def decode_matrix(data_b64: str, rows: int, cols: int) -> Mat:
    try:
        raw = base64.b64decode(data_b64, validate=True)
    except Exception as exc:
        raise MalformedMessageError(f"invalid base64 payload: {exc}") from exc
    if len(raw) != rows * cols * 8:
        raise MalformedMessageError(
            f"payload holds {len(raw)} bytes, expected {rows * cols * 8} "
            f"for a {rows}x{cols} matrix"
        )
    arr = np.frombuffer(raw, dtype="<f8").reshape((rows, cols), order="F")
    return Mat(arr)


def matrix_payload(mat: Mat) -> dict:
    return {"d": mat.rows, "cols": mat.cols, "data": encode_matrix(mat)}


def matrix_from_payload(payload: dict) -> Mat:
    try:
        return decode_matrix(payload["data"], int(payload["d"]), int(payload["cols"]))
    except KeyError as exc:
        raise MalformedMessageError(f"matrix payload missing field {exc}") from exc


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=False, separators=(",", ":"))


# --- server side -------------------------------------------------------------


class OracleServer:
    """Hosts a RewardOracle (and optionally a text encoder) over the protocol.

    The prompt matrix a conditioned oracle needs is recovered from the
    evaluate payload itself: the middle segment of the augmented matrix is
    the frozen prompt.
    """

    def __init__(
        self,
        oracle: RewardOracle,
        d: int | None = None,
        max_tokens: int | None = None,
        encoder=None,
    ):
        od, omax = oracle.dims()
        self.oracle = oracle
        self.d = d if d is not None else od
        if self.d is None:
            raise ValueError("server needs an embedding dimension (explicit or from the oracle)")
        self.max_tokens = max_tokens if max_tokens is not None else omax
        self.encoder = encoder

    def handle_line(self, line: str) -> str:
        req_id = None
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise MalformedMessageError("request is not a JSON object")
            req_id = msg.get("id")
            op = msg.get("op")
            if op == "hello":
                reply = self._hello(msg)
            elif op == "encode":
                reply = self._encode(msg)
            elif op == "evaluate":
                reply = self._evaluate(msg)
            else:
                raise MalformedMessageError(f"unknown op {op!r}")
            reply["id"] = req_id
            return dumps_line(reply)
        except Exception as exc:
            return dumps_line({"id": req_id, "ok": False, "error": str(exc)})

    def _hello(self, msg: dict) -> dict:
        version = msg.get("version", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            raise MalformedMessageError(
                f"protocol version {version} unsupported (server speaks {PROTOCOL_VERSION})"
            )
        return {
            "ok": True,
            "version": PROTOCOL_VERSION,
            "d": self.d,
            "max_tokens": self.max_tokens,
            "oracle": self.oracle.describe(),
        }

    def _encode(self, msg: dict) -> dict:
        if self.encoder is None:
            raise MalformedMessageError("this server does not provide an encoder")
        text = msg.get("text")
        if not isinstance(text, str) or not text:
            raise MalformedMessageError("encode needs a nonempty 'text' field")
        prompt = self.encoder(text)
        reply = {"ok": True, "prompt_id": prompt.prompt_id}
        reply.update(matrix_payload(prompt.emb))
        return reply

    def _evaluate(self, msg: dict) -> dict:
        for key in ("d", "cols", "data", "n_pre", "n_suff"):
            if key not in msg:
                raise MalformedMessageError(f"evaluate missing field {key!r}")
        d, cols = int(msg["d"]), int(msg["cols"])
        if d != self.d:
            raise MalformedMessageError(
                f"evaluate dimension {d} does not match server dimension {self.d}"
            )
        if self.max_tokens is not None and cols > self.max_tokens:
            raise MalformedMessageError(
                f"evaluate carries {cols} tokens, server limit is {self.max_tokens}"
            )
        n_pre, n_suff = int(msg["n_pre"]), int(msg["n_suff"])
        k = cols - n_pre - n_suff
        if k < 1:
            raise MalformedMessageError(
                f"segments ({n_pre}, {n_suff}) leave no prompt tokens out of {cols}"
            )
        emb = decode_matrix(msg["data"], d, cols)
        aug = AugmentedEmbedding(emb=emb, n_pre=n_pre, k=k, n_suff=n_suff)
        prompt = PromptEmbedding(emb=aug.prompt_part(), prompt_id=str(msg.get("prompt_id", "")))
        res = self.oracle.evaluate(aug, prompt)
        return {"ok": True, "reward": res.reward, "grad": matrix_payload(res.grad)}

    def serve_streams(self, rfile, wfile):
        """Serve until EOF; one request per line, one response per line."""
        for line in rfile:
            line = line.strip()
            if not line:
                continue
            wfile.write(self.handle_line(line) + "\n")
            wfile.flush()


def serve_stdio(server: OracleServer):
    import sys

    server.serve_streams(sys.stdin, sys.stdout)


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        rfile = self.rfile
        wfile = self.wfile
        for raw in rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            wfile.write((self.server.oracle_server.handle_line(line) + "\n").encode("utf-8"))
            wfile.flush()


class OracleTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], oracle_server: OracleServer):
        super().__init__(address, _TcpHandler)
        self.oracle_server = oracle_server


# --- client side -------------------------------------------------------------


def _resolve_timeout(timeout_s: float | None) -> float:
    if timeout_s is not None:
        return float(timeout_s)
    env = os.environ.get(TIMEOUT_ENV)
    if env:
        try:
            return float(env)
        except ValueError as exc:
            raise ValueError(f"{TIMEOUT_ENV}={env!r} is not a number") from exc
    return DEFAULT_TIMEOUT_S


class _PipeTransport:
    """Spawns the oracle as a child process and speaks over its stdio."""

    def __init__(self, command: str):
        argv = shlex.split(command)
        if not argv:
            raise TransportError("empty oracle command")
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
            )
        except OSError as exc:
            raise TransportError(f"cannot spawn oracle command {command!r}: {exc}") from exc
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        os.set_blocking(self.proc.stdout.fileno(), False)
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        self.endpoint = command

    def send_line(self, line: str):
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"oracle process pipe closed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1 :]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeoutError(
                    f"oracle {self.endpoint!r} gave no response within {timeout} s"
                )
            events = self._sel.select(min(remaining, 0.25))
            if not events:
                if self.proc.poll() is not None and not self._buf:
                    raise TransportError(
                        f"oracle process exited with code {self.proc.returncode}"
                    )
                continue
            chunk = self.proc.stdout.read()
            if chunk:
                self._buf += chunk
            elif chunk == b"" and self.proc.poll() is not None:
                raise TransportError("oracle process closed its output mid-request")

    def close(self):
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()
        finally:
            self._sel.close()


class _TcpTransport:
    def __init__(self, host: str, port: int, connect_timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to oracle at {host}:{port}: {exc}") from exc
        self.sock.setblocking(True)
        self._buf = b""
        self.endpoint = f"tcp:{host}:{port}"

    def send_line(self, line: str):
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise TransportError(f"oracle connection closed: {exc}") from exc

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1 :]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeoutError(
                    f"oracle {self.endpoint!r} gave no response within {timeout} s"
                )
            self.sock.settimeout(min(remaining, 0.25))
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError as exc:
                raise TransportError(f"oracle connection failed: {exc}") from exc
            if not chunk:
                raise TransportError("oracle closed the connection mid-request")
            self._buf += chunk

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class RemoteOracle(RewardOracle):
    """RewardOracle implemented by an external process over the protocol.

    One request is in flight at a time; the hello handshake runs at
    construction and pins the embedding dimension.
    """

    def __init__(
        self,
        transport,
        expect_d: int | None = None,
        timeout_s: float | None = None,
        truncate_at: int = DEFAULT_TRUNCATE_AT,
    ):
        self._transport = transport
        self._timeout = _resolve_timeout(timeout_s)
        self._next_id = 0
        self.truncate_at = int(truncate_at)
        hello = self._roundtrip({"op": "hello", "version": PROTOCOL_VERSION})
        self._d = hello.get("d")
        self._max_tokens = hello.get("max_tokens")
        self._remote_desc = hello.get("oracle", "")
        if expect_d is not None and self._d != expect_d:
            raise HandshakeError(
                f"oracle serves dimension {self._d}, expected {expect_d}"
            )

    def _roundtrip(self, body: dict) -> dict:
        self._next_id += 1
        req_id = self._next_id
        msg = {"id": req_id}
        msg.update(body)
        self._transport.send_line(dumps_line(msg))
        line = self._transport.recv_line(self._timeout)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedMessageError(f"oracle sent invalid JSON: {line[:200]!r}") from exc
        if not isinstance(reply, dict) or reply.get("id") != req_id:
            raise MalformedMessageError(
                f"oracle response id {reply.get('id')!r} does not echo request id {req_id}"
            )
        if not reply.get("ok", False):
            raise RemoteOracleError(str(reply.get("error", "unspecified remote error")))
        return reply

    # RewardOracle interface

    def evaluate(self, aug: AugmentedEmbedding, prompt: PromptEmbedding) -> OracleResult:
        body = {
            "op": "evaluate",
            "prompt_id": prompt.prompt_id,
            "n_pre": aug.n_pre,
            "n_suff": aug.n_suff,
            "truncate_at": self.truncate_at,
        }
        body.update(matrix_payload(aug.emb))
        reply = self._roundtrip(body)
        if "reward" not in reply or "grad" not in reply:
            raise MalformedMessageError("evaluate response missing reward or grad")
        grad_payload = reply["grad"]
        if int(grad_payload.get("d", -1)) != aug.d or int(grad_payload.get("cols", -1)) != aug.total_tokens:
            raise MalformedMessageError(
                f"gradient dims {grad_payload.get('d')}x{grad_payload.get('cols')} "
                f"do not match request dims {aug.d}x{aug.total_tokens}"
            )
        grad = matrix_from_payload(grad_payload)
        return OracleResult(reward=float(reply["reward"]), grad=grad)

    def encode(self, text: str) -> PromptEmbedding:
        reply = self._roundtrip({"op": "encode", "text": text})
        emb = matrix_from_payload(reply)
        return PromptEmbedding(emb=emb, prompt_id=str(reply.get("prompt_id", "")))

    def describe(self) -> str:
        suffix = f" -> {self._remote_desc}" if self._remote_desc else ""
        return f"remote({self._transport.endpoint}{suffix})"

    def dims(self) -> tuple[int | None, int | None]:
        return (self._d, self._max_tokens)

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_oracle(
    endpoint: str,
    expect_d: int | None = None,
    timeout_s: float | None = None,
    truncate_at: int = DEFAULT_TRUNCATE_AT,
) -> RemoteOracle:
    """Connect to an external oracle.

    `endpoint` is either `tcp:HOST:PORT` or a command line to spawn with a
    pipe transport.
    """
    if endpoint.startswith("tcp:"):
        rest = endpoint[4:]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp endpoint must look like tcp:HOST:PORT, got {endpoint!r}")
        transport = _TcpTransport(host, int(port), _resolve_timeout(timeout_s))
    else:
        transport = _PipeTransport(endpoint)
    return RemoteOracle(
        transport, expect_d=expect_d, timeout_s=timeout_s, truncate_at=truncate_at
    )
