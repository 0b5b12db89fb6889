"""Reference protocol server: hosts an in-process oracle over stdio or TCP.

Run as `python -m ipgo.oracle_server --oracle SPEC --d N [--tcp HOST:PORT]`.
The stdio mode serves exactly one connection (its stdin); the TCP mode
serves one request at a time per connection, with threads allowing parallel
connections. Text encoding, when enabled, uses the deterministic synthetic
encoder, standing in for a frozen text encoder at desk scale.
"""

from __future__ import annotations

import sys

import click

from .oracle_specs import build_oracle, synthetic_text_encoder
from .wire import OracleServer, OracleTcpServer, serve_stdio


def make_server(
    oracle_spec: str,
    d: int,
    max_tokens: int | None = None,
    encode_seed: int | None = None,
) -> OracleServer:
    oracle = build_oracle(oracle_spec, d=d)
    encoder = None
    if encode_seed is not None:
        encoder = synthetic_text_encoder(d, max_tokens or 77, base_seed=encode_seed)
    return OracleServer(oracle, d=d, max_tokens=max_tokens, encoder=encoder)


@click.command()
@click.option("--oracle", "oracle_spec", required=True, help="oracle spec string")
@click.option("--d", "d", type=int, required=True, help="embedding dimension served")
@click.option("--max-tokens", type=int, default=None, help="token-count limit")
@click.option(
    "--encode-seed",
    type=int,
    default=None,
    help="enable the synthetic text encoder with this base seed",
)
@click.option("--tcp", "tcp", default=None, help="serve on HOST:PORT instead of stdio")
def main(oracle_spec, d, max_tokens, encode_seed, tcp):
    server = make_server(oracle_spec, d, max_tokens, encode_seed)
    if tcp:
        host, _, port = tcp.rpartition(":")
        if not host or not port.isdigit():
            raise click.UsageError(f"--tcp expects HOST:PORT, got {tcp!r}")
        with OracleTcpServer((host, int(port)), server) as srv:
            click.echo(f"serving on {srv.server_address[0]}:{srv.server_address[1]}", err=True)
            srv.serve_forever()
    else:
        serve_stdio(server)


if __name__ == "__main__":
    main()
