"""Command-line interface.

The CLI is a thin client of the HTTP service: it assembles a request from a
JSON config file plus flag overrides, posts it, and writes the returned
artifacts verbatim. With --server (or IPGO_SERVER) it talks to a running
instance; otherwise it embeds the service in-process and speaks to it
through the same HTTP surface. Artifact bytes are produced server-side, so
a fixed seed and config give byte-identical outputs either way.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from . import fixtures as fixtures_mod
from . import oracle_server
from .fileio import atomic_write_bytes, read_embedding
from .service import models as m

_CONFIG_KEYS = set(m.TrainConfigModel.model_fields)


def _fail(kind: str, message: str, code: int = 1):
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SystemExit:
            raise
        except Exception as exc:
            _fail(type(exc).__name__, str(exc))

    return wrapper


class _ServiceClient:
    """POST/GET against a remote server or an embedded app instance."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            detail = {}
            try:
                detail = resp.json().get("detail", {})
            except Exception:
                pass
            _fail(
                detail.get("error", f"http {resp.status_code}"),
                detail.get("message", resp.text[:500]),
            )
        return resp.json()


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


def _parse_synthetic(text: str) -> dict:
    parts = text.split(",")
    if len(parts) not in (2, 3):
        raise ValueError(f"--synthetic expects d,K[,seed], got {text!r}")
    spec = {"d": int(parts[0]), "k": int(parts[1])}
    spec["seed"] = int(parts[2]) if len(parts) == 3 else 0
    return spec


def _prompt_payload(prompt_path: str | None, synthetic: str | None, file_cfg: dict) -> dict:
    src_path = prompt_path or file_cfg.get("prompt")
    src_synth = _parse_synthetic(synthetic) if synthetic else file_cfg.get("synthetic")
    if src_path:
        mat, _ = read_embedding(src_path)
        pid = os.path.splitext(os.path.basename(src_path))[0]
        return {
            "matrix": m.MatrixModel.from_mat(mat).model_dump(),
            "prompt_id": pid,
        }
    if src_synth:
        return {"synthetic": src_synth, "prompt_id": src_synth.get("prompt_id", "")}
    raise ValueError("no prompt source: pass --prompt, --synthetic, or set one in --config")


def _assemble_config(file_cfg: dict, flag_overrides: dict) -> dict:
    cfg = {k: v for k, v in file_cfg.items() if k in _CONFIG_KEYS}
    schedule = dict(cfg.get("schedule") or {})
    for key, value in flag_overrides.items():
        if value is None:
            continue
        if key in ("kind", "lr0", "factor", "period", "lr_hi", "lr_lo"):
            schedule[key] = value
        else:
            cfg[key] = value
    if schedule:
        cfg["schedule"] = schedule
    unknown = set(file_cfg) - _CONFIG_KEYS - {"oracle", "prompt", "prompts", "synthetic"}
    if unknown:
        raise ValueError(f"unknown config file keys: {sorted(unknown)}")
    return m.TrainConfigModel.model_validate(cfg).model_dump()


def _write_run_artifacts(out_dir: str, response: dict):
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_bytes(os.path.join(out_dir, "config.json"), response["config_echo"].encode())
    atomic_write_bytes(
        os.path.join(out_dir, "metrics.jsonl"), response["metrics_jsonl"].encode()
    )
    atomic_write_bytes(
        os.path.join(out_dir, "params.ipgo"), m.unb64(response["params_file"])
    )
    atomic_write_bytes(
        os.path.join(out_dir, "inserts.ipgo"), m.unb64(response["inserts_file"])
    )


_train_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--oracle", default=None, help="oracle spec (see README)"),
    click.option("--mode", type=click.Choice(["ipgo", "ipgo-plus"]), default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--gamma", type=float, default=None),
    click.option("--clip-norm", "clip_norm", type=float, default=None),
    click.option("--n-pre", "n_pre", type=int, default=None),
    click.option("--n-suff", "n_suff", type=int, default=None),
    click.option("--m-pre", "m_pre", type=int, default=None),
    click.option("--m-suff", "m_suff", type=int, default=None),
    click.option("--batch-size", "batch_size", type=int, default=None),
    click.option("--truncate-at", "truncate_at", type=int, default=None),
    click.option(
        "--schedule", "kind", type=click.Choice(["step", "cosine"]), default=None
    ),
    click.option("--lr0", type=float, default=None),
    click.option("--lr-factor", "factor", type=float, default=None),
    click.option("--lr-period", "period", type=int, default=None),
    click.option("--lr-hi", "lr_hi", type=float, default=None),
    click.option("--lr-lo", "lr_lo", type=float, default=None),
]


def _with_train_options(fn):
    for opt in reversed(_train_options):
        fn = opt(fn)
    return fn


@click.group()
@click.option(
    "--server",
    envvar="IPGO_SERVER",
    default=None,
    help="base URL of a running service; embedded in-process when unset",
)
@click.pass_context
def main(ctx, server):
    ctx.obj = {"server": server}


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--prompt", "prompt_path", type=click.Path(exists=True), default=None)
@click.option("--synthetic", default=None, help="synthetic prompt as d,K[,seed]")
@_with_train_options
@click.pass_context
@_cli_errors
def optimize(ctx, out_dir, prompt_path, synthetic, config_path, oracle, **flags):
    """Train prefix/suffix inserts for one prompt."""
    file_cfg = _load_config_file(config_path)
    payload = {
        "prompt": _prompt_payload(prompt_path, synthetic, file_cfg),
        "oracle": oracle or file_cfg.get("oracle", "quadratic"),
        "config": _assemble_config(file_cfg, flags),
    }
    response = _ServiceClient(ctx.obj["server"]).post("/v1/optimize", payload)
    _write_run_artifacts(out_dir, response)
    click.echo(
        json.dumps(
            {
                "best_reward": response["best_reward"],
                "best_epoch": response["best_epoch"],
                "epochs": len(response["records"]),
                "out": out_dir,
            },
            sort_keys=True,
        )
    )


@main.command("optimize-batch")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option(
    "--prompt",
    "prompt_paths",
    type=click.Path(exists=True),
    multiple=True,
    help="repeatable embedding file",
)
@click.option(
    "--synthetic",
    "synthetics",
    multiple=True,
    help="repeatable synthetic prompt d,K[,seed]",
)
@_with_train_options
@click.pass_context
@_cli_errors
def optimize_batch(ctx, out_dir, prompt_paths, synthetics, config_path, oracle, **flags):
    """Train one shared insert set over a prompt batch (ipgo-plus)."""
    file_cfg = _load_config_file(config_path)
    prompts = []
    for p in prompt_paths:
        prompts.append(_prompt_payload(p, None, {}))
    for s in synthetics:
        prompts.append({"synthetic": _parse_synthetic(s), "prompt_id": ""})
    if not prompts:
        for p in file_cfg.get("prompts", []):
            if isinstance(p, str):
                prompts.append(_prompt_payload(p, None, {}))
            else:
                prompts.append({"synthetic": p, "prompt_id": p.get("prompt_id", "")})
    if not prompts:
        raise ValueError("no prompts: pass --prompt/--synthetic or 'prompts' in --config")
    flags.setdefault("mode", None)
    if flags["mode"] is None and "mode" not in file_cfg:
        flags["mode"] = "ipgo-plus"
    payload = {
        "prompts": prompts,
        "oracle": oracle or file_cfg.get("oracle", "quadratic"),
        "config": _assemble_config(file_cfg, flags),
    }
    response = _ServiceClient(ctx.obj["server"]).post("/v1/optimize-batch", payload)
    _write_run_artifacts(out_dir, response)
    click.echo(
        json.dumps(
            {
                "best_reward": response["best_reward"],
                "best_epoch": response["best_epoch"],
                "prompts": len(prompts),
                "out": out_dir,
            },
            sort_keys=True,
        )
    )


@main.command()
@click.argument("a_path", type=click.Path(exists=True))
@click.argument("b_path", type=click.Path(exists=True))
@click.option("--lam", type=float, required=True, help="weight on the first pair")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@_cli_errors
def mix(ctx, a_path, b_path, lam, out_path):
    """Convex-blend two learned insert pairs."""
    payload = {
        "a_file": m.b64(open(a_path, "rb").read()),
        "b_file": m.b64(open(b_path, "rb").read()),
        "lam": lam,
    }
    response = _ServiceClient(ctx.obj["server"]).post("/v1/mix", payload)
    atomic_write_bytes(out_path, m.unb64(response["mixed_file"]))
    click.echo(json.dumps({"out": out_path, "lam": lam}, sort_keys=True))


@main.command()
@click.option("--seeds", type=int, default=5)
@click.option("--d", type=int, default=8)
@click.option("--m", "m_width", type=int, default=3)
@click.option("--n-pre", "n_pre", type=int, default=2)
@click.option("--n-suff", "n_suff", type=int, default=2)
@click.option("--k", type=int, default=4)
@click.option("--h", type=float, default=1e-5)
@click.option("--tolerance", type=float, default=1e-5)
@click.option(
    "--snapshot",
    "snapshot_path",
    type=click.Path(),
    default=None,
    help="also write the seed-0 analytic gradients as JSON",
)
@click.pass_context
@_cli_errors
def gradcheck(ctx, seeds, d, m_width, n_pre, n_suff, k, h, tolerance, snapshot_path):
    """Check every backward pass against finite differences."""
    payload = {
        "seeds": seeds,
        "d": d,
        "m": m_width,
        "n_pre": n_pre,
        "n_suff": n_suff,
        "k": k,
        "h": h,
        "tolerance": tolerance,
        "include_snapshot": snapshot_path is not None,
    }
    report = _ServiceClient(ctx.obj["server"]).post("/v1/gradcheck", payload)
    if snapshot_path:
        atomic_write_bytes(
            snapshot_path,
            (json.dumps(report["snapshot"], sort_keys=True, indent=2) + "\n").encode(),
        )
    for name, err in sorted(report["checks"].items()):
        click.echo(f"{name}: max relative error {err:.3e}")
    click.echo(
        json.dumps(
            {
                "max_rel_err": report["max_rel_err"],
                "tolerance": report["tolerance"],
                "passed": report["passed"],
            },
            sort_keys=True,
        )
    )
    if not report["passed"]:
        sys.exit(1)


@main.command("demo-rotation")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", type=int, default=50)
@click.option("--seed", type=int, default=2026)
@click.option("--steps", type=int, default=5000)
@click.pass_context
@_cli_errors
def demo_rotation(ctx, out_dir, count, seed, steps):
    """Run the 2-D rotation-assisted descent comparison."""
    payload = {"count": count, "seed": seed, "steps": steps}
    response = _ServiceClient(ctx.obj["server"]).post("/v1/demo-rotation", payload)
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_bytes(
        os.path.join(out_dir, "comparison.csv"), response["comparison_csv"].encode()
    )
    atomic_write_bytes(
        os.path.join(out_dir, "trajectories.csv"), response["trajectories_csv"].encode()
    )
    atomic_write_bytes(
        os.path.join(out_dir, "summary.json"),
        (json.dumps(response["summary"], sort_keys=True, indent=2) + "\n").encode(),
    )
    click.echo(json.dumps(response["summary"], sort_keys=True))


@main.command("gen-synthetic")
@click.option("--d", type=int, required=True)
@click.option("--k", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--prompt-id", default="")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@_cli_errors
def gen_synthetic(ctx, d, k, seed, prompt_id, out_path):
    """Write a seeded synthetic prompt embedding (unit-norm columns)."""
    payload = {"d": d, "k": k, "seed": seed, "prompt_id": prompt_id}
    response = _ServiceClient(ctx.obj["server"]).post("/v1/synthetic", payload)
    atomic_write_bytes(out_path, m.unb64(response["file"]))
    click.echo(json.dumps({"out": out_path, "prompt_id": response["prompt_id"]}, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
@_cli_errors
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port, log_level="warning")


@main.group()
def fixtures():
    """Regenerate or verify the checked-in fixture corpus."""


@fixtures.command("check")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@_cli_errors
def fixtures_check(manifest_path):
    results = fixtures_mod.check_fixtures(manifest_path)
    failed = [r for r in results if not r["ok"]]
    for r in results:
        click.echo(json.dumps(r, sort_keys=True))
    if failed:
        _fail("FixtureDrift", f"{len(failed)} fixture(s) drifted: "
              + ", ".join(r["id"] for r in failed))
    click.echo(json.dumps({"fixtures": len(results), "ok": True}, sort_keys=True))


@fixtures.command("regen")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--update", is_flag=True, help="rewrite manifest hashes from this run")
@_cli_errors
def fixtures_regen(manifest_path, update):
    results = fixtures_mod.regen_fixtures(manifest_path, update=update)
    failed = [r for r in results if not r["ok"]]
    for r in results:
        click.echo(json.dumps(r, sort_keys=True))
    if failed:
        _fail("FixtureDrift", f"{len(failed)} fixture(s) drifted: "
              + ", ".join(r["id"] for r in failed))
    click.echo(json.dumps({"fixtures": len(results), "ok": True}, sort_keys=True))


main.add_command(oracle_server.main, name="serve-oracle")


if __name__ == "__main__":
    main()
