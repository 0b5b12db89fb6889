"""Checked-in fixture corpus.

Every fixture is reproducible from its manifest entry: an id, the CLI
command that generates it (with an {out} placeholder), the seed it uses,
and the sha256 of each output file. `check` regenerates into a temporary
directory and compares both the fresh hashes and the committed files
against the manifest; `regen` rewrites the committed files and fails if
anything drifted (unless asked to update the manifest).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass


@dataclass(frozen=True)
class FixtureEntry:
    id: str
    seed: int
    command: list[str]
    outputs: dict[str, str]


def load_manifest(path: str) -> list[FixtureEntry]:
    with open(path) as fh:
        data = json.load(fh)
    entries = []
    for raw in data.get("fixtures", []):
        entries.append(
            FixtureEntry(
                id=raw["id"],
                seed=int(raw.get("seed", 0)),
                command=list(raw["command"]),
                outputs=dict(raw["outputs"]),
            )
        )
    return entries


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _run_entry(entry: FixtureEntry, out_dir: str):
    from click.testing import CliRunner

    from .cli import main

    argv = [arg.replace("{out}", out_dir) for arg in entry.command]
    result = CliRunner().invoke(main, argv, catch_exceptions=False)
    if result.exit_code != 0:
        raise RuntimeError(
            f"fixture {entry.id}: generator exited {result.exit_code}: {result.output[:500]}"
        )


def _entry_result(entry: FixtureEntry, fresh_dir: str, committed_dir: str | None) -> dict:
    detail = []
    for rel, expected in sorted(entry.outputs.items()):
        fresh_path = os.path.join(fresh_dir, rel)
        if not os.path.exists(fresh_path):
            detail.append(f"{rel}: not produced")
            continue
        fresh = _sha256(fresh_path)
        if fresh != expected:
            detail.append(f"{rel}: regenerated hash {fresh[:12]} != manifest {expected[:12]}")
        if committed_dir is not None:
            committed_path = os.path.join(committed_dir, rel)
            if not os.path.exists(committed_path):
                detail.append(f"{rel}: committed copy missing")
            elif _sha256(committed_path) != expected:
                detail.append(f"{rel}: committed copy differs from manifest")
    return {"id": entry.id, "ok": not detail, "detail": "; ".join(detail)}


def check_fixtures(manifest_path: str) -> list[dict]:
    """Regenerate everything into a scratch directory and verify all hashes."""
    entries = load_manifest(manifest_path)
    committed_dir = os.path.dirname(os.path.abspath(manifest_path))
    results = []
    for entry in entries:
        with tempfile.TemporaryDirectory(prefix="ipgo-fixture-") as tmp:
            _run_entry(entry, tmp)
            results.append(_entry_result(entry, tmp, committed_dir))
    return results


def regen_fixtures(manifest_path: str, update: bool = False) -> list[dict]:
    """Regenerate the committed fixture files in place.

    Without `update`, any hash drift is an error naming the fixture; with
    it, the manifest is rewritten to match this run.
    """
    entries = load_manifest(manifest_path)
    fixtures_dir = os.path.dirname(os.path.abspath(manifest_path))
    results = []
    new_entries = []
    for entry in entries:
        _run_entry(entry, fixtures_dir)
        fresh = {
            rel: _sha256(os.path.join(fixtures_dir, rel))
            for rel in sorted(entry.outputs)
            if os.path.exists(os.path.join(fixtures_dir, rel))
        }
        if update:
            new_entries.append(
                {
                    "id": entry.id,
                    "seed": entry.seed,
                    "command": entry.command,
                    "outputs": fresh,
                }
            )
            results.append({"id": entry.id, "ok": True, "detail": "updated"})
        else:
            results.append(_entry_result(entry, fixtures_dir, None))
    if update:
        payload = json.dumps({"fixtures": new_entries}, indent=2, sort_keys=True) + "\n"
        with open(manifest_path, "w") as fh:
            fh.write(payload)
    return results
