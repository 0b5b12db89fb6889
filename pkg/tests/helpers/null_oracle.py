"""A from-scratch protocol server used to cross-check conformance: every
evaluate returns reward 0 with a zero gradient. Deliberately independent of
the library (stdlib only)."""

import base64
import json
import sys

D = int(sys.argv[1]) if len(sys.argv) > 1 else 8

for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        print(json.dumps({"id": None, "ok": False, "error": "bad json"}), flush=True)
        continue
    rid = msg.get("id")
    op = msg.get("op")
    if op == "hello":
        out = {"id": rid, "ok": True, "version": 1, "d": D, "max_tokens": 97}
    elif op == "evaluate":
        d, cols = int(msg["d"]), int(msg["cols"])
        zeros = base64.b64encode(bytes(8 * d * cols)).decode("ascii")
        out = {
            "id": rid,
            "ok": True,
            "reward": 0.0,
            "grad": {"d": d, "cols": cols, "data": zeros},
        }
    else:
        out = {"id": rid, "ok": False, "error": f"unsupported op {op!r}"}
    print(json.dumps(out), flush=True)
