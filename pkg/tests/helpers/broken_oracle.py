"""Fault-injection servers for transport tests. stdlib only.

Modes: close-mid-request (exit after reading the first evaluate), slow
(answer hello, then sleep far past any test timeout), garbage (answer hello,
then emit invalid JSON).
"""

import json
import sys
import time

MODE = sys.argv[1] if len(sys.argv) > 1 else "close"

for line in sys.stdin:
    msg = json.loads(line)
    if msg.get("op") == "hello":
        print(
            json.dumps({"id": msg["id"], "ok": True, "version": 1, "d": 8, "max_tokens": 97}),
            flush=True,
        )
        continue
    if MODE == "close":
        sys.exit(3)
    if MODE == "slow":
        time.sleep(60)
        sys.exit(0)
    if MODE == "garbage":
        print("this is not json", flush=True)
        continue
