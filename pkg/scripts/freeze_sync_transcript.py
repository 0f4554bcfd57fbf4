"""Freeze the wire bytes of the session in tests/golden.py.

Rerun only after an intentional change to the sync wire format.
"""

import json
import sys
from pathlib import Path

TESTS = Path(__file__).resolve().parent.parent / "tests"
sys.path.insert(0, str(TESTS))

from golden import FIXTURE, sync_scenario  # noqa: E402
from siliconhealth.syncproto import run_sync  # noqa: E402


def main():
    ea, eb, channel = sync_scenario()
    report = run_sync(ea, eb, channel)
    frames = [{"sender": s, "frame": raw.hex()} for s, raw in channel.transcript]
    out = TESTS / "fixtures" / FIXTURE
    out.write_text(json.dumps({"root": ea.ledger.root.hex(), "bytes_sent": report.bytes_sent,
                               "bytes_received": report.bytes_received, "frames": frames}, indent=2) + "\n")
    print(f"wrote {len(frames)} frames to {out}")


if __name__ == "__main__":
    main()
