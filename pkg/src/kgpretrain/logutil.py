"""Structured key=value logging to stderr; primary artifacts never go here."""

from __future__ import annotations

import sys


def log(event: str, **fields) -> None:
    parts = [f"event={event}"]
    for k, v in fields.items():
        text = str(v)
        if " " in text or "=" in text:
            text = repr(text)
        parts.append(f"{k}={text}")
    print(" ".join(parts), file=sys.stderr)
