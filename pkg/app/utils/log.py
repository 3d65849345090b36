"""
Tagged, key=value log lines on standard error.

Standard output is reserved for JSON reports and artifacts, so every module
logs through here instead of print().

Usage:
    from app.utils.log import log
    log("WARP", "homography warp done", valid=1234, icon="📐")
    # stderr:   📐 [WARP] homography warp done valid=1234
"""

from __future__ import annotations
import sys
from typing import Any


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    text = str(value)
    return f'"{text}"' if " " in text else text


def log(tag: str, message: str = "", icon: str = "•", **fields: Any) -> None:
    parts = [f"  {icon} [{tag}]"]
    if message:
        parts.append(message)
    parts += [f"{k}={_fmt(v)}" for k, v in fields.items()]
    print(" ".join(parts), file=sys.stderr, flush=True)
