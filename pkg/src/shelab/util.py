"""Small shared helpers: confidence intervals, hashing, run bookkeeping."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np


def wilson_ci(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (default 95%)."""
    if n <= 0:
        raise ValueError("wilson_ci needs n > 0")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def binomial_se(phat: float, n: int) -> float:
    if n <= 0:
        raise ValueError("binomial_se needs n > 0")
    return float(np.sqrt(max(phat * (1.0 - phat), 1e-12) / n))


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path: str | os.PathLike, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_jsonify)
        f.write("\n")


def _jsonify(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def default_threads() -> int:
    """Worker count: SHELAB_THREADS env var if set, else 1 (deterministic default)."""
    raw = os.environ.get("SHELAB_THREADS", "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError("SHELAB_THREADS must be >= 1")
        return n
    return 1
