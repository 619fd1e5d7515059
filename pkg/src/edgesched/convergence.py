"""Convergence point of a per-episode hit-ratio series."""
from __future__ import annotations

from typing import Sequence


def detect_convergence(series: Sequence[float], threshold: float = 0.98, window: int = 100) -> int | None:
    """Smallest episode ``e`` such that every value from ``e`` onwards exceeds ``threshold``
    and at least ``window`` of them exist. ``None`` when there is no such episode.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    start = len(series)
    for i in range(len(series) - 1, -1, -1):
        if series[i] > threshold:
            start = i
        else:
            break
    if len(series) - start >= window:
        return start
    return None
