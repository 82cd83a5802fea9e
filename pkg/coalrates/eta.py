from __future__ import annotations

from typing import Optional


def estimate_remaining_seconds(*, elapsed_seconds: float, progress: float) -> Optional[int]:
    """Linear extrapolation from the completed fraction; None when it cannot be judged."""
    if progress <= 0.0 or elapsed_seconds < 0:
        return None
    return max(0, int(elapsed_seconds * (1.0 / progress - 1.0)))


def format_eta(seconds: Optional[int]) -> Optional[str]:
    if seconds is None or seconds < 0:
        return None
    hours, rest = divmod(int(seconds), 3600)
    minutes, secs = divmod(rest, 60)
    # Long runs are reported to the minute.
    if hours:
        return f"{hours}h {minutes}m"
    if minutes:
        return f"{minutes}m {secs}s"
    return f"{secs}s"


def progress_message(*, done: int, total: int, elapsed_seconds: float) -> str:
    """One-line progress summary for block-wise simulation logs."""
    progress = done / total if total else 1.0
    text = f"{done}/{total} blocks ({progress:.0%})"
    if done < total:
        eta = format_eta(
            estimate_remaining_seconds(elapsed_seconds=elapsed_seconds, progress=progress)
        )
        if eta:
            text += f", eta {eta}"
    return text
