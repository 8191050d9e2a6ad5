"""Reusable numpy buffer pool for the Monte Carlo hot path.

Large temporaries are the dominant cost on hosts where page faults are
expensive (VM sandboxes, memory-bandwidth-bound machines): allocating a
fresh multi-megabyte array per ufunc call faults in every page on first
touch.  A Workspace hands out named buffers that keep their pages alive
across chunks, so steady-state chunk processing performs no large
allocations at all.

Workspaces are not thread-safe and are never shared across threads: the
parallel driver is process-based, and each worker process owns one
process-local workspace.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Workspace", "process_workspace"]


class Workspace:
    """Named buffer pool; a buffer is reallocated only when its shape grows
    or changes."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def buf(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        arr = self._arrays.get(name)
        if arr is None or arr.shape != shape:
            arr = np.empty(shape, dtype=np.float64)
            self._arrays[name] = arr
        return arr


_PROCESS_WORKSPACE: Workspace | None = None


def process_workspace() -> Workspace:
    """The per-process workspace used by chunk tasks.

    Chunk tasks run strictly sequentially inside one process (the driver
    parallelizes across processes, never threads), so sharing one pool per
    process is safe and gives steady-state reuse.
    """
    global _PROCESS_WORKSPACE
    if _PROCESS_WORKSPACE is None:
        _PROCESS_WORKSPACE = Workspace()
    return _PROCESS_WORKSPACE
