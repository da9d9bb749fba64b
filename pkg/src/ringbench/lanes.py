"""Fork-join helper for short-lived lane parallelism."""

from __future__ import annotations

import threading
from typing import Callable, Sequence


def run_lanes(tasks: Sequence[Callable[[], None]]) -> None:
    """Run tasks concurrently, one thread per lane, and join them all.

    If lanes fail, the error from the lowest lane index is raised after
    every lane has finished.
    """
    if not tasks:
        return
    if len(tasks) == 1:
        tasks[0]()
        return
    errors: list[tuple[int, BaseException]] = []
    lock = threading.Lock()

    def runner(i: int, task: Callable[[], None]) -> None:
        try:
            task()
        except BaseException as exc:  # noqa: BLE001 - propagated to the caller below
            with lock:
                errors.append((i, exc))

    threads = [
        threading.Thread(target=runner, args=(i, t), daemon=True)
        for i, t in enumerate(tasks)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        errors.sort(key=lambda e: e[0])
        raise errors[0][1]
