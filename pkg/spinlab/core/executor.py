"""Worker pool for block-parallel numerical work."""

from __future__ import annotations

from collections.abc import Callable, Iterable
from typing import TypeVar

import structlog
from joblib import Parallel, delayed

from spinlab.config import get_settings

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class BlockExecutor:
    """Ordered map over independent work items.

    Results always come back in input order, so any reduction the caller
    performs over them is independent of the worker count.
    """

    def __init__(self, max_workers: int | None = None):
        """Initialize block executor.

        Args:
            max_workers: Maximum number of worker threads
        """
        self.max_workers = max(1, max_workers or get_settings().threads)

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item and return results in item order."""
        work = list(items)
        if self.max_workers == 1 or len(work) <= 1:
            return [fn(item) for item in work]
        # numpy kernels release the GIL, so threads are enough and nothing
        # has to be pickled.
        return list(
            Parallel(n_jobs=min(self.max_workers, len(work)), backend="threading")(
                delayed(fn)(item) for item in work
            )
        )


# Global executor instance
_executor: BlockExecutor | None = None


def get_executor() -> BlockExecutor:
    """Get or create executor instance."""
    global _executor
    if _executor is None:
        _executor = BlockExecutor()
    return _executor


def configure_executor(threads: int | None) -> BlockExecutor:
    """Replace the global executor with one sized to ``threads``."""
    global _executor
    _executor = BlockExecutor(max_workers=threads)
    logger.debug("executor_configured", max_workers=_executor.max_workers)
    return _executor
