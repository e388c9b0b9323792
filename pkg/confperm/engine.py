"""Executes independent permutation iterations with a bounded redraw loop."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ConfpermError, IterationError, UndefinedMetricError
from .shuffle import RngStream

logger = logging.getLogger(__name__)

MAX_REDRAWS = 100

Job = Callable[[RngStream, np.random.Generator], float]


class PermutationRunner:
    """Runs one job per stream and returns the results in stream order.

    Each iteration owns its generator, so results do not depend on the
    number of threads. A job raising ``UndefinedMetricError`` (e.g. a
    single-class test response) is redrawn from the same generator.
    """

    def __init__(self, threads: int = 1, max_redraws: int = MAX_REDRAWS):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        self.max_redraws = max_redraws

    def _iterate(self, job: Job, stream: RngStream) -> float:
        gen = stream.generator()
        last_error: Exception | None = None
        for attempt in range(self.max_redraws + 1):
            try:
                value = float(job(stream, gen))
            except UndefinedMetricError as e:
                last_error = e
                logger.debug("Iteration %s redraw %d: %s", stream.stream_index, attempt + 1, e)
                continue
            except IterationError:
                raise
            except ConfpermError as e:
                raise IterationError(
                    f"Iteration {stream.stream_index} failed: {e.message}", index=stream.stream_index
                ) from e
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
                raise IterationError(
                    f"Iteration {stream.stream_index} failed: {e}", index=stream.stream_index
                ) from e
            if not np.isfinite(value):
                raise IterationError(
                    f"Iteration {stream.stream_index} produced a non-finite value", index=stream.stream_index
                )
            return value

        raise IterationError(
            f"Iteration {stream.stream_index} still undefined after {self.max_redraws} redraws: {last_error}",
            index=stream.stream_index,
        )

    def run(self, job: Job, streams: Sequence[RngStream]) -> np.ndarray:
        if self.threads == 1 or len(streams) < 2:
            values = [self._iterate(job, s) for s in streams]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                values = list(pool.map(lambda s: self._iterate(job, s), streams))
        return np.asarray(values, dtype=float)


def streams_for(seed: int, b: int) -> list[RngStream]:
    return [RngStream(seed, i) for i in range(b)]
