"""
Single-threaded discrete-event scheduler driving every simulated node.
"""
import heapq
import logging
from typing import Callable, List, Optional

from ..constants import API_NAME
from ..misc import object_repr

__all__ = ['Handle', 'Scheduler']

logger = logging.getLogger(API_NAME)


class Handle:
    __slots__ = ('time', 'seq', 'callback', 'args', 'cancelled')

    def __init__(self, time: int, seq: int, callback: Callable, args: tuple):
        self.time = time
        self.seq = seq
        self.callback = callback
        self.args = args
        self.cancelled = False

    def __repr__(self):
        return object_repr(self)

    def cancel(self):
        self.cancelled = True

    def __lt__(self, other: 'Handle') -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


class Scheduler:
    def __init__(self, max_steps: int = 5_000_000):
        self.now = 0
        self.steps = 0
        self.errors = 0
        self.max_steps = max_steps
        self._queue: List[Handle] = []
        self._seq = 0

    def __repr__(self):
        return f'Scheduler(now={self.now}, pending={len(self._queue)})'

    def __len__(self):
        return len(self._queue)

    def call_at(self, time: int, callback: Callable, *args) -> Handle:
        self._seq += 1
        handle = Handle(max(time, self.now), self._seq, callback, args)
        heapq.heappush(self._queue, handle)
        return handle

    def call_later(self, delay_ms: int, callback: Callable, *args) -> Handle:
        return self.call_at(self.now + max(int(delay_ms), 0), callback, *args)

    def step(self) -> bool:
        while self._queue:
            handle = heapq.heappop(self._queue)
            if handle.cancelled:
                continue
            self.now = handle.time
            self.steps += 1
            try:
                handle.callback(*handle.args)
            except Exception as e:
                self.errors += 1
                logger.error(f'Simulated event {handle.callback!r} failed: '
                             f'{e}', exc_info=True)
            return True
        return False

    def _next_time(self) -> Optional[int]:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time if self._queue else None

    def run_until(self, condition: Optional[Callable[[], bool]] = None,
                  until_time: Optional[int] = None) -> bool:
        """
        Steps until ``condition()`` holds, the clock would pass
        ``until_time`` or nothing is left; returns the condition's value.
        """
        budget = self.max_steps
        while condition is None or not condition():
            upcoming = self._next_time()
            if upcoming is None:
                break
            if until_time is not None and upcoming > until_time:
                break
            if budget <= 0:
                logger.warning(f'Simulation stopped after {self.max_steps} '
                               f'events at t={self.now}')
                break
            self.step()
            budget -= 1
        if until_time is not None and self.now < until_time and (
                condition is None or not condition()):
            self.now = until_time
        return condition() if condition is not None else True

    def run_for(self, duration_ms: int):
        self.run_until(until_time=self.now + duration_ms)
