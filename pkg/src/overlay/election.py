"""
Hirschberg-Sinclair leader election over a logical ring of node ids.

Candidates probe 2^round hops in both directions; a probe for a smaller id
is swallowed, a probe reaching its hop limit is answered with a reply, and a
probe that travels all the way back to its sender wins. The largest live
id always wins.
"""
import logging
from typing import Callable, Iterable, List, Set

from ..constants import API_NAME
from ..misc import short_id

__all__ = ['CLOCKWISE', 'COUNTERCLOCKWISE', 'HirschbergSinclair']

CLOCKWISE = 0
COUNTERCLOCKWISE = 1

logger = logging.getLogger(API_NAME)

# (kind, neighbor id, candidate, round, hops, direction, failed ids)
SendFn = Callable[[str, int, int, int, int, int, List[int]], None]


class HirschbergSinclair:
    def __init__(self, own_id: int, ring_ids: Iterable[int], send: SendFn,
                 on_won: Callable[[], None], failed: Iterable[int] = ()):
        self.own_id = own_id
        self.failed: Set[int] = set(failed) - {own_id}
        self._members = set(ring_ids) | {own_id}
        self._send = send
        self._on_won = on_won
        self.started = False
        self.finished = False
        self.round = 0
        self._replies = 0
        self.messages = 0

    @property
    def ring(self) -> List[int]:
        return sorted(self._members - self.failed)

    def neighbor(self, direction: int) -> int:
        ring = self.ring
        pos = ring.index(self.own_id)
        step = 1 if direction == CLOCKWISE else -1
        return ring[(pos + step) % len(ring)]

    def _emit(self, kind: str, direction: int, candidate: int, round_: int,
              hops: int):
        self.messages += 1
        self._send(kind, self.neighbor(direction), candidate, round_, hops,
                   direction, sorted(self.failed))

    def _probe(self):
        for direction in (CLOCKWISE, COUNTERCLOCKWISE):
            self._emit('probe', direction, self.own_id, self.round, 1)

    def start(self):
        if self.started or self.finished:
            return
        self.started = True
        logger.info(f'Election started by {short_id(self.own_id)}, '
                    f'ring of {len(self.ring)}')
        if len(self.ring) == 1:
            self._win()
            return
        self._probe()

    def _win(self):
        if not self.finished:
            self.finished = True
            self._on_won()

    def _merge_failed(self, failed: Iterable[int]):
        self.failed.update(f for f in failed if f != self.own_id)

    def on_probe(self, candidate: int, round_: int, hops: int,
                 direction: int, failed: Iterable[int] = ()):
        if self.finished:
            return
        self._merge_failed(failed)
        self.start()
        if self.finished:
            return
        if candidate == self.own_id:
            self._win()
        elif candidate > self.own_id:
            if hops < 2 ** round_:
                self._emit('probe', direction, candidate, round_, hops + 1)
            else:
                self._emit('reply', 1 - direction, candidate, round_, hops)

    def on_reply(self, candidate: int, round_: int, direction: int,
                 failed: Iterable[int] = ()):
        if self.finished:
            return
        self._merge_failed(failed)
        if candidate != self.own_id:
            self._emit('reply', direction, candidate, round_, 0)
            return
        if round_ != self.round:
            return
        self._replies += 1
        if self._replies >= 2:
            self.round += 1
            self._replies = 0
            self._probe()

    def finish(self):
        """Someone else won."""
        self.finished = True
