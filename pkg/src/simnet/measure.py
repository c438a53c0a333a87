"""
Summary statistics over a finished simulation trace.
"""
import csv
import io
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .network import OperationRecord, SimTrace

__all__ = ['METRICS', 'Summary', 'measure']

METRICS = ('hops', 'latency', 'delivered-set', 'cost', 'messages')

# keepalive traffic is background load, not an operation's cost
_BACKGROUND = frozenset({'PING', 'PONG'})


@dataclass
class Summary:
    metric: str
    count: int = 0
    mean: float = 0.0
    median: float = 0.0
    p95: float = 0.0
    maximum: float = 0.0
    total: float = 0.0
    values: List[float] = field(default_factory=list)
    sets: List[List[str]] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def of(cls, metric: str, values: List[float], **extra) -> 'Summary':
        if not values:
            return cls(metric, **extra)
        ordered = sorted(values)
        rank = max(math.ceil(0.95 * len(ordered)) - 1, 0)
        return cls(
            metric, count=len(values), mean=statistics.fmean(values),
            median=statistics.median(values), p95=ordered[rank],
            maximum=ordered[-1], total=sum(values), values=list(values),
            **extra,
        )

    def as_dict(self) -> dict:
        return {
            'metric': self.metric, 'count': self.count, 'mean': self.mean,
            'median': self.median, 'p95': self.p95, 'maximum': self.maximum,
            'total': self.total,
        }

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        if self.counts:
            writer.writerow(('frame', 'count'))
            writer.writerows(sorted(self.counts.items()))
            return buffer.getvalue()
        writer.writerow(('op', 'value'))
        for i, value in enumerate(self.values, 1):
            writer.writerow((i, value))
        return buffer.getvalue()


def _operation_cost(trace: SimTrace, record: OperationRecord) -> int:
    return sum(
        1 for e in trace.events
        if e.event == 'send' and e.frame not in _BACKGROUND
        and record.started <= e.time <= record.finished
    )


def measure(trace: SimTrace, metric: str,
            kind: Optional[str] = None) -> Summary:
    """
    ``hops`` counts ring plus master hops per finished operation,
    ``latency`` its virtual duration, ``delivered-set`` the RPs it reached,
    ``cost`` the non-keepalive frames sent while it ran and ``messages``
    every frame sent, by type.
    """
    if metric not in METRICS:
        raise ValueError(f'unknown metric {metric!r}, expected one of '
                         f'{", ".join(METRICS)}')
    if metric == 'messages':
        counts = Counter(e.frame for e in trace.of('send'))
        return Summary('messages', count=sum(counts.values()),
                       total=float(sum(counts.values())),
                       counts=dict(sorted(counts.items())))
    records = [r for r in trace.operations
               if r.done and not r.error and (kind is None or r.kind == kind)]
    if metric == 'hops':
        return Summary.of(metric, [r.hops + r.master_hops for r in records])
    if metric == 'latency':
        return Summary.of(metric, [r.latency for r in records])
    if metric == 'cost':
        return Summary.of(metric, [_operation_cost(trace, r)
                                   for r in records])
    sets = [sorted(r.targets) for r in records]
    return Summary.of(metric, [len(s) for s in sets], sets=sets)
