import hashlib
from typing import Any, Dict, Iterable, List, Sequence

__all__ = [
    'digest160',
    'format_table',
    'object_collect_fields',
    'object_repr',
    'short_id',
]


def object_collect_fields(obj: object) -> Dict[str, Any]:
    _cls = obj.__class__

    # __slots__ of class
    if hasattr(_cls, '__slots__'):
        attrs = _cls.__slots__
        if isinstance(attrs, str):
            attrs = (attrs,)
    # public part of __dict__ of object
    elif hasattr(obj, '__dict__') and obj.__dict__:
        attrs = [a for a in obj.__dict__ if not a.startswith('_')]
    else:
        attrs = (attr for attr in obj.__dir__() if not attr.startswith('_'))

    return {attr: getattr(obj, attr, '<missing>') for attr in attrs}


def object_repr(obj: object) -> str:
    fields = [f'{k}={v!r}' for k, v in object_collect_fields(obj).items()]
    return f'{obj.__class__.__name__}({", ".join(fields)})'


def digest160(*parts: bytes) -> int:
    """160-bit identifier as the SHA-1 digest of the given parts."""
    h = hashlib.sha1()
    for part in parts:
        h.update(len(part).to_bytes(4, 'big'))
        h.update(part)
    return int.from_bytes(h.digest(), 'big')


def short_id(node_id: int) -> str:
    return f'{node_id:040x}'[:8]


def format_table(rows: Iterable[Dict[str, Any]],
                 columns: Sequence[str] = ()) -> str:
    """Renders dictionaries as a fixed-width text table."""
    rows = list(rows)
    if not rows:
        return '(empty)'
    columns = list(columns) or list(rows[0].keys())
    cells: List[List[str]] = [[str(row.get(c, '')) for c in columns]
                              for row in rows]
    widths = [
        max(len(columns[i]), *(len(r[i]) for r in cells))
        for i in range(len(columns))
    ]
    header = '  '.join(c.upper().ljust(w) for c, w in zip(columns, widths))
    lines = [header, '  '.join('-' * w for w in widths)]
    for r in cells:
        lines.append('  '.join(v.ljust(w) for v, w in zip(r, widths)))
    return '\n'.join(lines)
