"""
Content-driven IF-THEN rules over data tuples.

Condition grammar::

    condition  := IF '(' expr ')'
    expr       := conj (OR conj)*
    conj       := neg (AND neg)*
    neg        := NOT neg | atom
    atom       := '(' expr ')' | operand [op operand]
    operand    := FIELD | number | "string" | true | false
    op         := < | <= | > | >= | == | !=

Each incoming tuple runs one evaluation cycle: the conflict set is every rule
whose condition holds, and only the one with the lowest priority value fires
(declaration order breaks ties). Rules stay active across cycles.
"""
import json
import logging
import operator
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

from .ar.message import Action, ARMessage
from .ar.profile import Profile
from .constants import API_NAME
from .errors import ConfigError, EvalError, InvalidKeyword, ParseError

__all__ = [
    'ActionDispatcher',
    'DataTuple',
    'Rule',
    'RuleEngine',
    'conflict_set',
    'evaluate_cycle',
    'load_rules',
    'parse_condition',
    'parse_rules',
]

logger = logging.getLogger(API_NAME)

Scalar = Union[int, float, str, bool]
ELAPSED_FIELD = 'ELAPSED_MS'


# AST
@dataclass(frozen=True)
class Const:
    value: Scalar

    def evaluate(self, values: Dict[str, Scalar]) -> Scalar:
        return self.value


@dataclass(frozen=True)
class FieldRef:
    name: str

    def evaluate(self, values: Dict[str, Scalar]) -> Scalar:
        try:
            return values[self.name]
        except KeyError:
            raise EvalError(f'field {self.name} is not in the tuple')


_COMPARE = {
    '<': operator.lt,
    '<=': operator.le,
    '>': operator.gt,
    '>=': operator.ge,
    '==': operator.eq,
    '!=': operator.ne,
}


def _kind(value: Scalar) -> str:
    if isinstance(value, bool):
        return 'boolean'
    if isinstance(value, (int, float)):
        return 'number'
    return 'string'


@dataclass(frozen=True)
class Compare:
    op: str
    left: Any
    right: Any

    def evaluate(self, values: Dict[str, Scalar]) -> bool:
        left = self.left.evaluate(values)
        right = self.right.evaluate(values)
        if _kind(left) != _kind(right):
            raise EvalError(
                f'cannot compare {_kind(left)} {left!r} with '
                f'{_kind(right)} {right!r}'
            )
        if _kind(left) == 'boolean' and self.op not in ('==', '!='):
            raise EvalError('booleans only support == and !=')
        return _COMPARE[self.op](left, right)


@dataclass(frozen=True)
class And:
    items: tuple

    def evaluate(self, values: Dict[str, Scalar]) -> bool:
        return all(_truth(item, values) for item in self.items)


@dataclass(frozen=True)
class Or:
    items: tuple

    def evaluate(self, values: Dict[str, Scalar]) -> bool:
        return any(_truth(item, values) for item in self.items)


@dataclass(frozen=True)
class Not:
    item: Any

    def evaluate(self, values: Dict[str, Scalar]) -> bool:
        return not _truth(self.item, values)


def _truth(node, values: Dict[str, Scalar]) -> bool:
    value = node.evaluate(values)
    if not isinstance(value, bool):
        raise EvalError(f'{value!r} is not a boolean')
    return value


# parser
_TOKEN = re.compile(r'''
    (?P<space>\s+)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<op><=|>=|==|!=|<|>)
  | (?P<paren>[()])
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
''', re.VERBOSE)
_KEYWORDS = {'if', 'and', 'or', 'not', 'true', 'false'}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ParseError(f'unexpected character {text[pos]!r}', pos)
        kind = match.lastgroup
        if kind != 'space':
            word = match.group()
            if kind == 'name' and word.lower() in _KEYWORDS:
                kind = word.lower()
            tokens.append(_Token(kind, word, pos))
        pos = match.end()
    tokens.append(_Token('end', '', len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def take(self, kind: str, text: Optional[str] = None) -> _Token:
        token = self.current
        if token.kind != kind or (text is not None and token.text != text):
            expected = text or kind
            found = token.text or 'end of input'
            raise ParseError(f'expected {expected}, found {found!r}',
                             token.position)
        self.index += 1
        return token

    def accept(self, kind: str) -> bool:
        if self.current.kind == kind:
            self.index += 1
            return True
        return False

    def condition(self):
        self.take('if')
        self.take('paren', '(')
        node = self.expr()
        self.take('paren', ')')
        self.take('end')
        return node

    def expr(self):
        items = [self.conj()]
        while self.accept('or'):
            items.append(self.conj())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conj(self):
        items = [self.neg()]
        while self.accept('and'):
            items.append(self.neg())
        return items[0] if len(items) == 1 else And(tuple(items))

    def neg(self):
        if self.accept('not'):
            return Not(self.neg())
        return self.atom()

    def atom(self):
        if self.current.kind == 'paren' and self.current.text == '(':
            self.index += 1
            node = self.expr()
            self.take('paren', ')')
            return node
        left = self.operand()
        if self.current.kind == 'op':
            op = self.take('op').text
            return Compare(op, left, self.operand())
        return left

    def operand(self):
        token = self.current
        self.index += 1
        if token.kind == 'number':
            number = float(token.text) if '.' in token.text \
                else int(token.text)
            return Const(number)
        if token.kind == 'string':
            return Const(_unquote(token.text))
        if token.kind in ('true', 'false'):
            return Const(token.kind == 'true')
        if token.kind == 'name':
            return FieldRef(token.text)
        self.index -= 1
        raise ParseError(
            f'expected a value, found {token.text or "end of input"!r}',
            token.position,
        )


def _unquote(text: str) -> str:
    return re.sub(r'\\(.)', r'\1', text[1:-1])


def parse_condition(text: str):
    """Parses ``IF( expr )`` into an evaluable tree."""
    return _Parser(text).condition()


# tuples and rules
class DataTuple:
    def __init__(self, fields: Dict[str, Scalar],
                 ingested_at: Optional[int] = None):
        for name, value in fields.items():
            if not name:
                raise ValueError('field names must not be empty')
            if not isinstance(value, (int, float, str, bool)):
                raise ValueError(f'field {name} is not a scalar')
        self.fields = dict(fields)
        self.ingested_at = ingested_at

    def __repr__(self):
        return f'DataTuple({self.fields})'

    @classmethod
    def from_json(cls, raw: Union[bytes, str],
                  ingested_at: Optional[int] = None) -> Optional['DataTuple']:
        """A tuple from a JSON object's scalar members, else ``None``."""
        try:
            value = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            return None
        if not isinstance(value, dict):
            return None
        scalars = {k: v for k, v in value.items()
                   if k and isinstance(v, (int, float, str, bool))}
        return cls(scalars, ingested_at)

    def values(self, now_ms: Optional[int] = None) -> Dict[str, Scalar]:
        values = dict(self.fields)
        if self.ingested_at is not None and ELAPSED_FIELD not in values:
            now = int(time.time() * 1000) if now_ms is None else now_ms
            values[ELAPSED_FIELD] = now - self.ingested_at
        return values


@dataclass(frozen=True)
class ActionDispatcher:
    """Consequence of a rule: post a message or call a registered hook."""
    kind: str
    action: Optional[Action] = None
    profile: Optional[Profile] = None
    data: bytes = b''
    callback: Optional[str] = None

    @classmethod
    def post(cls, action: Action, profile: Profile,
             data: bytes = b'') -> 'ActionDispatcher':
        return cls('post', action=action, profile=profile, data=data)

    @classmethod
    def local(cls, callback: str) -> 'ActionDispatcher':
        return cls('callback', callback=callback)

    def message(self) -> ARMessage:
        return ARMessage(self.profile, self.action, self.data)

    def __str__(self):
        if self.kind == 'post':
            return f'post {self.action.label} {self.profile}'
        return f'callback {self.callback}'


@dataclass
class Rule:
    name: str
    condition: str
    consequence: ActionDispatcher
    priority: int = 0
    when: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError('priority must be >= 0')
        if self.when is None:
            self.when = parse_condition(self.condition)

    def holds(self, values: Dict[str, Scalar]) -> bool:
        return _truth(self.when, values)


def conflict_set(rules: Iterable[Rule], values: Dict[str, Scalar],
                 errors: Optional[list] = None) -> List[Rule]:
    """Rules whose condition holds; evaluation errors count as false."""
    out = []
    for rule in rules:
        try:
            if rule.holds(values):
                out.append(rule)
        except EvalError as e:
            if errors is not None:
                errors.append((rule, e))
    return out


def evaluate_cycle(rules: List[Rule], item: DataTuple,
                   now_ms: Optional[int] = None) -> Optional[Rule]:
    """The single rule a tuple fires, if any."""
    return _select(rules, conflict_set(rules, item.values(now_ms)))


def _select(rules: List[Rule], satisfied: List[Rule]) -> Optional[Rule]:
    if not satisfied:
        return None
    order = {id(rule): i for i, rule in enumerate(rules)}
    return min(satisfied, key=lambda r: (r.priority, order[id(r)]))


# rule files
_THEN = re.compile(
    r'^(post)\s+(\S+)\s+(\S+)(?:\s+(.*))?$|^(callback)\s+(\S+)$'
)


def _consequence(text: str, where: str) -> ActionDispatcher:
    match = _THEN.match(text.strip())
    if match is None:
        raise ConfigError(f'{where}: then must be "post <action> <profile>" '
                          f'or "callback <id>"')
    if match.group(5):
        return ActionDispatcher.local(match.group(6))
    try:
        action = Action.parse(match.group(2))
        profile = Profile.parse(match.group(3))
    except (ValueError, InvalidKeyword) as e:
        raise ConfigError(f'{where}: {e}')
    data = (match.group(4) or '').encode()
    return ActionDispatcher.post(action, profile, data)


def parse_rules(text: str, source: str = '<rules>') -> List[Rule]:
    """
    Stanzas separated by blank lines, each with ``priority:``, ``when:``,
    ``then:`` and an optional ``name:``. Lines starting with ``#`` are
    comments.
    """
    rules: List[Rule] = []
    stanza: Dict[str, str] = {}
    start = 0

    def close():
        if not stanza:
            return
        where = f'{source}:{start}'
        missing = {'when', 'then'} - set(stanza)
        if missing:
            raise ConfigError(f'{where}: missing {", ".join(sorted(missing))}')
        try:
            priority = int(stanza.get('priority', '0'))
            rule = Rule(
                name=stanza.get('name', f'rule-{len(rules) + 1}'),
                condition=stanza['when'],
                consequence=_consequence(stanza['then'], where),
                priority=priority,
            )
        except ParseError as e:
            raise ConfigError(f'{where}: {e}')
        except ValueError as e:
            raise ConfigError(f'{where}: {e}')
        rules.append(rule)
        stanza.clear()

    for number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line.startswith('#'):
            continue
        if not line:
            close()
            continue
        key, sep, value = line.partition(':')
        if not sep or key.strip() not in ('priority', 'when', 'then', 'name'):
            raise ConfigError(f'{source}:{number}: unexpected line {line!r}')
        if not stanza:
            start = number
        stanza[key.strip()] = value.strip()
    close()
    return rules


def load_rules(path: str) -> List[Rule]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f'cannot read rule file {path}: {e}')
    return parse_rules(text, path)


class RuleEngine:
    """
    Evaluates tuples against one rule set and dispatches the fired
    consequence through ``post`` or a registered callback.
    """

    def __init__(self, rules: Iterable[Rule] = (),
                 post: Optional[Callable[[ARMessage], Any]] = None,
                 path: Optional[str] = None):
        self.path = path
        self.rules: List[Rule] = list(rules)
        if path is not None and not self.rules:
            self.rules = load_rules(path)
        self.post = post
        self.callbacks: Dict[str, Callable[[Rule, DataTuple], Any]] = {}
        self.stats = {'cycles': 0, 'fired': 0, 'eval_errors': 0,
                      'dispatch_errors': 0}

    def __repr__(self):
        return f'RuleEngine(rules={len(self.rules)}, path={self.path!r})'

    def register(self, rule: Rule) -> 'RuleEngine':
        self.rules.append(rule)
        return self

    def on(self, callback_id: str, fn: Callable[[Rule, DataTuple], Any]):
        self.callbacks[callback_id] = fn

    def reload(self) -> int:
        if self.path is None:
            return len(self.rules)
        self.rules = load_rules(self.path)
        logger.info(f'Loaded {len(self.rules)} rules from {self.path}')
        return len(self.rules)

    def evaluate(self, item: DataTuple,
                 now_ms: Optional[int] = None) -> Optional[Rule]:
        self.stats['cycles'] += 1
        errors: list = []
        values = item.values(now_ms)
        satisfied = conflict_set(self.rules, values, errors)
        self.stats['eval_errors'] += len(errors)
        for rule, error in errors:
            logger.debug(f'Rule {rule.name} skipped: {error}')
        fired = _select(self.rules, satisfied)
        if fired is None:
            return None
        self.stats['fired'] += 1
        try:
            self._dispatch(fired, item)
        except Exception as e:
            self.stats['dispatch_errors'] += 1
            logger.error(f'Rule {fired.name} fired but dispatch failed: {e}',
                         exc_info=True)
        return fired

    def _dispatch(self, rule: Rule, item: DataTuple):
        consequence = rule.consequence
        if consequence.kind == 'post':
            if self.post is None:
                raise RuntimeError('no post hook attached')
            logger.info(f'Rule {rule.name} fired: {consequence}')
            self.post(consequence.message())
            return
        fn = self.callbacks.get(consequence.callback)
        if fn is None:
            raise RuntimeError(f'no callback {consequence.callback!r}')
        fn(rule, item)
