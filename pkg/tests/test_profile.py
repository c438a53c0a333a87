import os
import random

import pytest

from src.ar.message import Action, ARMessage, FunctionRef
from src.ar.profile import Profile, Term, TermKind, matches
from src.errors import InvalidKeyword, ProtocolError
from src.overlay.geo import GeoPoint
from src.wire import Tag


def test_term_kinds():
    assert Term.parse('drone').kind is TermKind.ATTRIBUTE
    assert Term.parse('type:drone').kind is TermKind.EXACT
    assert Term.parse('type:dro*').kind is TermKind.PARTIAL
    assert Term.parse('type:*').kind is TermKind.WILDCARD
    assert Term.parse('*').kind is TermKind.WILDCARD
    assert Term.parse('temp:10..20').kind is TermKind.RANGE


def test_numbers_are_padded_for_ordering():
    term = Term.parse('temp:5..20')
    assert (term.value, term.upper) == ('00000005', '00000020')
    assert str(term) == 'temp:00000005..00000020'


@pytest.mark.parametrize('text', [
    'type:', ':x', 'a:b*c', 'temp:9..1', 'temp:1..2..3', 'bad char',
    'type:x..y*',
])
def test_bad_terms(text):
    with pytest.raises(InvalidKeyword):
        Term.parse(text)


def test_parse_and_text_agree():
    profile = Profile.parse('Drone, lidar,type:cam*,temp:1..9')
    assert str(profile) == 'drone,lidar,type:cam*,temp:00000001..00000009'
    assert Profile.parse(str(profile)) == profile
    assert Profile.parse('') == Profile()


def test_exact_partial_wildcard_and_range_matching():
    stored = Profile.parse('sensor:temperature,building:b12,reading:00000042')
    assert matches(stored, Profile.parse('sensor:temperature'))
    assert matches(stored, Profile.parse('sensor:temp*'))
    assert matches(stored, Profile.parse('building:*,sensor:*'))
    assert matches(stored, Profile.parse('reading:10..50'))
    assert matches(stored, Profile.parse('sensor'))
    assert not matches(stored, Profile.parse('reading:50..90'))
    assert not matches(stored, Profile.parse('sensor:humidity'))
    assert not matches(stored, Profile.parse('camera'))


def test_matching_is_symmetric_for_wildcards():
    producer = Profile.parse('drone,lidar')
    consumer = Profile.parse('drone,*')
    assert matches(producer, consumer)
    assert matches(consumer, producer)


def test_attribute_only_producer_satisfies_any_value():
    producer = Profile.parse('drone,lidar')
    assert matches(producer, Profile.parse('drone:xyz'))
    assert matches(producer, Profile.parse('drone:*,lidar:l*'))
    assert matches(Profile.parse('drone:xyz'), Profile.parse('drone'))
    assert not matches(producer, Profile.parse('radar:xyz'))
    assert not matches(Profile.parse('drone:xyz'),
                       Profile.parse('drone:abc'))


def test_location_terms_select_producers():
    msg = ARMessage(Profile.parse('drone,lidar'), Action.NOTIFY_INTEREST,
                    location=GeoPoint(40.0583, -74.4056))
    extended = msg.matching_profile
    assert str(extended) == 'drone,lidar,lat:40.0583,long:-74.4056'
    assert matches(extended, Profile.parse('drone,lat:40*,long:-74*'))
    assert not matches(extended, Profile.parse('drone,lat:41*'))
    assert extended.without_location() == Profile.parse('drone,lidar')
    partial = Profile.parse('drone,lat:40*')
    assert partial.without_location() == partial


def _oracle(stored: Profile, query: Profile) -> bool:
    def words(term):
        head = f'{term.attribute}:' if term.attribute else ''
        out = set()
        for word in VOCABULARY:
            if term.kind is TermKind.ATTRIBUTE:
                if word == term.attribute or \
                        word.startswith(term.attribute + ':'):
                    out.add(word)
            elif term.kind is TermKind.EXACT:
                if word == head + term.value:
                    out.add(word)
            elif term.kind is TermKind.PARTIAL:
                if word.startswith(head + term.value):
                    out.add(word)
            elif term.kind is TermKind.WILDCARD:
                if word.startswith(head):
                    out.add(word)
            elif head + term.value <= word <= head + term.upper:
                out.add(word)
        return out
    return all(any(words(s) & words(q) for s in stored) for q in query)


ATTRS = ['a', 'b', 'ab']
VALUES = ['x', 'xy', 'xz', 'y'] + [f'{i:08d}' for i in range(1, 10)]
VOCABULARY = sorted(
    {a for a in ATTRS}
    | {f'{a}:{v}' for a in ATTRS for v in VALUES}
    | {f'{a}:{v[:1]}' for a in ATTRS for v in VALUES}
    | set(VALUES)
)


def _random_term(rng: random.Random) -> str:
    attr = rng.choice(ATTRS)
    kind = rng.randrange(6)
    if kind == 0:
        return attr
    if kind == 1:
        return f'{attr}:{rng.choice(VALUES)}'
    if kind == 2:
        return f'{attr}:{rng.choice(VALUES)[:1]}*'
    if kind == 3:
        return f'{attr}:*'
    if kind == 4:
        lo, hi = sorted(rng.sample(range(1, 10), 2))
        return f'{attr}:{lo}..{hi}'
    return rng.choice(VALUES)


def check_matching_oracle(pairs, seed):
    rng = random.Random(seed)
    for _ in range(pairs):
        stored = Profile.parse(','.join(_random_term(rng)
                                        for _ in range(rng.randint(1, 3))))
        query = Profile.parse(','.join(_random_term(rng)
                                       for _ in range(rng.randint(1, 3))))
        assert matches(stored, query) == _oracle(stored, query), \
            (str(stored), str(query))


def test_matching_agrees_with_enumerated_oracle():
    check_matching_oracle(3000, seed=5)


@pytest.mark.skipif(not os.getenv('RPMESH_BENCH'),
                    reason='set RPMESH_BENCH to run the full-size oracle')
def test_matching_agrees_with_oracle_on_many_pairs():
    check_matching_oracle(10 ** 5, seed=6)


def test_function_ref_digest_is_checked():
    ref = FunctionRef('post_processing_func', b'{"argv": ["true"]}',
                      'subprocess')
    assert FunctionRef.from_bytes(ref.to_bytes()) == ref
    fields = ref.to_fields()
    fields.fields[Tag.BLOB] = [b'tampered']
    with pytest.raises(ProtocolError):
        FunctionRef.from_fields(fields)


def test_message_bytes_keep_every_field():
    msg = ARMessage(Profile.parse('drone,lidar'), Action.STORE_FUNCTION,
                    data=b'\x00\x01', credentials=b'token',
                    location=GeoPoint(1.5, -2.5),
                    topology=FunctionRef('f', b'body'), msg_id=77)
    assert ARMessage.from_bytes(msg.to_bytes()) == msg


def test_action_labels():
    assert Action.parse('notify-interest') is Action.NOTIFY_INTEREST
    assert Action.START_FUNCTION.label == 'start-function'
    assert Action.STORE_FUNCTION.on_functions
    with pytest.raises(ValueError):
        Action.parse('explode')
