import random

import pytest

from src.ar.message import Action
from src.ar.profile import Profile
from src.errors import ConfigError, EvalError, ParseError
from src.rules import (
    ActionDispatcher,
    DataTuple,
    Rule,
    RuleEngine,
    conflict_set,
    evaluate_cycle,
    parse_condition,
    parse_rules,
)
from src.rules import And, Compare, Const, FieldRef

TRIGGER = ActionDispatcher.post(Action.START_FUNCTION,
                                Profile.of('post_processing_func'))


def test_listing_condition_parses_to_comparison():
    node = parse_condition('IF(RESULT >= 10)')
    assert node == Compare('>=', FieldRef('RESULT'), Const(10))


def test_constant_true():
    assert parse_condition('IF(true)') == Const(True)
    assert parse_condition('if (TRUE)').evaluate({}) is True


def test_conjunction_with_string():
    node = parse_condition('IF(RESULT >= 10 AND QUALITY == "low")')
    assert isinstance(node, And)
    assert node.evaluate({'RESULT': 12, 'QUALITY': 'low'}) is True
    assert node.evaluate({'RESULT': 12, 'QUALITY': 'high'}) is False


def test_precedence_and_negation():
    node = parse_condition('IF(NOT A == 1 OR B < 2 AND C > 3)')
    assert node.evaluate({'A': 1, 'B': 1, 'C': 4}) is True
    assert node.evaluate({'A': 1, 'B': 1, 'C': 0}) is False
    assert node.evaluate({'A': 0, 'B': 9, 'C': 0}) is True
    grouped = parse_condition('IF((A == 1 OR B == 1) AND NOT (C == 1))')
    assert grouped.evaluate({'A': 1, 'B': 0, 'C': 0}) is True
    assert grouped.evaluate({'A': 1, 'B': 0, 'C': 1}) is False


@pytest.mark.parametrize('text, position', [
    ('RESULT >= 10', 0),
    ('IF(RESULT >= )', 13),
    ('IF(RESULT >= 10', 15),
    ('IF(RESULT # 10)', 10),
])
def test_syntax_errors_carry_position(text, position):
    with pytest.raises(ParseError) as info:
        parse_condition(text)
    assert info.value.position == position


def test_type_mismatch_is_eval_error():
    node = parse_condition('IF(RESULT >= 10)')
    with pytest.raises(EvalError):
        node.evaluate({'RESULT': 'ten'})
    with pytest.raises(EvalError):
        node.evaluate({})
    with pytest.raises(EvalError):
        parse_condition('IF(FLAG < true)').evaluate({'FLAG': False})


def test_listing_rule_fires_on_result_at_least_ten():
    posted = []
    engine = RuleEngine([Rule('trigger', 'IF(RESULT >= 10)', TRIGGER, 0)],
                        post=posted.append)
    assert engine.evaluate(DataTuple({'RESULT': 12})).name == 'trigger'
    assert engine.evaluate(DataTuple({'RESULT': 9})) is None
    assert engine.evaluate(DataTuple({'RESULT': 10})) is not None
    assert len(posted) == 2
    assert posted[0].action is Action.START_FUNCTION
    assert str(posted[0].profile) == 'post_processing_func'


def test_only_highest_priority_fires():
    calls = []
    engine = RuleEngine([
        Rule('second', 'IF(X > 0)', ActionDispatcher.local('b'), 1),
        Rule('first', 'IF(X > 0)', ActionDispatcher.local('a'), 0),
    ])
    engine.on('a', lambda rule, item: calls.append('a'))
    engine.on('b', lambda rule, item: calls.append('b'))
    assert engine.evaluate(DataTuple({'X': 1})).name == 'first'
    assert calls == ['a']


def test_ties_go_to_declaration_order():
    rules = [Rule(f'r{i}', 'IF(X > 0)', ActionDispatcher.local('c'), 2)
             for i in range(3)]
    assert evaluate_cycle(rules, DataTuple({'X': 5})).name == 'r0'


def test_dispatch_failure_still_counts_as_fired():
    engine = RuleEngine([Rule('r', 'IF(true)', ActionDispatcher.local('x'))])
    assert engine.evaluate(DataTuple({})) is not None
    assert engine.stats['fired'] == 1
    assert engine.stats['dispatch_errors'] == 1


def test_elapsed_time_rule_composes_with_content_rule():
    rules = [
        Rule('late', 'IF(ELAPSED_MS > 500)', ActionDispatcher.local('l'), 0),
        Rule('content', 'IF(RESULT >= 10)', ActionDispatcher.local('c'), 1),
    ]
    fresh = DataTuple({'RESULT': 20}, ingested_at=1000)
    assert evaluate_cycle(rules, fresh, now_ms=1100).name == 'content'
    assert evaluate_cycle(rules, fresh, now_ms=1600).name == 'late'
    quiet = DataTuple({'RESULT': 1}, ingested_at=0)
    assert evaluate_cycle(rules, quiet, now_ms=10) is None


FIELDS = ['A', 'B', 'C']
OPS = ['<', '<=', '>', '>=', '==', '!=']


def random_condition(rng):
    leaves = [f'{rng.choice(FIELDS)} {rng.choice(OPS)} {rng.randint(0, 4)}'
              for _ in range(rng.randint(1, 3))]
    joiner = rng.choice([' AND ', ' OR '])
    text = joiner.join(leaves)
    if rng.random() < 0.3:
        text = f'NOT ({text})'
    return f'IF({text})'


def brute_force(condition, values):
    expr = condition[3:-1]
    expr = expr.replace('AND', 'and').replace('OR', 'or')
    expr = expr.replace('NOT', 'not')
    return eval(expr, {}, dict(values))


def test_single_fire_matches_brute_force_oracle():
    rng = random.Random(3)
    for _ in range(10000):
        rules = [Rule(f'r{i}', random_condition(rng),
                      ActionDispatcher.local('x'), rng.randint(0, 3))
                 for i in range(rng.randint(1, 5))]
        values = {f: rng.randint(0, 4) for f in FIELDS}
        expected = [r for r in rules if brute_force(r.condition, values)]
        assert conflict_set(rules, values) == expected
        fired = evaluate_cycle(rules, DataTuple(values))
        if not expected:
            assert fired is None
        else:
            best = min(r.priority for r in expected)
            assert fired is [r for r in expected if r.priority == best][0]


def test_rule_file_stanzas():
    rules = parse_rules(
        '# trigger post-processing\n'
        'name: trigger\n'
        'priority: 0\n'
        'when: IF(RESULT >= 10)\n'
        'then: post start-function post_processing_func\n'
        '\n'
        'priority: 3\n'
        'when: IF(RESULT < 0)\n'
        'then: callback alarm\n'
    )
    assert [r.name for r in rules] == ['trigger', 'rule-2']
    assert rules[0].consequence.action is Action.START_FUNCTION
    assert rules[1].consequence.callback == 'alarm'


def test_rule_file_errors():
    with pytest.raises(ConfigError):
        parse_rules('when: IF(RESULT >=)\nthen: callback x\n')
    with pytest.raises(ConfigError):
        parse_rules('when: IF(true)\n')
    with pytest.raises(ConfigError):
        parse_rules('when: IF(true)\nthen: post explode thing\n')


def test_tuple_from_json():
    item = DataTuple.from_json(b'{"RESULT": 12, "nested": {"a": 1}}')
    assert item.fields == {'RESULT': 12}
    assert DataTuple.from_json(b'[1, 2]') is None
    assert DataTuple.from_json(b'\xff') is None


def test_long_runs_keep_engine_state_constant():
    engine = RuleEngine([Rule('trigger', 'IF(RESULT >= 10)', TRIGGER, 0)],
                        post=lambda m: None)
    engine.evaluate(DataTuple({'RESULT': 12}))
    sizes = {k: len(v) for k, v in vars(engine).items()
             if isinstance(v, (list, dict))}
    for i in range(5000):
        engine.evaluate(DataTuple({'RESULT': i % 20}))
    assert engine.stats['fired'] == 1 + 5000 // 2
    assert {k: len(v) for k, v in vars(engine).items()
            if isinstance(v, (list, dict))} == sizes
