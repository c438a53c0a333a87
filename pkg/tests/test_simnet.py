import os
import random

import pytest

from src.ar.message import Action, ARMessage, FunctionRef
from src.ar.profile import Profile
from src.errors import ScenarioError
from src.simnet import (
    METRICS,
    LinkModel,
    SimConfig,
    Simulation,
    measure,
    parse_script,
    run_scenario,
)
from src.simnet.scheduler import Scheduler

SCRIPT = """\
# four nodes, one store, one query
at 0 join a 40.0 -74.0
at 0 join b 40.1 -74.1
at 0 join c 40.2 -74.2
at 0 join d 40.3 -74.3
at 2000 store a drone,lidar first frame
at 2500 query d drone,*
at 3000 checkpoint
"""


@pytest.fixture
def sim(tmp_path):
    simulation = Simulation(SimConfig(seed=3), str(tmp_path))
    yield simulation
    simulation.close()


# scheduler and links

def test_scheduler_orders_by_time_then_insertion():
    scheduler = Scheduler()
    seen = []
    scheduler.call_at(10, seen.append, 'b')
    scheduler.call_at(5, seen.append, 'a')
    scheduler.call_at(10, seen.append, 'c')
    scheduler.call_at(7, seen.append, 'x').cancel()
    assert scheduler.run_until()
    assert seen == ['a', 'b', 'c']
    assert scheduler.now == 10


def test_scheduler_stops_at_deadline_and_survives_errors():
    scheduler = Scheduler()
    scheduler.call_at(5, lambda: 1 / 0)
    scheduler.call_at(50, lambda: None)
    scheduler.run_for(20)
    assert scheduler.now == 20
    assert scheduler.errors == 1
    assert len(scheduler) == 1


def test_link_model_is_validated():
    with pytest.raises(ValueError):
        LinkModel(5, 1)
    with pytest.raises(ValueError):
        LinkModel(loss=1.0)


# scripts

def test_script_steps_are_sorted_and_commented():
    steps = parse_script('at 20 heal  # later\n\nat 10 kill a\nat 10 heal\n')
    assert [(s.time, s.verb) for s in steps] == [
        (10, 'kill'), (10, 'heal'), (20, 'heal'),
    ]
    assert steps[0].node == 'a'
    assert steps[1].node is None


@pytest.mark.parametrize('text', [
    'join a 1 2', 'at x join a 1 2', 'at 1 fly a', 'at 1 join a 1',
    'at 1 post a store',
])
def test_bad_script_lines(text):
    with pytest.raises(ScenarioError):
        parse_script(text)


def test_nodes_must_join_before_use(tmp_path):
    with pytest.raises(ScenarioError):
        run_scenario(SimConfig(), 'at 0 store ghost drone', str(tmp_path))


def test_dead_nodes_cannot_act(tmp_path):
    script = 'at 0 join a 1 1\nat 500 kill a\nat 600 store a drone\n'
    with pytest.raises(ScenarioError, match='dead'):
        run_scenario(SimConfig(settle_ms=0), script, str(tmp_path))


# single node

def test_single_node_stores_and_queries_locally(sim):
    node = sim.join_and_wait('a', 10.0, 20.0)
    assert node.overlay.is_master
    record = sim.store('a', Profile.parse('drone,lidar'), b'frame')
    assert sim.wait(record)
    assert record.error == ''
    assert (record.hops, record.targets) == (0, ['a:7400'])
    query = sim.query('a', Profile.parse('drone,*'))
    assert sim.wait(query)
    assert [e.data for e in query.result] == [b'frame']
    assert sim.check_invariants() == []


def test_function_runs_once_on_single_node(tmp_path):
    calls = []
    sim = Simulation(SimConfig(seed=4), str(tmp_path),
                     callbacks={'f': lambda m: calls.append(m.msg_id)})
    try:
        sim.join_and_wait('a', 0.0, 0.0)
        sim.wait(sim.post('a', ARMessage(Profile.of('f'),
                                         Action.STORE_FUNCTION,
                                         topology=FunctionRef('f'))))
        sim.wait(sim.post('a', ARMessage(Profile.of('f'),
                                         Action.START_FUNCTION)))
        sim.run_for(100)
        assert len(calls) == 1
        log = tmp_path / 'a' / 'executor.log'
        assert log.read_text().count('"started"') == 1
    finally:
        sim.close()


# whole deployments

def test_replicas_match_brute_force(sim):
    for i, name in enumerate('abcde'):
        sim.join_and_wait(name, 40.0 + i / 10, -74.0)
    sim.run_for(1000)
    profile = Profile.parse('drone,lidar')
    record = sim.store('c', profile, b'x')
    assert sim.wait(record)
    assert record.targets == sim.responsible(profile)
    assert len(record.targets) == 3
    query = sim.query('e', Profile.parse('drone,li*'))
    assert sim.wait(query)
    assert [e.data for e in query.result] == [b'x']


def test_scenario_checkpoint_holds(tmp_path):
    result = run_scenario(SimConfig(seed=1), SCRIPT, str(tmp_path))
    assert result.checkpoints == [[]]
    store, query = result.operations
    assert store.kind == 'store' and not store.error
    assert [e.data for e in query.result] == [b'first frame']
    assert sum(1 for s in result.state.values() if s['master']) == 1


def test_same_seed_same_trace(tmp_path):
    first = run_scenario(SimConfig(seed=9), SCRIPT, str(tmp_path / 'one'))
    second = run_scenario(SimConfig(seed=9), SCRIPT, str(tmp_path / 'two'))
    other = run_scenario(SimConfig(seed=10), SCRIPT, str(tmp_path / 'three'))
    assert first.trace.digest() == second.trace.digest()
    assert first.trace.digest() != other.trace.digest()


def test_master_failure_elects_the_largest_survivor(sim):
    for i, name in enumerate('abcd'):
        sim.join_and_wait(name, 10.0 + i, 10.0)
    sim.run_for(1000)
    (master,) = sim.masters()['']
    sim.kill(master)
    sim.run_for(5000)
    (successor,) = sim.masters()['']
    assert successor != master
    assert sim.nodes[successor].node_id == max(
        sim.nodes[n].node_id for n in sim.alive())
    assert sim.check_invariants() == []
    assert sim.trace.of('kill')


def test_full_region_splits_into_quadrants(tmp_path):
    sim = Simulation(SimConfig(seed=5, node_options={
        'capacity': 8, 'replicas': 2}), str(tmp_path))
    corners = [(-45, -90), (-45, 90), (45, -90), (45, 90)]
    try:
        for i in range(12):
            lat, lon = corners[i % 4]
            sim.join_and_wait(f'n{i}', lat + i / 10, lon + i / 10)
        sim.run_for(3000)
        assert sorted(sim.masters()) == ['0', '1', '2', '3']
        assert sim.check_invariants() == []
        assert sim.trace.of('split')
    finally:
        sim.close()


def test_cross_region_post_reaches_remote_leaf(tmp_path):
    sim = Simulation(SimConfig(seed=6, node_options={
        'capacity': 8, 'replicas': 2}), str(tmp_path))
    corners = [(-45, -90), (-45, 90), (45, -90), (45, 90)]
    try:
        for i in range(12):
            lat, lon = corners[i % 4]
            sim.join_and_wait(f'n{i}', lat + i / 10, lon + i / 10)
        sim.run_for(3000)
        msg = ARMessage(Profile.parse('drone,lidar'), Action.STORE, b'far',
                        location=sim.nodes['n3'].config.geo)
        record = sim.post('n0', msg)
        assert sim.wait(record)
        assert record.error == ''
        assert record.master_hops >= 1
        region = sim.nodes['n3'].overlay.region
        assert record.targets == sim.responsible(msg.matching_profile,
                                                 region)
    finally:
        sim.close()


# measurements

def test_measurements(tmp_path):
    result = run_scenario(SimConfig(seed=2), SCRIPT, str(tmp_path))
    hops = measure(result.trace, 'hops')
    assert hops.count == 2
    latency = measure(result.trace, 'latency', kind='store')
    assert latency.count == 1 and latency.maximum >= 0
    delivered = measure(result.trace, 'delivered-set', kind='store')
    assert delivered.sets == [result.operations[0].targets]
    messages = measure(result.trace, 'messages')
    assert messages.counts['JOIN'] >= 3
    assert messages.to_csv().startswith('frame,count\n')
    assert measure(result.trace, 'cost').count == 2
    assert set(METRICS) == {'hops', 'latency', 'delivered-set', 'cost',
                            'messages'}
    with pytest.raises(ValueError):
        measure(result.trace, 'throughput')


# larger deployments, one region

WORDS = ['drone', 'lidar', 'camera', 'thermal', 'river', 'bridge', 'smoke']

needs_bench = pytest.mark.skipif(
    not os.getenv('RPMESH_BENCH'),
    reason='set RPMESH_BENCH to run full-size deployments',
)


def one_region(tmp_path, seed, count, **options):
    options.setdefault('capacity', 64)
    sim = Simulation(SimConfig(seed=seed, node_options=options),
                     str(tmp_path))
    for i in range(count):
        sim.join_and_wait(f'n{i}', 40.0 + i / 100, -74.0 - i / 100)
    sim.run_for(2000)
    return sim


def random_profile(rng, simple):
    words = rng.sample(WORDS, 3)
    if simple:
        return Profile.of(*words)
    return Profile.of(words[0], words[1][:2] + '*', '*')


def check_routing(tmp_path, count, posts):
    rng = random.Random(count)
    sim = one_region(tmp_path, count, count)
    try:
        for i in range(posts):
            profile = random_profile(rng, simple=i % 2 == 0)
            msg = ARMessage(profile, Action.NOTIFY_INTEREST)
            record = sim.post(f'n{rng.randrange(count)}', msg)
            assert sim.wait(record)
            assert record.error == ''
            assert record.targets == sim.responsible(profile)
    finally:
        sim.close()


@pytest.mark.parametrize('count', [4, 16, 64])
def test_every_responsible_rp_is_reached(tmp_path, count):
    check_routing(tmp_path, count, 40)


@needs_bench
@pytest.mark.parametrize('count', [4, 16, 64])
def test_every_responsible_rp_is_reached_at_full_load(tmp_path, count):
    check_routing(tmp_path, count, 1000)


def check_survives_kill(tmp_path, pick_victim):
    sim = one_region(tmp_path, 12, 12)
    try:
        profiles = [Profile.of(w, 'unit', str(i))
                    for i, w in enumerate(WORDS)]
        records = [sim.store('n1', p, f'entry {i}'.encode())
                   for i, p in enumerate(profiles)]
        assert sim.wait(records)
        (master,) = sim.masters()['']
        victim = pick_victim(sim, master, profiles)
        sim.kill(victim)
        sim.run_for(10 * 200 * 3)
        masters = sim.masters()['']
        assert len(masters) == 1 and victim not in masters
        reader = next(n for n in sim.alive() if n != 'n1')
        for i, profile in enumerate(profiles):
            query = sim.query(reader, profile)
            assert sim.wait(query)
            assert [e.data for e in query.result] == [f'entry {i}'.encode()]
    finally:
        sim.close()


def first_replica(sim, master, profiles):
    endpoints = sim.responsible(profiles[0])
    return next(e.split(':')[0] for e in endpoints
                if e.split(':')[0] != master)


@pytest.mark.parametrize('pick_victim', [
    lambda sim, master, profiles: master,
    first_replica,
], ids=['master', 'replica'])
def test_stored_entries_survive_a_crash(tmp_path, pick_victim):
    check_survives_kill(tmp_path, pick_victim)


@needs_bench
@pytest.mark.parametrize('victim', [f'n{i}' for i in range(12)])
def test_stored_entries_survive_any_single_crash(tmp_path, victim):
    check_survives_kill(tmp_path, lambda sim, master, profiles: victim)


def workload_latency(tmp_path, seed, count):
    """Mean store and exact-query latency of one fixed workload."""
    rng = random.Random(seed)
    sim = one_region(tmp_path, seed, count)
    try:
        profiles = [random_profile(rng, simple=True) for _ in range(20)]
        for i, profile in enumerate(profiles):
            assert sim.wait(sim.store(f'n{i % count}', profile, b'x'))
        for i, profile in enumerate(profiles):
            query = sim.query(f'n{(i + 1) % count}', profile)
            assert sim.wait(query)
            assert query.result
        return (measure(sim.trace, 'latency', kind='store').mean,
                measure(sim.trace, 'latency', kind='query').mean)
    finally:
        sim.close()


def check_latency_trend(tmp_path, seed, small_count, large_count):
    small = workload_latency(tmp_path / 'small', seed, small_count)
    large = workload_latency(tmp_path / 'large', seed, large_count)
    store_ratio = large[0] / max(small[0], 1.0)
    query_ratio = large[1] / max(small[1], 1.0)
    assert store_ratio <= 4.0, (seed, small, large)
    assert query_ratio <= 4.2, (seed, small, large)


def test_store_latency_grows_slowly_with_size(tmp_path):
    check_latency_trend(tmp_path, 1, 4, 24)


@needs_bench
@pytest.mark.parametrize('seed', [1, 2, 3])
def test_latency_trend_from_four_to_sixty_four_nodes(tmp_path, seed):
    check_latency_trend(tmp_path, seed, 4, 64)


def routing_cost(tmp_path, dimensions):
    rng = random.Random(dimensions)
    sim = one_region(tmp_path, 5, 16, dimensions=dimensions)
    try:
        for i in range(30):
            profile = Profile.of(*rng.sample(WORDS, dimensions))
            assert sim.wait(sim.store(f'n{i % 16}', profile, b'x'))
        return measure(sim.trace, 'cost', kind='store').mean
    finally:
        sim.close()


def test_routing_cost_grows_slowly_with_dimensions(tmp_path):
    one = routing_cost(tmp_path / 'd1', 1)
    six = routing_cost(tmp_path / 'd6', 6)
    assert six <= 3.0 * max(one, 1.0), (one, six)
