"""
Scripted simulations of a whole deployment.

Script lines look like ``at <ms> <verb> <args...>``; ``#`` starts a comment.
Verbs: ``join <node> <lat> <lon>``, ``post <node> <action> <profile>
[data]``, ``store <node> <profile> [data]``, ``query <node> <profile>``,
``start-function <node> <profile>``, ``kill <node>``, ``partition a,b |
c,d``, ``heal`` and ``checkpoint``.
"""
import logging
import os
import random
import shlex
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from ..ar.message import Action, ARMessage
from ..ar.profile import Profile
from ..constants import API_NAME
from ..errors import RpmeshError, ScenarioError
from ..executor import CallbackExecutor, Executors
from ..node import Node, NodeConfig
from ..overlay.geo import bounds_for_path
from ..overlay.routing import responsible_for_target
from ..rules import RuleEngine
from ..sfc import target_for_profile
from .network import (
    LinkModel,
    OperationRecord,
    SimTrace,
    VirtualNetwork,
    VirtualRuntime,
)
from .scheduler import Scheduler

__all__ = [
    'SIM_NODE_DEFAULTS',
    'SimConfig',
    'SimResult',
    'Simulation',
    'Step',
    'parse_script',
    'run_scenario',
]

logger = logging.getLogger(API_NAME)

SIM_NODE_DEFAULTS = {
    'keepalive_ms': 200,
    'miss_threshold': 3,
    'join_timeout_ms': 300,
    'rpc_timeout_ms': 100,
    'segment_size': 1024 * 1024,
    'max_record_size': 256 * 1024,
    'max_frame_bytes': 4 * 1024 * 1024,
    'hot_capacity_bytes': 1024 * 1024,
}
PORT = 7400
BOOTSTRAP_FANOUT = 3

_ACTIONS_WITH_NODE = {'join', 'post', 'store', 'query', 'kill',
                      'start-function'}


@dataclass
class SimConfig:
    seed: int = 1
    node_count: int = 0
    latency_min_ms: int = 1
    latency_max_ms: int = 5
    loss: float = 0.0
    partitions: List[tuple] = field(default_factory=list)
    node_options: Dict[str, Any] = field(default_factory=dict)
    settle_ms: int = 2000

    @property
    def link(self) -> LinkModel:
        return LinkModel(self.latency_min_ms, self.latency_max_ms, self.loss)


@dataclass(frozen=True)
class Step:
    time: int
    verb: str
    args: tuple
    line: int = 0

    @property
    def node(self) -> Optional[str]:
        if self.verb in _ACTIONS_WITH_NODE and self.args:
            return self.args[0]
        return None


def _split_groups(args: List[str]) -> List[List[str]]:
    text = ' '.join(args)
    return [[n.strip() for n in part.split(',') if n.strip()]
            for part in text.split('|')]


def parse_script(text: str) -> List[Step]:
    steps = []
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as e:
            raise ScenarioError(f'line {number}: {e}', step=number)
        if len(words) < 3 or words[0] != 'at':
            raise ScenarioError(f'line {number}: expected "at <t> <verb>"',
                                step=number)
        try:
            time = int(words[1])
        except ValueError:
            raise ScenarioError(f'line {number}: bad time {words[1]!r}',
                                step=number)
        verb, args = words[2], words[3:]
        needed = {'join': 3, 'post': 3, 'store': 2, 'query': 2, 'kill': 1,
                  'start-function': 2, 'partition': 1, 'heal': 0,
                  'checkpoint': 0}
        if verb not in needed:
            raise ScenarioError(f'line {number}: unknown verb {verb!r}',
                                step=number)
        if len(args) < needed[verb]:
            raise ScenarioError(f'line {number}: {verb} needs '
                                f'{needed[verb]} arguments', step=number)
        steps.append(Step(time, verb, tuple(args), number))
    steps.sort(key=lambda s: (s.time, s.line))
    return steps


@dataclass
class SimResult:
    trace: SimTrace
    state: Dict[str, dict]
    checkpoints: List[List[str]]
    simulation: 'Simulation'

    @property
    def operations(self) -> List[OperationRecord]:
        return self.trace.operations


class Simulation:
    """A deployment of real ``Node`` objects over a virtual network."""

    def __init__(self, config: SimConfig, data_dir: str,
                 callbacks: Optional[Dict[str, Callable]] = None):
        self.config = config
        self.data_dir = data_dir
        self.callbacks = dict(callbacks or {})
        self.rng = random.Random(config.seed)
        self.scheduler = Scheduler()
        self.trace = SimTrace()
        self.network = VirtualNetwork(self.scheduler, self.rng, config.link,
                                      self.trace)
        self.nodes: Dict[str, Node] = {}
        self.runtimes: Dict[str, VirtualRuntime] = {}
        self.joined: List[str] = []
        self.checkpoints: List[List[str]] = []
        self._next_op = 0
        for when, groups in config.partitions:
            if groups:
                self.scheduler.call_at(when, self.partition, groups)
            else:
                self.scheduler.call_at(when, self.heal)

    def __repr__(self):
        return (f'Simulation(t={self.now}, nodes={len(self.nodes)}, '
                f'alive={len(self.alive())})')

    @property
    def now(self) -> int:
        return self.scheduler.now

    @staticmethod
    def endpoint(name: str) -> str:
        return f'{name}:{PORT}'

    def alive(self) -> List[str]:
        return [n for n in self.nodes if self.runtimes[n].alive]

    def node(self, name: str) -> Node:
        node = self.nodes.get(name)
        if node is None:
            raise ScenarioError(f'unknown node {name!r}', step=name)
        if not self.runtimes[name].alive:
            raise ScenarioError(f'node {name!r} is dead', step=name)
        return node

    # membership
    def _bootstrap_for(self, name: str) -> List[str]:
        candidates = [n for n in self.joined
                      if n != name and self.runtimes[n].alive]
        return [self.endpoint(n) for n in candidates[:BOOTSTRAP_FANOUT]]

    def add_node(self, name: str, lat: float, lon: float,
                 rules: Optional[RuleEngine] = None, **overrides) -> Node:
        if name in self.nodes:
            raise ScenarioError(f'node {name!r} already exists', step=name)
        options = dict(SIM_NODE_DEFAULTS)
        options.update(self.config.node_options)
        options.update(overrides)
        config = NodeConfig(
            listen=self.endpoint(name), lat=lat, lon=lon,
            bootstrap=self._bootstrap_for(name),
            data_dir=os.path.join(self.data_dir, name), **options,
        )
        runtime = VirtualRuntime(self.network, config.listen, config.digest,
                                 self.rng.getrandbits(32))
        callbacks = CallbackExecutor(os.path.join(config.data_dir,
                                                  'executor.log'))
        for fn_name, fn in self.callbacks.items():
            callbacks.register(fn_name, fn)
        node = Node(config, runtime, Executors(callbacks), rules)
        self.nodes[name] = node
        self.runtimes[name] = runtime
        return node

    def join(self, name: str, lat: float, lon: float,
             rules: Optional[RuleEngine] = None, **overrides) -> Node:
        node = self.add_node(name, lat, lon, rules, **overrides)

        def joined(member, error):
            if error is None:
                self.joined.append(name)
            else:
                logger.warning(f'Simulated node {name} failed to join: '
                               f'{error}')
        node.start(joined)
        return node

    def join_and_wait(self, name: str, lat: float, lon: float,
                      rules: Optional[RuleEngine] = None,
                      **overrides) -> Node:
        node = self.join(name, lat, lon, rules, **overrides)
        self.scheduler.run_until(lambda: name in self.joined,
                                 self.now + 60_000)
        return node

    def kill(self, name: str):
        self.node(name)
        self.runtimes[name].kill()

    def partition(self, groups: List[List[str]]):
        self.network.partition(
            [[self.endpoint(n) for n in group] for group in groups]
        )

    def heal(self):
        self.network.heal()

    # operations
    def _operation(self, kind: str, name: str,
                   profile: Profile) -> OperationRecord:
        self._next_op += 1
        record = OperationRecord(self._next_op, kind, self.endpoint(name),
                                 str(profile), self.now)
        self.trace.operations.append(record)
        self.trace.add(self.now, 'op-start', record.node,
                       frame=f'{kind}#{record.op_id}')
        return record

    def _finish(self, record: OperationRecord, result, error):
        record.finished = self.now
        if error is not None:
            record.error = f'{type(error).__name__}: {error}'
        else:
            record.result = result
            if hasattr(result, 'targets'):
                record.targets = list(result.targets)
                record.hops = result.hops
                record.master_hops = result.master_hops
        self.trace.add(self.now, 'op-done', record.node,
                       frame=f'{record.kind}#{record.op_id}',
                       hops=record.hops + record.master_hops)

    def post(self, name: str, msg: ARMessage) -> OperationRecord:
        node = self.node(name)
        record = self._operation(msg.action.label, name, msg.profile)
        node.post(msg, lambda r, e: self._finish(record, r, e))
        return record

    def store(self, name: str, profile: Profile,
              data: bytes = b'') -> OperationRecord:
        return self.post(name, ARMessage(profile, Action.STORE, data))

    def query(self, name: str, profile: Profile) -> OperationRecord:
        node = self.node(name)
        record = self._operation('query', name, profile)
        node.query(profile, lambda r, e: self._finish(record, r, e))
        return record

    def wait(self, records, timeout_ms: int = 60_000) -> bool:
        records = list(records) if isinstance(records, (list, tuple)) \
            else [records]
        return self.scheduler.run_until(
            lambda: all(r.done for r in records), self.now + timeout_ms,
        )

    def run_for(self, duration_ms: int):
        self.scheduler.run_for(duration_ms)

    # scripts
    def apply(self, step: Step):
        args = step.args
        try:
            if step.verb == 'join':
                self.join(args[0], float(args[1]), float(args[2]))
            elif step.verb == 'post':
                data = ' '.join(args[3:]).encode('utf-8')
                self.post(args[0], ARMessage(Profile.parse(args[2]),
                                             Action.parse(args[1]), data))
            elif step.verb == 'store':
                data = ' '.join(args[2:]).encode('utf-8')
                self.store(args[0], Profile.parse(args[1]), data)
            elif step.verb == 'query':
                self.query(args[0], Profile.parse(args[1]))
            elif step.verb == 'start-function':
                self.post(args[0], ARMessage(Profile.parse(args[1]),
                                             Action.START_FUNCTION))
            elif step.verb == 'kill':
                self.kill(args[0])
            elif step.verb == 'partition':
                self.partition(_split_groups(list(args)))
            elif step.verb == 'heal':
                self.heal()
            elif step.verb == 'checkpoint':
                self.checkpoints.append(self.check_invariants())
        except (RpmeshError, ValueError) as e:
            raise ScenarioError(f'line {step.line}: {e}', step=step.line)

    def run_script(self, steps: List[Step]):
        for step in steps:
            self.scheduler.run_until(until_time=step.time)
            self.apply(step)
        self.run_for(self.config.settle_ms)

    # invariants
    def masters(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for name in self.alive():
            overlay = self.nodes[name].overlay
            if overlay.joined and overlay.is_master:
                out.setdefault(overlay.region, []).append(name)
        return out

    def check_invariants(self) -> List[str]:
        """Violations of the overlay's quiescent-state invariants."""
        problems = []
        live = [n for n in self.alive() if self.nodes[n].overlay.joined]
        masters = self.masters()
        for region, names in sorted(masters.items()):
            if len(names) != 1:
                problems.append(f'region {region!r} has masters {names}')
        snapshots = {
            self.nodes[names[0]].overlay.snapshot.key
            for names in masters.values()
        }
        if len(snapshots) > 1:
            problems.append(f'masters disagree on snapshots {snapshots}')
        if not live:
            return problems
        newest = max((self.nodes[n].overlay.snapshot for n in live),
                     key=lambda s: s.key)
        if not newest.tiles_root():
            problems.append('leaf regions do not tile the root box')
        for path in newest.leaves:
            if path not in masters:
                problems.append(f'region {path!r} has no live master')
        for name in live:
            overlay = self.nodes[name].overlay
            leaf = newest.leaf_for(overlay.me.geo)
            if leaf is None or leaf.path != overlay.region:
                problems.append(f'{name} sits in {overlay.region!r}, not '
                                f'{leaf.path if leaf else None!r}')
            if not bounds_for_path(overlay.region).contains(overlay.me.geo):
                problems.append(f'{name} lies outside region '
                                f'{overlay.region!r}')
            owners = [m for m in masters.get(overlay.region, [])
                      if overlay.node_id in self.nodes[m].overlay.ring]
            if len(owners) != 1:
                problems.append(f'{name} is in {len(owners)} master rings')
        for problem in problems:
            logger.warning(f'Invariant violated at t={self.now}: {problem}')
        return problems

    def responsible(self, profile: Profile, region: str = '') -> List[str]:
        """Brute-force set of live RPs responsible for ``profile``."""
        names = [n for n in self.alive()
                 if self.nodes[n].overlay.joined
                 and self.nodes[n].overlay.region == region]
        if not names:
            return []
        config = self.nodes[names[0]].config
        target = target_for_profile(profile, config.dimensions, config.order)
        by_id = {self.nodes[n].node_id: n for n in names}
        ids = responsible_for_target(target, by_id, config.replicas)
        return sorted(self.endpoint(by_id[i]) for i in ids)

    def state(self) -> Dict[str, dict]:
        out = {}
        for name, node in self.nodes.items():
            overlay = node.overlay
            out[name] = {
                'alive': self.runtimes[name].alive,
                'state': overlay.state,
                'region': overlay.region,
                'master': overlay.is_master,
                'ring': len(overlay.ring),
                'entries': len(node.store),
                'snapshot': overlay.snapshot.key if overlay.snapshot
                else None,
            }
        return out

    def close(self):
        for node in self.nodes.values():
            node.stop()


def run_scenario(config: SimConfig, script: str, data_dir: str,
                 callbacks: Optional[Dict[str, Callable]] = None
                 ) -> SimResult:
    """Runs ``script`` over a fresh simulated deployment."""
    steps = parse_script(script)
    known = {f'n{i}' for i in range(config.node_count)}
    for step in steps:
        if step.verb == 'join':
            known.add(step.args[0])
        elif step.node is not None and step.node not in known:
            raise ScenarioError(f'line {step.line}: node {step.node!r} '
                                f'never joins', step=step.line)
    simulation = Simulation(config, data_dir, callbacks)
    for i in range(config.node_count):
        simulation.join_and_wait(f'n{i}', 0.0, 0.0)
    try:
        simulation.run_script(steps)
        state = simulation.state()
    finally:
        simulation.close()
    return SimResult(simulation.trace, state,
                     simulation.checkpoints, simulation)
