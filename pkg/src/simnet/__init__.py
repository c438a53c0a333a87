"""
Deterministic in-process deployments driven by a virtual clock.
"""
from .measure import METRICS, Summary, measure
from .network import (
    LinkModel,
    OperationRecord,
    SimTrace,
    TraceEvent,
    VirtualNetwork,
    VirtualRuntime,
)
from .scenario import SimConfig, SimResult, Simulation, parse_script, \
    run_scenario
from .scheduler import Scheduler

__all__ = [
    'LinkModel',
    'METRICS',
    'OperationRecord',
    'Scheduler',
    'SimConfig',
    'SimResult',
    'SimTrace',
    'Simulation',
    'Summary',
    'TraceEvent',
    'VirtualNetwork',
    'VirtualRuntime',
    'measure',
    'parse_script',
    'run_scenario',
]
