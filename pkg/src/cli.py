"""
Command-line client for a running node, plus the node, simulate, demo and
benchmark entry points.

Client commands talk to the node's HTTP API with ``requests`` and print a
table, or one JSON object per line with ``--json``.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, Iterable, List, Optional

import requests

from .ar.message import Action
from .ar.profile import Profile
from .constants import API_NAME, config
from .errors import EXIT_NETWORK, EXIT_OK, EXIT_USAGE, RpmeshError
from .misc import format_table

__all__ = ['ApiError', 'Client', 'build_parser', 'main']

logger = logging.getLogger(API_NAME)

RECEIPT_COLUMNS = ('reached', 'hops', 'master_hops', 'degraded', 'targets')
STATS_COLUMNS = ('endpoint', 'node_id', 'region', 'state', 'ring',
                 'entries', 'functions', 'registrations')


class ApiError(RpmeshError):
    def __init__(self, message: str, status_code: int = 0):
        super().__init__(message)
        self.status_code = status_code
        self.exit_code = EXIT_USAGE if 400 <= status_code < 500 \
            and status_code not in (404, 410) else EXIT_NETWORK


class Client:
    """Thin ``requests`` wrapper around one node's versioned API."""

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip('/')
        self.timeout = timeout
        self.session = requests.Session()

    def __repr__(self):
        return f'Client({self.base_url})'

    def _call(self, method: str, path: str, **kwargs) -> Any:
        url = f'{self.base_url}{path}'
        try:
            response = self.session.request(method, url,
                                            timeout=self.timeout, **kwargs)
        except requests.RequestException as e:
            raise ApiError(f'cannot reach {url}: {e}')
        if response.status_code >= 400:
            try:
                detail = response.json().get('detail', response.text)
            except ValueError:
                detail = response.text
            raise ApiError(f'{response.status_code}: {detail}',
                           response.status_code)
        return response.json()

    def status(self) -> dict:
        return self._call('GET', '/status')

    def post(self, action: str, profile: str, data: str = '',
             lat: Optional[float] = None, lon: Optional[float] = None,
             function: Optional[dict] = None,
             credentials: str = '') -> dict:
        body = {'action': action, 'profile': profile, 'data': data,
                'lat': lat, 'lon': lon, 'function': function,
                'credentials': credentials}
        return self._call('POST', '/post', json=body)

    def query(self, profile: str, lat: Optional[float] = None,
              lon: Optional[float] = None) -> dict:
        return self._call('POST', '/query',
                          json={'profile': profile, 'lat': lat, 'lon': lon})

    def push(self, peer: str, profile: str, records: List[str],
             start: int = 0, lat: Optional[float] = None,
             lon: Optional[float] = None) -> dict:
        return self._call('POST', '/push', json={
            'peer': peer, 'profile': profile, 'records': records,
            'start': start, 'lat': lat, 'lon': lon,
        })

    def pull(self, peer: str, profile: str, consumer: str,
             offset: Optional[int] = None, limit: int = 100,
             lat: Optional[float] = None,
             lon: Optional[float] = None) -> dict:
        return self._call('POST', '/pull', json={
            'peer': peer, 'profile': profile, 'consumer': consumer,
            'offset': offset, 'limit': limit, 'lat': lat, 'lon': lon,
        })

    def notifications(self, clear: bool = False) -> List[dict]:
        return self._call('GET', '/notifications',
                          params={'clear': str(clear).lower()})

    def tuples(self, fields: dict) -> dict:
        return self._call('POST', '/tuples', json={'fields': fields})

    def reload_rules(self) -> dict:
        return self._call('POST', '/rules/reload')

    def function_log(self) -> dict:
        return self._call('GET', '/functions/log')


def default_api() -> str:
    return (f'http://{config.http_host}:{config.http_port}'
            f'{config.main_api_address}/v1')


def _emit(rows: Iterable[Dict[str, Any]], as_json: bool,
          columns: Iterable[str] = ()):
    rows = list(rows)
    if as_json:
        for row in rows:
            print(json.dumps(row, sort_keys=True, default=str))
        return
    print(format_table(rows, tuple(columns)))


def _receipt_row(receipt: dict) -> dict:
    row = {k: receipt.get(k) for k in RECEIPT_COLUMNS}
    row['targets'] = ','.join(receipt.get('targets', []))
    return row


def _print_receipt(receipt: dict, as_json: bool):
    if as_json:
        _emit([receipt], True)
        return
    _emit([_receipt_row(receipt)], False, RECEIPT_COLUMNS)
    if receipt.get('results'):
        print()
        _emit(receipt['results'], False)
    for error in receipt.get('errors', []):
        print(f'error: {error}', file=sys.stderr)


def _stats_row(status: dict) -> dict:
    overlay = status.get('overlay') or {}
    store = status.get('store') or {}
    return {
        'endpoint': status.get('endpoint'),
        'node_id': str(status.get('node_id', ''))[:8],
        'region': repr(overlay.get('region', '')),
        'state': overlay.get('state'),
        'ring': overlay.get('ring'),
        'entries': store.get('entries'),
        'functions': status.get('functions'),
        'registrations': status.get('registrations'),
    }


def _check_profile(text: str) -> str:
    Profile.parse(text)
    return text


def _geo(args) -> dict:
    lat, lon = None, None
    if getattr(args, 'geo', None):
        lat, lon = (float(p) for p in args.geo.split(','))
    return {'lat': lat, 'lon': lon}


# commands
def cmd_post(args: argparse.Namespace) -> int:
    Action.parse(args.action)
    receipt = args.client.post(args.action, _check_profile(args.profile),
                               args.data, **_geo(args))
    _print_receipt(receipt, args.json)
    return EXIT_OK


def cmd_store_function(args: argparse.Namespace) -> int:
    function = {'name': args.name, 'runtime': args.runtime}
    if args.argv:
        function['argv'] = args.argv
        function['runtime'] = 'subprocess'
    elif args.blob_file:
        with open(args.blob_file) as f:
            function['blob'] = f.read()
    receipt = args.client.post('store-function',
                               _check_profile(args.profile),
                               function=function, **_geo(args))
    _print_receipt(receipt, args.json)
    return EXIT_OK


def cmd_start_function(args: argparse.Namespace) -> int:
    receipt = args.client.post('start-function',
                               _check_profile(args.profile), args.data,
                               **_geo(args))
    _print_receipt(receipt, args.json)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    if args.local:
        status = args.client.status()
        _emit([_stats_row(status) if not args.json else status], args.json,
              STATS_COLUMNS)
        return EXIT_OK
    receipt = args.client.post('statistics', _check_profile(args.profile),
                               **_geo(args))
    rows = receipt.get('results', [])
    _emit(rows if args.json else [_stats_row(r) for r in rows], args.json,
          STATS_COLUMNS)
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    body = args.client.query(_check_profile(args.profile), **_geo(args))
    _emit(body['entries'], args.json,
          ('profile', 'data', 'sfc_index', 'stored_at'))
    return EXIT_OK


def cmd_push(args: argparse.Namespace) -> int:
    records = list(args.records)
    if args.file:
        with open(args.file) as f:
            records.extend(line.rstrip('\n') for line in f if line.strip())
    if not records:
        raise ApiError('nothing to push', 400)
    body = args.client.push(args.peer, _check_profile(args.profile), records,
                            args.start, **_geo(args))
    _emit([body], args.json)
    return EXIT_OK


def cmd_pull(args: argparse.Namespace) -> int:
    body = args.client.pull(args.peer, _check_profile(args.profile),
                            args.consumer, args.offset, args.limit,
                            **_geo(args))
    if args.json:
        _emit([body], True)
        return EXIT_OK
    start = body['offset']
    _emit([{'offset': start + i, 'record': r}
           for i, r in enumerate(body['records'])], False,
          ('offset', 'record'))
    print(f'next offset: {body["next"]}')
    return EXIT_OK


def cmd_notifications(args: argparse.Namespace) -> int:
    _emit(args.client.notifications(args.clear), args.json,
          ('kind', 'profile', 'peer', 'data'))
    return EXIT_OK


def cmd_functions(args: argparse.Namespace) -> int:
    body = args.client.function_log()
    _emit(body['log'], args.json)
    return EXIT_OK


def cmd_node(args: argparse.Namespace) -> int:
    from .daemon import run_daemon
    from .logger import Logger

    if args.config:
        config.use_config_file(args.config)
    node_config = config.node_config(
        listen=args.listen, geo=args.geo, bootstrap=args.bootstrap,
        data=args.data, rules=args.rules, d=args.d, b=args.b,
        capacity=args.capacity, replicas=args.replicas,
        http_host=args.http_host, http_port=args.http_port,
    )
    log = Logger(
        logger_name=config.api_name,
        save_logs=config.save_logs,
        log_max_size_mb=config.log_max_size_mb,
        log_max_backup_count=config.log_max_backup_count,
        logs_dir=config.logs_dir,
        log_filename=config.log_filename,
        level=config.log_level,
    )
    return run_daemon(node_config, log)


def cmd_simulate(args: argparse.Namespace) -> int:
    import tempfile

    from .simnet import SimConfig, measure, run_scenario

    with open(args.script) as f:
        script = f.read()
    sim_config = SimConfig(seed=args.seed, latency_min_ms=args.latency[0],
                           latency_max_ms=args.latency[1], loss=args.loss)
    with tempfile.TemporaryDirectory(prefix='rpmesh-sim-') as data_dir:
        result = run_scenario(sim_config, script, data_dir)
    if args.trace:
        result.trace.save(args.trace)
    summary = measure(result.trace, args.metric)
    _emit([summary.as_dict()], args.json)
    for number, problems in enumerate(result.checkpoints, 1):
        for problem in problems:
            print(f'checkpoint {number}: {problem}', file=sys.stderr)
    return EXIT_OK if not any(result.checkpoints) else EXIT_USAGE


def cmd_demo(args: argparse.Namespace) -> int:
    from .demo import run_remote_demo, run_simulated_demo

    if args.producer_api and args.consumer_api:
        report = run_remote_demo(Client(args.producer_api),
                                 Client(args.consumer_api), args.records)
    else:
        report = run_simulated_demo(args.records, seed=args.seed)
    _emit([report], args.json)
    return EXIT_OK if report['ok'] else EXIT_USAGE


def cmd_benchmark(args: argparse.Namespace) -> int:
    from .benchmark import run_benchmark

    rows = run_benchmark(args.records, args.size, args.dir)
    _emit(rows, args.json)
    return EXIT_OK


def _add_geo(p: argparse.ArgumentParser):
    p.add_argument('--geo', metavar='LAT,LON',
                   help='Route to the region around this point')


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog='rpmesh',
        description='Location-aware associative rendezvous at the edge',
    )
    p.add_argument('--api', default=None,
                   help=f'Client API base URL (default {default_api()})')
    p.add_argument('--json', action='store_true',
                   help='One JSON object per line instead of a table')
    p.add_argument('--timeout', type=float, default=60.0)
    sub = p.add_subparsers(dest='cmd', required=True)

    post_p = sub.add_parser('post', help='Post an AR message')
    post_p.add_argument('--action', required=True)
    post_p.add_argument('--profile', required=True)
    post_p.add_argument('--data', default='')
    post_p.add_argument('--lat', type=float)
    post_p.add_argument('--lon', type=float)
    _add_geo(post_p)
    post_p.set_defaults(fn=cmd_post)

    fn_p = sub.add_parser('store-function', help='Store a function')
    fn_p.add_argument('--profile', required=True)
    fn_p.add_argument('--name', required=True)
    fn_p.add_argument('--runtime', default='callback',
                      choices=['callback', 'subprocess'])
    fn_p.add_argument('--blob-file')
    fn_p.add_argument('--argv', nargs='+',
                      help='Subprocess command line (stdin gets the data)')
    _add_geo(fn_p)
    fn_p.set_defaults(fn=cmd_store_function)

    start_p = sub.add_parser('start-function',
                             help='Start functions matching a profile')
    start_p.add_argument('--profile', required=True)
    start_p.add_argument('--data', default='')
    _add_geo(start_p)
    start_p.set_defaults(fn=cmd_start_function)

    stats_p = sub.add_parser('stats', help='Status of responsible RPs')
    stats_p.add_argument('--profile', default='*')
    stats_p.add_argument('--local', action='store_true',
                         help='Only the node behind --api')
    _add_geo(stats_p)
    stats_p.set_defaults(fn=cmd_stats)

    query_p = sub.add_parser('query', help='Stored entries for a profile')
    query_p.add_argument('--profile', required=True)
    _add_geo(query_p)
    query_p.set_defaults(fn=cmd_query)

    push_p = sub.add_parser('push', help='Stream records to a peer')
    push_p.add_argument('--peer', required=True)
    push_p.add_argument('--profile', required=True)
    push_p.add_argument('--file', help='One record per line')
    push_p.add_argument('--start', type=int, default=0)
    push_p.add_argument('records', nargs='*')
    _add_geo(push_p)
    push_p.set_defaults(fn=cmd_push)

    pull_p = sub.add_parser('pull', help="Read from a peer's queue")
    pull_p.add_argument('--peer', required=True)
    pull_p.add_argument('--profile', required=True)
    pull_p.add_argument('--consumer', required=True)
    pull_p.add_argument('--offset', type=int,
                        help='Commit this offset before reading')
    pull_p.add_argument('--limit', type=int, default=100)
    _add_geo(pull_p)
    pull_p.set_defaults(fn=cmd_pull)

    notes_p = sub.add_parser('notifications',
                             help='Rendezvous notifications received')
    notes_p.add_argument('--clear', action='store_true')
    notes_p.set_defaults(fn=cmd_notifications)

    log_p = sub.add_parser('functions', help='Executor log of the node')
    log_p.set_defaults(fn=cmd_functions)

    node_p = sub.add_parser('node', help='Run a node in the foreground')
    node_p.add_argument('--config', metavar='FILE',
                        help='key=value settings below the environment')
    node_p.add_argument('--listen')
    node_p.add_argument('--geo', metavar='LAT,LON')
    node_p.add_argument('--bootstrap', metavar='HOST:PORT[,..]')
    node_p.add_argument('--data')
    node_p.add_argument('--rules')
    node_p.add_argument('--d', type=int)
    node_p.add_argument('--b', type=int)
    node_p.add_argument('--capacity', type=int)
    node_p.add_argument('--replicas', type=int)
    node_p.add_argument('--http-host')
    node_p.add_argument('--http-port', type=int)
    node_p.set_defaults(fn=cmd_node)

    sim_p = sub.add_parser('simulate', help='Run a scenario script')
    sim_p.add_argument('script')
    sim_p.add_argument('--seed', type=int, default=1)
    sim_p.add_argument('--latency', type=int, nargs=2, default=[1, 5],
                       metavar=('MIN', 'MAX'))
    sim_p.add_argument('--loss', type=float, default=0.0)
    sim_p.add_argument('--trace', help='Write the trace as CSV')
    sim_p.add_argument('--metric', default='hops',
                       choices=['hops', 'latency', 'delivered-set', 'cost',
                                'messages'])
    sim_p.set_defaults(fn=cmd_simulate)

    demo_p = sub.add_parser('demo', help='Disaster-response workflow')
    demo_p.add_argument('--records', type=int, default=200)
    demo_p.add_argument('--seed', type=int, default=7)
    demo_p.add_argument('--producer-api')
    demo_p.add_argument('--consumer-api')
    demo_p.set_defaults(fn=cmd_demo)

    bench_p = sub.add_parser('benchmark', help='Queue append throughput')
    bench_p.add_argument('--records', type=int, default=20_000)
    bench_p.add_argument('--size', type=int, default=1024)
    bench_p.add_argument('--dir', default=None)
    bench_p.set_defaults(fn=cmd_benchmark)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.client = Client(args.api or default_api(), args.timeout)
    if getattr(args, 'lat', None) is not None \
            or getattr(args, 'lon', None) is not None:
        if args.lat is None or args.lon is None:
            print('error: --lat and --lon go together', file=sys.stderr)
            return EXIT_USAGE
        args.geo = f'{args.lat},{args.lon}'
    try:
        return args.fn(args)
    except RpmeshError as e:
        print(f'error: {e}', file=sys.stderr)
        return e.exit_code
    except (ValueError, OSError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
