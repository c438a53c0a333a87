import shutil
import sys

import pytest

from src.ar.message import Action, ARMessage, FunctionRef
from src.ar.profile import Profile
from src.errors import FunctionStartFailed
from src.executor import (
    RECENT_RECORDS,
    CallbackExecutor,
    Executors,
    SubprocessExecutor,
    read_executor_log,
    result_dict,
)


def message(data=b'', msg_id=5):
    return ARMessage(Profile.of('post_processing_func'),
                     Action.START_FUNCTION, data=data, msg_id=msg_id)


def test_callback_runs_and_is_logged(tmp_path):
    log = tmp_path / 'node' / 'executor.log'
    executor = CallbackExecutor(str(log))
    seen = []
    executor.register('f', lambda m: seen.append(m.data) or b'done')
    result = executor.start(FunctionRef('f'), message(b'in'))
    assert (result.status, result.output, result.msg_id) == ('ok', b'done', 5)
    assert seen == [b'in']
    entries = read_executor_log(str(log))
    assert [(e['name'], e['status']) for e in entries] == [('f', 'started')]
    assert executor.started('f') == 1


def test_unknown_callback_fails():
    with pytest.raises(FunctionStartFailed):
        CallbackExecutor().start(FunctionRef('missing'), message())


def test_subprocess_requires_allow_listed_digest():
    blob = SubprocessExecutor.descriptor([sys.executable, '-c', 'pass'])
    ref = FunctionRef('f', blob, 'subprocess')
    executor = SubprocessExecutor()
    with pytest.raises(FunctionStartFailed):
        executor.start(ref, message())
    assert not executor.admits(ref)
    assert executor.recent[-1]['status'] == 'denied'


@pytest.mark.skipif(shutil.which('cat') is None, reason='needs cat')
def test_subprocess_feeds_message_data(tmp_path):
    blob = SubprocessExecutor.descriptor(['cat'])
    ref = FunctionRef('echo', blob, 'subprocess')
    executor = SubprocessExecutor([ref.digest], str(tmp_path / 'x.log'))
    result = executor.start(ref, message(b'lidar frame'))
    assert (result.status, result.returncode) == ('ok', 0)
    assert result.output == b'lidar frame'
    statuses = [e['status'] for e in read_executor_log(
        str(tmp_path / 'x.log'))]
    assert statuses == ['started', 'ok']


def test_subprocess_failure_and_timeout():
    failing = FunctionRef('bad', SubprocessExecutor.descriptor(
        [sys.executable, '-c', 'raise SystemExit(3)']), 'subprocess')
    slow = FunctionRef('slow', SubprocessExecutor.descriptor(
        [sys.executable, '-c', 'import time; time.sleep(30)'],
        timeout=0.5), 'subprocess')
    executor = SubprocessExecutor([failing.digest, slow.digest])
    result = executor.start(failing, message())
    assert (result.status, result.returncode) == ('failed', 3)
    assert executor.start(slow, message()).status == 'failed'


@pytest.mark.parametrize('blob', [b'not json', b'{"argv": []}', b'[1, 2]'])
def test_bad_descriptors(blob):
    ref = FunctionRef('f', blob, 'subprocess')
    with pytest.raises(FunctionStartFailed):
        SubprocessExecutor([ref.digest]).start(ref, message())


def test_registry_dispatches_on_runtime_tag():
    callbacks = CallbackExecutor()
    callbacks.register('f', lambda m: None)
    executors = Executors(callbacks, SubprocessExecutor())
    assert executors.start(FunctionRef('f'), message()).output == b''
    assert executors.status() == {'callback': 1, 'subprocess': 0}
    assert executors.stop('f') == 0
    with pytest.raises(FunctionStartFailed):
        executors.start(FunctionRef('f', b'', 'wasm'), message())


def test_result_dict_is_json_friendly():
    executor = CallbackExecutor()
    executor.register('f', lambda m: b'\xffok')
    out = result_dict(executor.start(FunctionRef('f'), message()))
    assert out['output'] == '\ufffdok'
    assert out['name'] == 'f'


def test_recent_records_are_bounded():
    executor = CallbackExecutor()
    executor.register('f', lambda m: None)
    for i in range(RECENT_RECORDS + 10):
        executor.start(FunctionRef('f'), message(msg_id=i))
    assert len(executor.recent) == RECENT_RECORDS
    assert executor.recent[-1]['msg_id'] == RECENT_RECORDS + 9
    assert executor.started('f') == RECENT_RECORDS + 10
    assert executor.started() == RECENT_RECORDS + 10
    assert Executors(executor).status() == {'callback': RECENT_RECORDS + 10}


def test_callback_admits_only_registered_names():
    executor = CallbackExecutor()
    executor.register('f', lambda m: None)
    assert executor.admits(FunctionRef('f'))
    assert not executor.admits(FunctionRef('g'))
