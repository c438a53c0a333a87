from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from src import API_LATEST, app
from src.api_versions.v1 import models
from src.configurator import MainConfigurator
from src.simnet import SimConfig, Simulation

config = MainConfigurator()
base_address = config.main_api_address
api_version = '/v1'
api = f'{base_address}{api_version}'

client = TestClient(app)


@pytest.fixture
def sim(tmp_path):
    simulation = Simulation(SimConfig(seed=11, node_options={
        'max_frame_bytes': 2048}), str(tmp_path))
    simulation.join_and_wait('a', 40.0, -74.0)
    API_LATEST.gateway.attach(simulation.nodes['a'])
    yield simulation
    API_LATEST.gateway.detach()
    simulation.close()


def test_root():
    response = client.get('/')
    assert response.status_code == 200
    assert 'welcome_text' in response.json()


def test_version_root():
    response = client.get(api)
    assert response.status_code == 200
    assert response.json()['message'].endswith('v1 active')


def test_docs():
    assert client.get(f'{base_address}/docs').status_code == 200
    assert client.get(f'{base_address}/openapi.json').status_code == 200


def test_no_node_is_unavailable():
    response = client.get(f'{api}/status')
    assert response.status_code == 503


def test_status(sim):
    response = client.get(f'{api}/status')
    assert response.status_code == 200
    assert response.json()['endpoint'] == 'a:7400'


def test_latest_alias(sim):
    response = client.get(f'{base_address}/latest/status')
    assert response.status_code == 200


def test_store_then_query(sim):
    response = client.post(f'{api}/post', json={
        'action': 'store', 'profile': 'drone,lidar', 'data': 'frame 1',
    })
    assert response.status_code == 200
    receipt = response.json()
    assert receipt['reached'] == 1
    assert receipt['targets'] == ['a:7400']
    assert not receipt['degraded']

    response = client.post(f'{api}/query', json={'profile': 'drone,li*'})
    assert response.status_code == 200
    body = response.json()
    assert body['count'] == 1
    assert body['entries'][0]['data'] == 'frame 1'
    assert body['entries'][0]['profile'] == 'drone,lidar'


def test_base64_payloads(sim):
    response = client.post(f'{api}/post', json={
        'action': 'store', 'profile': 'raw', 'data': 'AAEC',
        'encoding': 'base64',
    })
    assert response.status_code == 200
    response = client.post(f'{api}/query', json={
        'profile': 'raw', 'encoding': 'base64',
    })
    assert response.json()['entries'][0]['data'] == 'AAEC'


@pytest.mark.parametrize('body', [
    {'action': 'store', 'profile': 'dr*ne'},
    {'action': 'teleport', 'profile': 'drone'},
    {'action': 'store', 'profile': 'drone', 'data': '!!',
     'encoding': 'base64'},
    {'action': 'store-function', 'profile': 'f'},
    {'action': 'store', 'profile': 'drone', 'lat': 10},
])
def test_bad_messages(sim, body):
    response = client.post(f'{api}/post', json=body)
    assert response.status_code == 400


def test_invalid_body_is_rejected(sim):
    response = client.post(f'{api}/post', json={
        'action': 'store', 'profile': 'drone', 'lat': 120,
    })
    assert response.status_code == 422


def test_oversized_message(sim):
    response = client.post(f'{api}/post', json={
        'action': 'store', 'profile': 'drone', 'data': 'x' * 4000,
    })
    assert response.status_code == 413


def test_rendezvous_notifications(sim):
    client.post(f'{api}/post', json={
        'action': 'notify-interest', 'profile': 'drone,lidar',
    })
    client.post(f'{api}/post', json={
        'action': 'notify-data', 'profile': 'drone,*',
    })
    sim.run_for(500)
    response = client.get(f'{api}/notifications')
    assert response.status_code == 200
    kinds = {n['kind'] for n in response.json()}
    assert kinds == {'consumer', 'producer'}
    assert all(n['peer'] == 'a:7400' for n in response.json())

    client.get(f'{api}/notifications', params={'clear': 'true'})
    assert client.get(f'{api}/notifications').json() == []


def test_push_and_pull(sim):
    records = [f'r{i}' for i in range(5)]
    response = client.post(f'{api}/push', json={
        'peer': 'a:7400', 'profile': 'drone,lidar', 'records': records,
    })
    assert response.status_code == 200
    assert response.json()['head'] == 5

    response = client.post(f'{api}/pull', json={
        'peer': 'a:7400', 'profile': 'drone,lidar', 'consumer': 'c1',
        'limit': 2,
    })
    assert response.status_code == 200
    body = response.json()
    assert body['records'] == ['r0', 'r1']
    assert body['next'] == 2

    response = client.post(f'{api}/pull', json={
        'peer': 'a:7400', 'profile': 'drone,lidar', 'consumer': 'c1',
        'offset': 4,
    })
    assert response.json()['records'] == ['r4']

    response = client.post(f'{api}/pull', json={
        'peer': 'a:7400', 'profile': 'drone,lidar', 'consumer': 'c1',
        'offset': 1,
    })
    assert response.status_code == 400


def test_push_gap_names_resume_offset(sim):
    response = client.post(f'{api}/push', json={
        'peer': 'a:7400', 'profile': 'drone', 'records': ['x'], 'start': 3,
    })
    assert response.status_code == 502
    assert 'resume from 0' in response.json()['detail']


def test_rules_endpoints_without_rule_file(sim):
    response = client.post(f'{api}/tuples', json={'fields': {'RESULT': 1}})
    assert response.status_code == 404
    assert client.post(f'{api}/rules/reload').status_code == 404


def test_function_log_starts_empty(sim):
    response = client.get(f'{api}/functions/log')
    assert response.status_code == 200
    assert response.json() == {'log': [], 'results': []}


def test_response_models_read_attributes():
    receipt = SimpleNamespace(reached=2, targets=['a:7400', 'b:7400'],
                              hops=1, master_hops=0, degraded=True,
                              results=[], errors=['b:7400: timeout'])
    model = models.ReceiptResponse.model_validate(receipt)
    assert (model.reached, model.degraded) == (2, True)
    pushed = models.PushResponse.model_validate(
        SimpleNamespace(stream='s', acked=3, head=3))
    assert pushed.head == 3
    for model_class in (models.ReceiptResponse, models.PushResponse):
        assert model_class.model_config['from_attributes'] is True
