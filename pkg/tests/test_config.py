import pydantic
import pytest

from src.configurator import MainConfigurator


@pytest.fixture
def clean_env(monkeypatch):
    for name in ('RPMESH_GEO', 'RPMESH_REPLICAS', 'RPMESH_CONFIG_FILE',
                 'RPMESH_SAVE_LOGS', 'RPMESH_MAIN_API_ADDRESS',
                 'RPMESH_CAPACITY'):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults(clean_env, tmp_path):
    config = MainConfigurator(env_path=str(tmp_path / 'missing.env'))
    assert config.api_name == 'rpmesh'
    assert config.main_api_address.startswith('/')
    node = config.node_config()
    assert (node.dimensions, node.order, node.replicas) == (3, 16, 3)
    assert node.bootstrap == []


def test_file_then_environment_then_overrides(clean_env, tmp_path):
    config_file = tmp_path / 'node.conf'
    config_file.write_text('GEO=40.0,-74.0\nREPLICAS=5\nSAVE_LOGS=yes\n'
                           'MAIN_API_ADDRESS=edge\n')
    clean_env.setenv('RPMESH_REPLICAS', '4')
    config = MainConfigurator(env_path=str(tmp_path / 'missing.env'),
                              config_file=str(config_file))
    assert config.save_logs is True
    assert config.main_api_address == '/edge'
    node = config.node_config(bootstrap='a:7400, b:7400', capacity=None)
    assert node.geo.lat == 40.0
    assert node.replicas == 4
    assert node.bootstrap == ['a:7400', 'b:7400']
    assert config.node_config(replicas=2).replicas == 2


def test_bad_values_fail_validation(clean_env, tmp_path):
    config = MainConfigurator(env_path=str(tmp_path / 'missing.env'))
    with pytest.raises(pydantic.ValidationError):
        config.node_config(listen='nowhere')


def test_config_file_given_later(clean_env, tmp_path):
    config = MainConfigurator(env_path=str(tmp_path / 'missing.env'))
    with pytest.raises(FileNotFoundError):
        config.use_config_file(str(tmp_path / 'nope.conf'))
    config_file = tmp_path / 'node.conf'
    config_file.write_text('CAPACITY=9\n')
    assert config.use_config_file(str(config_file)).node_config() \
        .capacity == 9
