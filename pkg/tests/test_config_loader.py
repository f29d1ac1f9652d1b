import pytest

from pathlib import Path
from unittest.mock import MagicMock, patch

from app.config.loader import ConfigLoader


def test_config_loader_init_and_load_base(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    """Test that the ConfigLoader loads the base config correctly."""
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)

    settings = ConfigLoader(project_root=tmp_path).get_settings()

    assert settings.app.name == 'mmhco-har'
    assert settings.run.frames == 2
    assert settings.run.stage_depths == [1, 1, 1, 1]
    assert settings.synth.samples_per_class == 10
    # untouched fields keep their model defaults
    assert settings.run.fusion == 'route'
    assert settings.bench.attention_block == 512


def test_missing_project_root_raises(tmp_path):
    with pytest.raises(FileNotFoundError, match='Project root not found'):
        ConfigLoader(project_root=tmp_path / 'nowhere')


def test_missing_base_config_raises(tmp_path, temp_config_dir):
    with pytest.raises(FileNotFoundError, match='default.yaml'):
        ConfigLoader(project_root=tmp_path)


def test_config_loader_override_with_yaml_file(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    """Test that an override file merges section by section."""
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    override_path = create_yaml_file(tmp_path, 'override.yaml', {'run': {'fusion': 'msf', 'epochs': 3}})

    settings = ConfigLoader(project_root=tmp_path, config_path=str(override_path)).get_settings()

    assert settings.run.fusion == 'msf'
    assert settings.run.epochs == 3
    assert settings.run.frames == 2


def test_config_loader_override_with_key_value_file(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    """Bare keys address `run`, dotted keys address other sections; values are typed."""
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    override_path = tmp_path / 'override.txt'
    override_path.write_text(
        '# tiny run\n'
        'seed=7\n'
        'residual=false\n'
        'stage_depths=[2, 1, 1, 1]\n'
        'synth.frames=3\n'
        'bench.runs=5\n'
    )

    settings = ConfigLoader(project_root=tmp_path, config_path=str(override_path)).get_settings()

    assert settings.run.seed == 7
    assert settings.run.residual is False
    assert settings.run.stage_depths == [2, 1, 1, 1]
    assert settings.synth.frames == 3
    assert settings.bench.runs == 5


def test_malformed_key_value_line_raises(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    override_path = tmp_path / 'override.cfg'
    override_path.write_text('seed 7\n')

    with pytest.raises(ValueError, match='expected key=value'):
        ConfigLoader(project_root=tmp_path, config_path=str(override_path))


def test_explicit_overrides_win_over_files(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    override_path = create_yaml_file(tmp_path, 'override.yaml', {'run': {'seed': 1, 'loss': 'literal'}})

    settings = ConfigLoader(
        project_root=tmp_path, config_path=str(override_path), overrides={'run.seed': 9, 'run.modality': 'rgb'}
    ).get_settings()

    assert settings.run.seed == 9
    assert settings.run.loss == 'literal'
    assert settings.run.modality == 'rgb'


def test_config_loader_env_override_path(tmp_path, create_yaml_file, temp_config_dir, set_env, dummy_config_content):
    """Test that MMHCO_CONFIG names the override file when no path is passed."""
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    env_override_path = create_yaml_file(tmp_path, 'env.yaml', {'run': {'batch_size': 2}})
    set_env({'MMHCO_CONFIG': str(env_override_path)})

    settings = ConfigLoader(project_root=tmp_path).get_settings()

    assert settings.run.batch_size == 2


def test_explicit_path_beats_env_override(tmp_path, create_yaml_file, temp_config_dir, set_env, dummy_config_content):
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    env_path = create_yaml_file(tmp_path, 'env.yaml', {'run': {'batch_size': 2}})
    cli_path = create_yaml_file(tmp_path, 'cli.yaml', {'run': {'batch_size': 3}})
    set_env({'MMHCO_CONFIG': str(env_path)})

    settings = ConfigLoader(project_root=tmp_path, config_path=str(cli_path)).get_settings()

    assert settings.run.batch_size == 3


def test_config_loader_app_env_override(tmp_path, create_yaml_file, temp_config_dir, set_env, dummy_config_content):
    """Test that APP_ENV auto-loads <env>.yaml next to the base file."""
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    create_yaml_file(temp_config_dir, 'test.yaml', {'app': {'env': 'test'}, 'run': {'precision': 'f64'}})
    set_env({'APP_ENV': 'test'})

    settings = ConfigLoader(project_root=tmp_path).get_settings()

    assert settings.app.env == 'test'
    assert settings.run.precision == 'f64'


def test_missing_env_file_only_warns(tmp_path, create_yaml_file, temp_config_dir, set_env, dummy_config_content):
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)
    set_env({'APP_ENV': 'prod'})

    with pytest.warns(UserWarning, match='prod.yaml'):
        settings = ConfigLoader(project_root=tmp_path).get_settings()

    assert settings.run.frames == 2


def test_config_loader_env_var_expansion(tmp_path, create_yaml_file, temp_config_dir, set_env, dummy_config_content):
    """Test that environment variables are expanded correctly."""
    content = dummy_config_content
    content['app']['name'] = '${APP_NAME}'
    content['app']['version'] = '${APP_VERSION:1.0.0}'
    content['run']['data_root'] = '${MMHCO_DATA:data/synth}'
    create_yaml_file(temp_config_dir, 'default.yaml', content)
    set_env({'APP_NAME': 'expanded', 'MMHCO_DATA': '/datasets/bars'})

    settings = ConfigLoader(project_root=tmp_path).get_settings()

    assert settings.app.name == 'expanded'
    assert settings.app.version == '1.0.0'
    assert settings.run.data_root == '/datasets/bars'


def test_config_loader_env_var_expansion_missing_required(tmp_path, create_yaml_file, temp_config_dir):
    """Test that missing required environment variables raise an error."""
    create_yaml_file(temp_config_dir, 'default.yaml', {'app': {'name': '${MISSING_VAR}', 'env': 'dev'}})

    with pytest.raises(ValueError, match="Environment variable 'MISSING_VAR' is not defined"):
        ConfigLoader(project_root=tmp_path)


def test_config_loader_validation_failure(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    """A resolution that does not survive two 2x downsamplings is rejected."""
    content = dummy_config_content
    content['run']['resolution'] = 18
    create_yaml_file(temp_config_dir, 'default.yaml', content)

    with pytest.raises(ValueError, match='validating the configuration'):
        ConfigLoader(project_root=tmp_path)


def test_unknown_key_is_rejected(tmp_path, create_yaml_file, temp_config_dir, dummy_config_content):
    create_yaml_file(temp_config_dir, 'default.yaml', dummy_config_content)

    with pytest.raises(ValueError, match='extra_forbidden'):
        ConfigLoader(project_root=tmp_path, overrides={'run.learning_rate': 0.1})


def test_config_loader_non_dict_yaml(tmp_path, temp_config_dir):
    """Test handling of a YAML file that isn't a top-level dictionary."""
    (temp_config_dir / 'default.yaml').write_text('- item1\n- item2')

    with pytest.raises(ValueError, match='Config file must contain a mapping at top-level'):
        ConfigLoader(project_root=tmp_path)


def test_config_loader_get_settings_not_initialized(tmp_path):
    """Test that get_settings raises RuntimeError if settings are not initialized."""
    with patch.object(ConfigLoader, '_load_config', MagicMock()):
        with patch.object(ConfigLoader, '_expand_env_vars', MagicMock()):
            with patch.object(ConfigLoader, '_validate_and_expose', MagicMock()):
                loader = ConfigLoader(project_root=tmp_path)

                with pytest.raises(RuntimeError, match='Settings not initialized'):
                    loader.get_settings()


def test_shipped_configs_validate():
    """Every YAML under app/config loads as an override of the real default.yaml."""
    project_root = Path(__file__).resolve().parents[1]

    for name in ('dev', 'prod', 'test', 'full'):
        path = project_root / 'app' / 'config' / f'{name}.yaml'
        settings = ConfigLoader(project_root=str(project_root), config_path=str(path)).get_settings()
        assert settings.run.resolution % 4 == 0
