import pytest
from pydantic import ValidationError

from app.config.config_models import (
    AppSettings,
    BaseConfigModel,
    BenchSettings,
    RunConfig,
    Settings,
    SynthSettings,
)


# Test BaseConfigModel for extra="forbid"
def test_base_config_model_forbids_extra_fields():
    class TestModel(BaseConfigModel):
        field1: str

    with pytest.raises(ValidationError) as exc_info:
        TestModel(field1='value', extra_field='forbidden')
    assert 'Extra inputs are not permitted' in str(exc_info.value)


# Test AppSettings
def test_app_settings_valid():
    settings = AppSettings(name='har', env='full', version='1.0.0')
    assert settings.env == 'full'


def test_app_settings_invalid_env():
    with pytest.raises(ValidationError):
        AppSettings(env='staging')


# Test RunConfig
def test_run_config_defaults():
    run = RunConfig()
    assert run.frames == 4
    assert run.batch_size == 8
    assert run.fusion == 'route'
    assert run.loss == 'ce'
    assert run.num_classes is None


@pytest.mark.parametrize('resolution', [6, 18, 30])
def test_run_config_resolution_must_be_divisible_by_four(resolution):
    with pytest.raises(ValidationError, match='divisible by 4'):
        RunConfig(resolution=resolution)


@pytest.mark.parametrize(
    'field, value',
    [
        ('frames', 0),
        ('lr', 0.0),
        ('weight_decay', -1e-4),
        ('num_classes', 1),
        ('gumbel_tau', 0.0),
        ('fusion', 'concat'),
        ('precision', 'f16'),
        ('modality', 'depth'),
    ],
)
def test_run_config_rejects_out_of_range(field, value):
    with pytest.raises(ValidationError):
        RunConfig(**{field: value})


def test_run_config_rejects_empty_stage():
    with pytest.raises(ValidationError, match='at least one block'):
        RunConfig(stage_depths=[2, 0, 1, 1])


def test_run_config_accepts_additive_fusion_ablation():
    assert RunConfig(fusion='add').fusion == 'add'


# Test SynthSettings
def test_synth_settings_rejects_unknown_direction():
    with pytest.raises(ValidationError, match='unknown bar directions'):
        SynthSettings(classes=['left', 'diagonal'])


def test_synth_settings_rejects_duplicate_classes():
    with pytest.raises(ValidationError, match='unique'):
        SynthSettings(classes=['left', 'left'])


def test_synth_settings_split_fractions_sum_to_one():
    with pytest.raises(ValidationError, match='sum to 1'):
        SynthSettings(split_fractions=(0.5, 0.2, 0.2))
    assert SynthSettings(split_fractions=(0.8, 0.0, 0.2)).split_fractions == (0.8, 0.0, 0.2)


def test_synth_event_dropout_must_stay_below_one():
    with pytest.raises(ValidationError):
        SynthSettings(event_dropout=1.0)


# Test BenchSettings
def test_bench_settings_need_three_resolutions():
    with pytest.raises(ValidationError):
        BenchSettings(resolutions=[32, 64])


# Test Settings
def test_settings_nested_sections():
    settings = Settings(run={'frames': 8, 'resolution': 224}, synth={'frames': 8})
    assert settings.run.frames == 8
    assert settings.synth.frames == 8
    assert settings.bench.runs == 10


def test_settings_forbids_unknown_section():
    with pytest.raises(ValidationError):
        Settings(model={'name': 'x'})


def test_logging_file_is_not_a_run_setting():
    # the logger reads LOGGING_CONFIG_FILE from the process environment
    with pytest.raises(ValidationError):
        Settings(logging_config_file='app/config/logger/logger.yaml')
