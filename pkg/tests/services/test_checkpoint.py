import io
import struct

import numpy as np
import pytest

from app.engine.tensor import DType
from app.models.mmhco import BackboneConfig
from app.models.network import MMHCOHAR
from app.services.checkpoint import (
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    snapshot,
)
from app.utils.exceptions import CheckpointError, ConfigHashMismatchError


CONFIG = BackboneConfig(stage_depths=(1, 1, 1, 1), base_channels=8, embed_dim=4, resolution=16, precision=DType.F64)


def _model(seed: int = 0, num_classes: int = 4) -> MMHCOHAR:
    return MMHCOHAR(CONFIG, num_classes, np.random.default_rng(seed))


def _snapshot(model: MMHCOHAR, rng=None) -> Checkpoint:
    return snapshot(model, {'run': {'seed': 0}, 'class_names': ['a', 'b', 'c', 'd']}, model.architecture_hash(), 12, rng)


def test_header_layout():
    data = encode_checkpoint(Checkpoint(config={}, architecture_hash='ab', step=3, parameters={}))
    assert data[:4] == MAGIC
    assert struct.unpack('<I', data[4:8]) == (1,)


def test_save_load_save_is_byte_identical(tmp_path):
    model = _model()
    first = save_checkpoint(tmp_path / 'a.mmhc', _snapshot(model, np.random.default_rng(5)))
    loaded = load_checkpoint(first)
    second = save_checkpoint(tmp_path / 'b.mmhc', loaded)
    assert first.read_bytes() == second.read_bytes()
    assert not (tmp_path / 'a.mmhc.tmp').exists()


def test_round_trip_preserves_values_and_metadata(tmp_path):
    model = _model()
    rng = np.random.default_rng(5)
    rng.random(3)
    path = save_checkpoint(tmp_path / 'model.mmhc', _snapshot(model, rng))
    loaded = load_checkpoint(path)
    assert loaded.step == 12
    assert loaded.config['class_names'] == ['a', 'b', 'c', 'd']
    assert loaded.architecture_hash == model.architecture_hash()
    state = model.state_dict()
    assert list(loaded.parameters) == list(state)
    assert all(np.array_equal(loaded.parameters[k], state[k]) for k in state)
    assert loaded.restore_rng().random() == rng.random()


def test_apply_restores_a_fresh_model(tmp_path):
    source = _model(seed=0)
    path = save_checkpoint(tmp_path / 'model.mmhc', _snapshot(source))
    target = _model(seed=1)
    load_checkpoint(path).apply_to(target, expected_hash=target.architecture_hash())
    assert all(np.array_equal(a, b) for a, b in zip(source.state_dict().values(), target.state_dict().values()))


def test_hash_mismatch_is_refused_unless_forced(tmp_path):
    checkpoint = _snapshot(_model())
    checkpoint.architecture_hash = 'deadbeef'
    target = _model()
    with pytest.raises(ConfigHashMismatchError):
        checkpoint.apply_to(target, expected_hash=target.architecture_hash())
    checkpoint.apply_to(target, expected_hash=target.architecture_hash(), force=True)


def test_shape_mismatch_is_a_checkpoint_error():
    checkpoint = _snapshot(_model(num_classes=4))
    with pytest.raises(CheckpointError):
        checkpoint.apply_to(_model(num_classes=5), force=True)


def test_float32_parameters_round_trip():
    checkpoint = Checkpoint(config={}, architecture_hash='x', step=0, parameters={'w': np.arange(6, dtype=np.float32).reshape(2, 3)})
    decoded = decode_checkpoint(io.BytesIO(encode_checkpoint(checkpoint)))
    assert decoded.parameters['w'].dtype == np.float32
    assert decoded.parameters['w'].tolist() == [[0, 1, 2], [3, 4, 5]]


def test_unsupported_dtype_is_rejected():
    checkpoint = Checkpoint(config={}, architecture_hash='x', step=0, parameters={'w': np.zeros(2, dtype=np.int64)})
    with pytest.raises(CheckpointError):
        encode_checkpoint(checkpoint)


@pytest.mark.parametrize('mutate, message', [
    (lambda b: b'XXXX' + b[4:], 'bad magic'),
    (lambda b: b[:4] + struct.pack('<I', 9) + b[8:], 'version'),
    (lambda b: b[:-3], 'truncated'),
    (lambda b: b + b'\x00', 'trailing'),
])
def test_corrupt_files_raise(tmp_path, mutate, message):
    data = encode_checkpoint(_snapshot(_model()))
    path = tmp_path / 'bad.mmhc'
    path.write_bytes(mutate(data))
    with pytest.raises(CheckpointError) as exc_info:
        load_checkpoint(path)
    assert message in exc_info.value.detail


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / 'nope.mmhc')
