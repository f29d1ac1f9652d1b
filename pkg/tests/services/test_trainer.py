import json

import numpy as np
import pandas as pd
import pytest

from app.config.config_models import RunConfig, SynthSettings
from app.engine import functional as F
from app.services import trainer
from app.services.checkpoint import load_checkpoint
from app.services.events.dataset import load_split_arrays
from app.services.events.synth import synth_generate
from app.utils.exceptions import ClassCountMismatchError, DatasetError, TrainingDivergedError


def _tiny(**updates) -> RunConfig:
    base = dict(
        frames=2, resolution=16, stage_depths=[1, 1, 1, 1], channels=8, embed_dim=8,
        epochs=2, batch_size=4, precision='f64', lr=0.01,
    )
    return RunConfig(**{**base, **updates})


@pytest.fixture(scope='module')
def trained(synth_root, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp('train')
    return trainer.train(_tiny(), data_root=synth_root, out_dir=out_dir)


def test_iterate_batches_covers_every_index_once():
    batches = list(trainer.iterate_batches(10, 4, np.random.default_rng(0)))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_iterate_batches_without_rng_is_ordered():
    assert np.concatenate(list(trainer.iterate_batches(5, 2))).tolist() == [0, 1, 2, 3, 4]


def test_build_model_is_deterministic_in_the_seed(tiny_run):
    a = trainer.build_model(tiny_run, 4)
    b = trainer.build_model(tiny_run, 4)
    c = trainer.build_model(tiny_run.model_copy(update={'seed': tiny_run.seed + 1}), 4)
    first = dict(a.named_parameters())
    assert all(np.array_equal(p.data, first[name].data) for name, p in b.named_parameters())
    assert any(not np.array_equal(p.data, first[name].data) for name, p in c.named_parameters() if p.trainable)


def test_backbone_config_follows_run(tiny_run):
    config = trainer.backbone_config(tiny_run)
    assert config.stage_depths == (1, 1, 1, 1)
    assert config.base_channels == 8
    assert config.resolution == 16


def test_resolve_classes_rejects_a_wrong_count(synth_root):
    assert trainer.resolve_classes(synth_root, _tiny()) == ['left', 'right', 'up', 'down']
    with pytest.raises(ClassCountMismatchError):
        trainer.resolve_classes(synth_root, _tiny(num_classes=7))


def test_frame_count_mismatch_is_a_dataset_error(synth_root):
    with pytest.raises(DatasetError):
        trainer._load_split(synth_root, 'train', _tiny(frames=3))


def test_predict_restores_training_mode(synth_root, tiny_run):
    model = trainer.build_model(tiny_run, 4)
    arrays = load_split_arrays(synth_root, 'val', size=16, dtype=np.float64)
    logits, routes, mean_loss = trainer.predict(model, arrays, batch_size=3)
    assert model.training
    assert logits.shape == (len(arrays), 4)
    assert routes.shape == (len(arrays), 3)
    assert np.all(routes.sum(axis=1) == 1)
    assert np.isfinite(mean_loss)


def test_eval_result_report_counts_classes():
    logits = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 2.0, 0.0]])
    routes = np.array([[1, 0, 0], [0, 0, 1], [0, 0, 1]])
    result = trainer.EvalResult('test', ['a', 'b', 'c'], logits, np.array([0, 1, 0]), routes, loss=0.5)
    assert result.top1 == pytest.approx(2 / 3)
    assert result.top5 == 1.0
    assert result.confusion.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 0]]
    report = result.report()
    assert report['per_class_accuracy'] == {'a': 0.5, 'b': 1.0, 'c': None}
    assert report['route_histogram'] == {'mcf': 1, 'mdf': 0, 'msf': 2}


@pytest.mark.unit
def test_non_finite_loss_raises_with_gradient_norms(synth_root, tmp_path, monkeypatch):
    original = trainer.loss

    def poisoned(prediction, y, mode='ce'):
        return F.mul(original(prediction, y, mode), float('nan'))

    monkeypatch.setattr(trainer, 'loss', poisoned)
    with pytest.raises(TrainingDivergedError) as info:
        trainer.train(_tiny(epochs=1), data_root=synth_root, out_dir=tmp_path)
    assert info.value.epoch == 1
    assert info.value.batch_index == 0
    assert info.value.grad_norms


@pytest.mark.integration
@pytest.mark.slow
def test_train_writes_metrics_and_checkpoints(trained):
    out = trained.out_dir
    for name in ('metrics.csv', 'metrics.png', trainer.BEST_CHECKPOINT, trainer.LAST_CHECKPOINT):
        assert (out / name).is_file()
    frame = pd.read_csv(trained.metrics_csv)
    assert list(frame.columns) == trainer.METRIC_COLUMNS
    assert frame['epoch'].tolist() == [1, 2]
    # 24 training samples per epoch, each routed exactly once
    assert (frame[['route_mcf', 'route_mdf', 'route_msf']].sum(axis=1) == 24).all()
    assert trained.best_val_top1 == max(m.val_top1 for m in trained.history)


@pytest.mark.integration
@pytest.mark.slow
def test_best_checkpoint_records_the_run(trained):
    checkpoint = load_checkpoint(trained.best_checkpoint)
    assert checkpoint.config['class_names'] == ['left', 'right', 'up', 'down']
    assert checkpoint.config['metrics']['epoch'] == trained.best_epoch
    assert checkpoint.config['run']['channels'] == 8


@pytest.mark.integration
@pytest.mark.slow
def test_evaluate_writes_reports(trained, synth_root, tmp_path):
    result = trainer.evaluate(trained.best_checkpoint, data_root=synth_root, split='test', out_dir=tmp_path)
    assert result.num_samples == 12
    assert 0.0 <= result.top1 <= result.top5 <= 1.0
    assert result.confusion.sum() == 12
    for name in ('test_per_class.csv', 'test_confusion.csv', 'test_confusion.png', 'test_report.json'):
        assert (tmp_path / name).is_file()
    report = json.loads((tmp_path / 'test_report.json').read_text())
    assert report['num_samples'] == 12
    assert sum(report['route_histogram'].values()) == 12


@pytest.mark.integration
@pytest.mark.slow
def test_evaluate_is_deterministic(trained, synth_root, tmp_path):
    first = trainer.evaluate(trained.best_checkpoint, data_root=synth_root, split='val', out_dir=tmp_path / 'a')
    second = trainer.evaluate(trained.best_checkpoint, data_root=synth_root, split='val', out_dir=tmp_path / 'b')
    assert np.array_equal(first.logits, second.logits)


@pytest.mark.integration
@pytest.mark.slow
def test_evaluate_rejects_a_dataset_with_other_classes(trained, tmp_path):
    (tmp_path / 'classes.txt').write_text('a\nb\n')
    with pytest.raises(ClassCountMismatchError):
        trainer.evaluate(trained.best_checkpoint, data_root=tmp_path, split='test', out_dir=tmp_path)


@pytest.mark.integration
def test_same_seed_gives_identical_first_epoch_loss(synth_root, tmp_path):
    first = trainer.train(_tiny(epochs=1), data_root=synth_root, out_dir=tmp_path / 'a')
    second = trainer.train(_tiny(epochs=1), data_root=synth_root, out_dir=tmp_path / 'b')
    other = trainer.train(_tiny(epochs=1, seed=5), data_root=synth_root, out_dir=tmp_path / 'c')
    assert first.history[0].train_loss == second.history[0].train_loss
    assert first.history[0].train_loss != other.history[0].train_loss


# 40 clips per class: 24 train, 4 val and 12 test
BENCH_SYNTH = dict(frames=2, height=16, width=16, samples_per_class=40)
BENCH_RUN = dict(epochs=20, batch_size=8, lr=0.05, precision='f32')


class AblationRuns:
    """Trains each configuration once per module and keeps its train/test top-1."""

    def __init__(self, root, out_dir):
        self.root = root
        self.out_dir = out_dir
        self.results: dict[str, dict[str, float]] = {}

    def top1(self, name: str, **updates) -> dict[str, float]:
        if name not in self.results:
            result = trainer.train(_tiny(**{**BENCH_RUN, **updates}), data_root=self.root, out_dir=self.out_dir / name)
            self.results[name] = {
                split: trainer.evaluate(
                    result.best_checkpoint, data_root=self.root, split=split, out_dir=self.out_dir / name / split
                ).top1
                for split in ('train', 'test')
            }
        return self.results[name]


@pytest.fixture(scope='module')
def clean_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp('clean_bars')
    synth_generate(SynthSettings(**BENCH_SYNTH), root, seed=1)
    return AblationRuns(root, tmp_path_factory.mktemp('clean_runs'))


@pytest.fixture(scope='module')
def noisy_rgb_runs(tmp_path_factory):
    """RGB frames drowned in noise; events thinned and sprinkled with background activity."""
    root = tmp_path_factory.mktemp('noisy_bars')
    settings = SynthSettings(**BENCH_SYNTH, rgb_noise=0.6, event_dropout=0.5, event_noise_rate=0.05)
    synth_generate(settings, root, seed=2)
    return AblationRuns(root, tmp_path_factory.mktemp('noisy_runs'))


@pytest.mark.integration
@pytest.mark.slow
def test_routed_model_learns_the_bar_directions(clean_runs):
    top1 = clean_runs.top1('route')
    assert top1['train'] >= 0.99
    assert top1['test'] >= 0.95


@pytest.mark.integration
@pytest.mark.slow
def test_fusing_both_modalities_beats_either_alone(noisy_rgb_runs):
    both = noisy_rgb_runs.top1('route')['test']
    event_only = noisy_rgb_runs.top1('event', modality='event')['test']
    rgb_only = noisy_rgb_runs.top1('rgb', modality='rgb')['test']
    assert both - event_only >= 0.02
    assert event_only - rgb_only >= 0.02


@pytest.mark.integration
@pytest.mark.slow
def test_routing_keeps_up_with_random_and_fixed_fusion(noisy_rgb_runs):
    routed = noisy_rgb_runs.top1('route')['test']
    assert routed >= noisy_rgb_runs.top1('fusion_random', fusion='random')['test']
    for strategy in ('mcf', 'mdf', 'msf'):
        assert routed >= noisy_rgb_runs.top1(f'fusion_{strategy}', fusion=strategy)['test'] - 0.02
