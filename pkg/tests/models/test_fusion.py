import numpy as np
import pytest

from app.engine.autodiff import Parameter, fd_check, no_grad
from app.engine import functional as F
from app.engine.tensor import DType, Tensor
from app.models.fusion import (
    MSF,
    STRATEGIES,
    PolicyRouter,
    add_fusion,
    gumbel_softmax,
    mcf,
    mdf,
    route_histogram,
)
from app.utils.exceptions import InvalidParameterError, ShapeMismatchError


def _features(rng, b=4, c=3):
    return Tensor(rng.standard_normal((b, c))), Tensor(rng.standard_normal((b, c)))


def test_mcf_concatenates():
    out = mcf(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
    assert out.data.tolist() == [[1.0, 2.0, 3.0, 4.0]]


def test_mdf_removes_shared_component():
    out = mdf(Tensor([[2.0]]), Tensor([[3.0]]))
    assert out.data.tolist() == [[-4.0, -3.0]]


def test_add_fusion_keeps_width():
    out = add_fusion(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
    assert out.data.tolist() == [[4.0, 6.0]]


def test_fusions_reject_mismatched_shapes():
    with pytest.raises(ShapeMismatchError):
        mcf(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))
    with pytest.raises(ShapeMismatchError):
        mdf(Tensor(np.zeros((2, 2))), Tensor(np.zeros((1, 2))))


def test_msf_with_zero_conv_weighs_each_modality_by_half(rng):
    module = MSF(2, rng, DType.F64)
    module.conv.weight.assign(np.zeros_like(module.conv.weight.data))
    out = module(Tensor([[2.0, 4.0]]), Tensor([[6.0, 8.0]]))
    assert np.allclose(out.data, [[1.0, 2.0, 3.0, 4.0]])


def test_msf_per_channel_weights(rng):
    module = MSF(3, rng, DType.F64, per_channel=True)
    f_r, f_e = _features(rng, b=2, c=3)
    w_r, w_e = module.weights(f_r, f_e)
    assert w_r.shape == w_e.shape == (2, 3)
    assert np.all((w_r.data > 0) & (w_r.data < 1))


def test_gumbel_softmax_hard_is_one_hot(rng):
    sample = gumbel_softmax(Tensor(rng.standard_normal((5, 3))), 1.0, rng)
    assert np.all(sample.data.sum(axis=-1) == 1.0)
    assert set(np.unique(sample.data)) <= {0.0, 1.0}


def test_gumbel_softmax_rejects_bad_temperature(rng):
    with pytest.raises(InvalidParameterError):
        gumbel_softmax(Tensor(np.zeros((1, 3))), 0.0, rng)


@pytest.mark.slow
def test_gumbel_frequencies_follow_softmax():
    logits = np.array([0.5, -0.3, 1.2])
    draws = gumbel_softmax(Tensor(np.tile(logits, (100_000, 1))), 1.0, np.random.default_rng(7)).data
    frequencies = draws.mean(axis=0)
    expected = np.exp(logits) / np.exp(logits).sum()
    assert np.max(np.abs(frequencies - expected)) < 0.01


def test_soft_gumbel_gradient_is_exact():
    logits = Parameter([[0.1, -0.4, 0.7], [1.0, 0.0, -1.0]])
    weights = Tensor([[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]])

    def sampled():
        # fresh generator per call freezes the noise
        soft = gumbel_softmax(logits, 0.5, np.random.default_rng(3), hard=False)
        return F.reduce('sum', F.mul(soft, weights))

    assert fd_check(sampled, logits) < 1e-6


def test_router_rejects_unknown_mode(rng):
    with pytest.raises(InvalidParameterError):
        PolicyRouter(3, rng, mode='sum')
    with pytest.raises(InvalidParameterError):
        PolicyRouter(3, rng, tau=-1.0)


@pytest.mark.parametrize('mode', ['mcf', 'mdf', 'msf'])
def test_fixed_mode_equals_strategy(mode, rng):
    router = PolicyRouter(3, rng, DType.F64, mode=mode)
    f_r, f_e = _features(rng)
    bundle = router(f_r, f_e)
    assert np.allclose(bundle.fused.data, router.strategy(mode, f_r, f_e).data)
    assert bundle.selected().tolist() == [STRATEGIES.index(mode)] * 4


def test_routed_output_equals_selected_strategy_at_inference(rng):
    router = PolicyRouter(3, rng, DType.F64, mode='route').eval()
    f_r, f_e = _features(rng, b=8)
    with no_grad():
        bundle = router(f_r, f_e)
        chosen = bundle.selected()
        assert chosen.tolist() == np.argmax(bundle.route_logits.data, axis=-1).tolist()
        for i, index in enumerate(chosen):
            expected = router.strategy(STRATEGIES[index], f_r, f_e).data[i]
            assert np.allclose(bundle.fused.data[i], expected)


def test_training_route_is_one_hot_and_differentiable(rng):
    router = PolicyRouter(3, rng, DType.F64, mode='route').train()
    f_r, f_e = _features(rng)
    bundle = router(f_r, f_e, rng)
    assert np.all(bundle.route.data.sum(axis=-1) == 1.0)
    assert bundle.fused.requires_grad
    F.reduce('sum', bundle.fused).backward()
    assert np.any(router.fc2.weight.grad != 0)


def test_random_mode_draws_from_generator(rng):
    router = PolicyRouter(3, rng, DType.F64, mode='random')
    f_r, f_e = _features(rng, b=16)
    first = router(f_r, f_e, np.random.default_rng(1)).selected()
    second = router(f_r, f_e, np.random.default_rng(1)).selected()
    assert first.tolist() == second.tolist()
    assert set(first.tolist()) <= {0, 1, 2}


def test_add_mode_halves_width_and_has_no_routes(rng):
    router = PolicyRouter(3, rng, DType.F64, mode='add')
    assert router.out_width == 3
    bundle = router(*_features(rng))
    assert bundle.fused.shape == (4, 3)
    assert bundle.selected().tolist() == [-1] * 4
    assert route_histogram(bundle.route.data) == {'mcf': 0, 'mdf': 0, 'msf': 0}


def test_route_histogram_counts_batches():
    batches = [np.array([[1, 0, 0], [0, 0, 1]]), np.array([[0, 0, 1]]), np.zeros((0, 3))]
    assert route_histogram(batches) == {'mcf': 1, 'mdf': 0, 'msf': 2}


@pytest.mark.parametrize('mode', ['random', 'route'])
def test_router_without_generator_is_reproducible_from_its_seed(mode):
    f_r, f_e = _features(np.random.default_rng(5), b=32)
    selections = []
    for _ in range(2):
        router = PolicyRouter(3, np.random.default_rng(11), DType.F64, mode=mode).train()
        selections.append(router(f_r, f_e).selected().tolist())
    assert selections[0] == selections[1]


def test_inference_route_passes_no_gradient_to_policy(rng):
    router = PolicyRouter(3, rng, DType.F64, mode='route').eval()
    f_r, f_e = (Parameter(t.data) for t in _features(rng, b=6))
    bundle = router(f_r, f_e)

    assert not bundle.route.requires_grad
    F.reduce('sum', bundle.fused).backward()
    assert np.all(router.fc1.weight.grad == 0)
    assert np.all(router.fc2.weight.grad == 0)
    assert np.all(router.fc2.bias.grad == 0)


def test_gumbel_hard_sample_follows_dominant_logit():
    draws = gumbel_softmax(Tensor(np.tile([10.0, -10.0, -10.0], (20_000, 1))), 1.0, np.random.default_rng(0)).data
    assert draws[:, 0].mean() > 0.99


def test_gumbel_equal_logits_pick_uniformly():
    draws = gumbel_softmax(Tensor(np.zeros((30_000, 3))), 1.0, np.random.default_rng(2)).data
    assert np.allclose(draws.mean(axis=0), 1.0 / 3.0, atol=0.02)
