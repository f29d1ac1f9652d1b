"""
Executable invariant suites behind `mmhco verify`.

    spectral  DCT round trip, isometry, brute-force oracle, heat-conduction physics
    grad      central-difference checks of every differentiable op and a miniature pipeline
    fusion    exact strategy values, routing consistency, Gumbel sampling frequencies
    ingest    event-count conservation and on-disk round trip

`dct_scale` multiplies the DCT matrices in the spectral suite; any value other
than 1.0 is a fault injection and must make the isometry checks fail.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time

from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import pandas as pd

from app.config.logger.logger import new_run_id
from app.engine import functional as F
from app.engine.autodiff import Parameter, fd_check, no_grad
from app.engine.tensor import DType, Tensor
from app.models.fusion import MSF, STRATEGIES, PolicyRouter, gumbel_softmax, mcf, mdf
from app.models.head import ClassifierHead, loss, one_hot_labels
from app.models.mmhco import BackboneConfig
from app.models.network import MMHCOHAR
from app.models.spectral import FrequencyGrid, build_decay, dct2, hco_forward, idct2
from app.services.events.models import EventStream
from app.services.events.readers import parse_events, write_events_csv
from app.services.events.stacking import count_events, stack_events


logger = logging.getLogger(__name__)

Suite = Literal['grad', 'spectral', 'fusion', 'ingest', 'all']
SUITES: tuple[str, ...] = ('spectral', 'grad', 'fusion', 'ingest')

ROUND_TRIP_TOL = 1e-6
ORACLE_TOL = 1e-10
SEMIGROUP_TOL = 1e-5
GRAD_TOL = 1e-4
GRAD_TOL_F32 = 1e-2
PIPELINE_GRAD_TOL = 1e-3
FD_STEP_F32 = 1e-3
GUMBEL_TOL = 0.01


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ''


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    'suite': c.suite,
                    'check': c.name,
                    'status': 'PASS' if c.passed else 'FAIL',
                    'value': c.value,
                    'threshold': c.threshold,
                    'seconds': round(c.seconds, 3),
                }
                for c in self.checks
            ]
        )

    def to_table(self) -> str:
        summary = f'{len(self.checks) - len(self.failures)}/{len(self.checks)} checks passed'
        return self.to_frame().to_string(index=False) + '\n\n' + summary


class _Recorder:
    def __init__(self, suite: str, report: VerificationReport):
        self.suite = suite
        self.report = report

    def check(self, name: str, measure: Callable[[], float], threshold: float, below: bool = True) -> CheckResult:
        """Run `measure`; pass when value < threshold (or value >= threshold when not `below`)."""
        start = time.perf_counter()
        try:
            value = float(measure())
            passed = math.isfinite(value) and (value < threshold if below else value >= threshold)
            detail = ''
        except Exception as e:  # a crashing check is a failed check
            value, passed, detail = float('nan'), False, f'{type(e).__name__}: {e}'
        result = CheckResult(self.suite, name, passed, value, threshold, time.perf_counter() - start, detail)
        self.report.checks.append(result)
        log = logger.info if passed else logger.error
        log(f'[{self.suite}] {name}: {"PASS" if passed else "FAIL"} (value={value:.3e}, threshold={threshold:.1e}) {detail}')
        return result


def dct2_oracle(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II of a single [H, W] array by the double sum."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            su = math.sqrt((1 if u == 0 else 2) / h)
            sv = math.sqrt((1 if v == 0 else 2) / w)
            total = 0.0
            for i in range(h):
                for j in range(w):
                    total += x[i, j] * math.cos(math.pi * (2 * i + 1) * u / (2 * h)) * math.cos(
                        math.pi * (2 * j + 1) * v / (2 * w)
                    )
            out[u, v] = su * sv * total
    return out


def _random_k(rng: np.random.Generator, c: int, h: int, w: int) -> Tensor:
    return Tensor(rng.uniform(0.01, 2.0, size=(c, h, w)))


def _heat(u: Tensor, k: Tensor, t: float, scale: float) -> Tensor:
    return hco_forward(u, build_decay(FrequencyGrid.build(*u.shape[-2:]), k, t), scale)


def run_spectral_suite(report: VerificationReport, seed: int = 0, dct_scale: float = 1.0, shapes: int = 100) -> None:
    rec = _Recorder('spectral', report)
    rng = np.random.default_rng(seed)
    samples = [Tensor(rng.standard_normal(tuple(rng.integers(1, 33, size=2)))) for _ in range(shapes)]

    rec.check(
        'round_trip',
        lambda: max(float(np.abs(idct2(dct2(x, dct_scale), dct_scale).data - x.data).max()) for x in samples),
        ROUND_TRIP_TOL,
    )
    rec.check(
        'isometry',
        lambda: max(abs(np.linalg.norm(dct2(x, dct_scale).data) - np.linalg.norm(x.data)) for x in samples),
        ROUND_TRIP_TOL,
    )
    oracle_inputs = [rng.standard_normal(s) for s in ((2, 2), (4, 4))]
    rec.check(
        'oracle_2x2_4x4',
        lambda: max(float(np.abs(dct2(Tensor(x), dct_scale).data - dct2_oracle(x)).max()) for x in oracle_inputs),
        ORACLE_TOL,
    )

    draws = []
    for _ in range(50):
        c, h, w = (int(v) for v in rng.integers(1, 9, size=3))
        draws.append(
            (
                Tensor(rng.standard_normal((2, c, h, w))),
                _random_k(rng, c, h, w),
                float(rng.uniform(0.05, 2.0)),
                float(rng.uniform(0.05, 2.0)),
            )
        )

    def identity_error() -> float:
        return max(
            float(np.abs(_heat(u, Tensor(np.zeros(k.shape)), t1, dct_scale).data - u.data).max())
            for u, k, t1, _ in draws
        )

    def mean_error() -> float:
        return max(
            float(np.abs(_heat(u, k, t1, dct_scale).data.mean(axis=(2, 3)) - u.data.mean(axis=(2, 3))).max())
            for u, k, t1, _ in draws
        )

    def energy_violations() -> float:
        return float(
            sum(np.linalg.norm(_heat(u, k, t1, dct_scale).data) > np.linalg.norm(u.data) for u, k, t1, _ in draws)
        )

    def semigroup_error() -> float:
        return max(
            float(
                np.abs(
                    _heat(_heat(u, k, t1, dct_scale), k, t2, dct_scale).data - _heat(u, k, t1 + t2, dct_scale).data
                ).max()
            )
            for u, k, t1, t2 in draws
        )

    with no_grad():
        rec.check('hco_zero_k_identity', identity_error, ROUND_TRIP_TOL)
        rec.check('hco_mean_conservation', mean_error, ROUND_TRIP_TOL)
        rec.check('hco_energy_non_expansion', energy_violations, 0.5)
        rec.check('hco_semigroup', semigroup_error, SEMIGROUP_TOL)


def _probe(
    rng: np.random.Generator, shape: tuple[int, ...], low: float | None = None, dtype: DType = DType.F64
) -> Parameter:
    data = rng.uniform(low, 1.0, size=shape) if low is not None else rng.standard_normal(shape)
    return Parameter(data, dtype=dtype)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return F.reduce('sum', F.mul(out, Tensor(weights.astype(out.data.dtype))))


def _op_cases(
    rng: np.random.Generator, dtype: DType = DType.F64
) -> dict[str, tuple[Callable[..., Tensor], list[Parameter]]]:
    """Name -> (forward over the probes, probes); the scalar is a random weighting of the output."""
    probe = partial(_probe, rng, dtype=dtype)
    a, b = probe((3, 4)), probe((3, 4))
    pos = probe((3, 4), low=0.5)
    img = probe((2, 3, 5, 5))
    dw = probe((3, 3, 3))
    cw, cb = probe((4, 3, 3, 3)), probe((4,))
    gamma, beta = probe((4,), low=0.5), probe((4,))
    bn_gamma, bn_beta = probe((3,), low=0.5), probe((3,))
    running = (
        Parameter(np.zeros(3), dtype=dtype, trainable=False),
        Parameter(np.ones(3), dtype=dtype, trainable=False),
    )
    W, bias = probe((4, 5)), probe((5,))
    field_ = probe((2, 3, 4, 6))
    k = probe((3, 4, 6), low=0.1)
    logits = probe((4, 3))

    def gumbel_soft():
        return gumbel_softmax(logits, 0.7, np.random.default_rng(7), hard=False)

    return {
        'add': (lambda: F.add(a, b), [a, b]),
        'sub': (lambda: F.sub(a, b), [a, b]),
        'mul': (lambda: F.mul(a, b), [a, b]),
        'sigmoid': (lambda: F.sigmoid(a), [a]),
        'silu': (lambda: F.silu(a), [a]),
        'gelu': (lambda: F.gelu(a), [a]),
        'exp': (lambda: F.exp(a), [a]),
        'log': (lambda: F.log(pos), [pos]),
        'softplus': (lambda: F.softplus(a), [a]),
        'clamp_min': (lambda: F.clamp_min(pos, 0.25), [pos]),
        'reshape_transpose': (lambda: F.transpose(F.reshape(a, (4, 3)), (1, 0)), [a]),
        'concat_split': (lambda: F.concat(F.split(F.concat([a, b], axis=-1), [3, 5], axis=-1)[::-1], axis=-1), [a, b]),
        'expand': (lambda: F.expand(F.reshape(F.reduce('mean', a, axis=1), (3, 1)), (3, 4)), [a]),
        'reduce_sum': (lambda: F.reduce('sum', a, axis=0, keepdims=True), [a]),
        'reduce_max': (lambda: F.reduce('max', a, axis=1), [a]),
        'linear': (lambda: F.linear(F.reshape(a, (3, 4)), W, bias), [a, W, bias]),
        'softmax': (lambda: F.softmax(a, axis=-1), [a]),
        'log_softmax': (lambda: F.log_softmax(a, axis=-1), [a]),
        'layernorm': (lambda: F.layernorm(a, gamma, beta), [a, gamma, beta]),
        'batchnorm2d': (
            lambda: F.batchnorm2d(img, bn_gamma, bn_beta, running[0], running[1], True),
            [img, bn_gamma, bn_beta],
        ),
        'depthwise_conv2d': (lambda: F.depthwise_conv2d(img, dw, stride=2), [img, dw]),
        'conv2d': (lambda: F.conv2d(img, cw, cb, stride=2, padding=1), [img, cw, cb]),
        'dct2_idct2': (lambda: idct2(F.mul(dct2(field_), dct2(field_))), [field_]),
        'hco': (lambda: hco_forward(field_, build_decay(FrequencyGrid.build(4, 6), k)), [field_, k]),
        'gumbel_soft': (gumbel_soft, [logits]),
    }


def _mini_model(seed: int) -> MMHCOHAR:
    config = BackboneConfig(
        stage_depths=(1, 1, 1, 1), base_channels=8, embed_dim=8, resolution=16, precision=DType.F64
    )
    # straight-through routing is biased by construction, so the pipeline is probed with a fixed strategy
    return MMHCOHAR(config, 4, np.random.default_rng(seed), fusion_mode='msf')


def run_grad_suite(report: VerificationReport, seed: int = 0, coords_per_param: int = 3) -> None:
    rec = _Recorder('grad', report)
    rng = np.random.default_rng(seed)

    precisions = [('op', DType.F64, 1e-6, GRAD_TOL), ('op_f32', DType.F32, FD_STEP_F32, GRAD_TOL_F32)]
    for prefix, dtype, step, tolerance in precisions:
        for name, (forward, probes) in _op_cases(rng, dtype).items():
            weights = rng.standard_normal(forward().shape)

            def measure(forward=forward, probes=probes, weights=weights, step=step) -> float:
                f = lambda: _weighted_sum(forward(), weights)  # noqa: E731
                return max(fd_check(f, p, h=step, max_coords=8, seed=seed) for p in probes)

            rec.check(f'{prefix}.{name}', measure, tolerance)

    model = _mini_model(seed)
    rgb = Tensor(rng.uniform(0, 1, size=(2, 1, 3, 16, 16)))
    evt = Tensor(rng.uniform(0, 1, size=(2, 1, 3, 16, 16)))
    y = one_hot_labels([1, 3], 4)

    def pipeline_loss() -> Tensor:
        return loss(model(rgb, evt, np.random.default_rng(seed)).prediction, y)

    def measure_pipeline() -> float:
        worst = 0.0
        for i, (name, p) in enumerate(model.named_parameters()):
            if p.trainable:
                worst = max(worst, fd_check(pipeline_loss, p, max_coords=coords_per_param, seed=seed + i))
        return worst

    rec.check('pipeline.mini', measure_pipeline, PIPELINE_GRAD_TOL)


def run_fusion_suite(report: VerificationReport, seed: int = 0, draws: int = 100_000) -> None:
    rec = _Recorder('fusion', report)
    rng = np.random.default_rng(seed)
    f_r, f_e = Tensor([[2.0]]), Tensor([[3.0]])

    rec.check('mcf_exact', lambda: float(np.abs(mcf(f_r, f_e).data - [[2.0, 3.0]]).max()), 1e-12)
    rec.check('mdf_exact', lambda: float(np.abs(mdf(f_r, f_e).data - [[-4.0, -3.0]]).max()), 1e-12)

    def msf_error() -> float:
        module = MSF(1, rng, DType.F64)
        module.conv.weight.assign(np.array([[[[0.5]], [[-0.5]]], [[[0.0]], [[1.0]]]]))
        module.conv.bias.assign(np.array([0.0, -3.0]))
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
        expected = [[sig(0.5 * 2 - 0.5 * 3) * 2, sig(3 - 3) * 3]]
        return float(np.abs(module(f_r, f_e).data - expected).max())

    rec.check('msf_exact', msf_error, 1e-12)

    def routed_vs_selected() -> float:
        router = PolicyRouter(6, rng, DType.F64).eval()
        a, b = Tensor(rng.standard_normal((16, 6))), Tensor(rng.standard_normal((16, 6)))
        with no_grad():
            bundle = router(a, b)
            worst = 0.0
            for i, row in enumerate(bundle.selected()):
                expected = router.strategy(STRATEGIES[row], a, b).data[i]
                worst = max(worst, float(np.abs(bundle.fused.data[i] - expected).max()))
        return worst

    rec.check('routed_equals_selected', routed_vs_selected, 1e-12)

    def gumbel_frequency_error() -> float:
        logits = np.array([0.5, -0.3, 1.2])
        with no_grad():
            sample = gumbel_softmax(Tensor(np.tile(logits, (draws, 1))), 1.0, np.random.default_rng(seed)).data
        expected = np.exp(logits) / np.exp(logits).sum()
        return float(np.abs(sample.mean(axis=0) - expected).max())

    rec.check('gumbel_frequencies', gumbel_frequency_error, GUMBEL_TOL)

    def head_probabilities() -> float:
        head = ClassifierHead(6, 5, rng, DType.F64)
        with no_grad():
            probs = head(Tensor(rng.standard_normal((8, 6)))).probs.data
        return float(np.abs(probs.sum(axis=-1) - 1.0).max())

    rec.check('head_probabilities_sum_to_one', head_probabilities, 1e-12)


def _random_stream(rng: np.random.Generator, n: int, height: int, width: int, t_max: int) -> EventStream:
    return EventStream(
        t=rng.integers(0, t_max, size=n),
        x=rng.integers(0, width, size=n),
        y=rng.integers(0, height, size=n),
        p=rng.choice(np.array([-1, 1]), size=n),
    ).sorted()


def run_ingest_suite(report: VerificationReport, seed: int = 0, streams: int = 1000) -> None:
    rec = _Recorder('ingest', report)
    rng = np.random.default_rng(seed)

    def conservation_violations() -> float:
        bad = 0
        for _ in range(streams):
            frames = int(rng.integers(1, 6))
            timestamps = np.cumsum(rng.integers(1, 1000, size=frames)).tolist()
            stream = _random_stream(rng, int(rng.integers(0, 200)), 8, 8, timestamps[-1] + 500)
            counts = count_events(stream, timestamps, 8, 8)
            bad += int(counts.total != counts.in_window or counts.in_window + counts.dropped != len(stream))
            stacked = stack_events(stream, timestamps, 8, 8)
            bad += int(stacked.shape != (frames, 3, 8, 8) or stacked.min() < 0 or stacked.max() > 1)
        return float(bad)

    rec.check('count_conservation', conservation_violations, 0.5)

    def disk_round_trip_mismatches() -> float:
        mismatches = 0
        with tempfile.TemporaryDirectory() as tmp:
            for i in range(20):
                stream = _random_stream(rng, int(rng.integers(0, 300)), 16, 24, 10**6)
                path = write_events_csv(stream, Path(tmp) / f'events_{i}.csv')
                loaded = parse_events(path, width=24, height=16)
                mismatches += int(
                    not all(np.array_equal(getattr(stream, c), getattr(loaded, c)) for c in ('t', 'x', 'y', 'p'))
                )
        return float(mismatches)

    rec.check('disk_round_trip', disk_round_trip_mismatches, 0.5)


def verify(suite: Suite = 'all', seed: int = 0, dct_scale: float = 1.0) -> VerificationReport:
    """Run one suite (or all of them) and return the report; never raises for failed checks."""
    new_run_id('verify')
    report = VerificationReport()
    selected = SUITES if suite == 'all' else (suite,)
    runners = {
        'spectral': lambda: run_spectral_suite(report, seed, dct_scale),
        'grad': lambda: run_grad_suite(report, seed),
        'fusion': lambda: run_fusion_suite(report, seed),
        'ingest': lambda: run_ingest_suite(report, seed),
    }
    for name in selected:
        logger.info(f'Running {name} suite')
        runners[name]()
    logger.info(f'Verification: {len(report.checks) - len(report.failures)}/{len(report.checks)} checks passed')
    return report
