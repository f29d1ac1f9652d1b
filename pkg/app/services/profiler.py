"""
Analytic cost accounting and the wall-clock scaling harness.

FLOPs are 2 x multiply-accumulates. Counted exactly: dense and depthwise
convolutions, linear layers, the separable DCT (2*C*H*W*(H+W) per direction)
and the spectral decay (C*H*W). Normalisation, activations, bias additions
and element-wise gating are not counted.
"""

from __future__ import annotations

import logging
import math
import statistics
import time

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd

from threadpoolctl import threadpool_limits

from app.config.config_models import BenchSettings
from app.engine.autodiff import no_grad
from app.engine.tensor import Tensor
from app.models.fusion import FusionMode
from app.models.mmhco import MODALITIES, BackboneConfig
from app.models.spectral import diffuse
from app.utils.exceptions import InvalidParameterError
from app.utils.file_utils import save_text_file, write_key_value_file


logger = logging.getLogger(__name__)

Scope = Literal['frame', 'clip']
BenchKind = Literal['hco', 'attention']

STREAMS = len(MODALITIES)


@dataclass
class LayerCost:
    """
    Cost of one layer group.

    `frame` layers run once per input frame (both streams already included);
    `clip` layers run once per clip (FVE projections, diffusivity, router, head).
    """

    name: str
    flops: int
    params: int
    scope: Scope = 'frame'


@dataclass
class CostReport:
    layers: list[LayerCost]
    frames: int
    tokens: int
    buffers: int = 0
    itemsize: int = 4
    wall_ms: Optional[float] = None

    @property
    def params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def frame_flops(self) -> int:
        """Two-stream backbone FLOPs for a single frame."""
        return sum(layer.flops for layer in self.layers if layer.scope == 'frame')

    @property
    def clip_flops(self) -> int:
        return self.frames * self.frame_flops + sum(layer.flops for layer in self.layers if layer.scope == 'clip')

    @property
    def flops(self) -> int:
        return self.clip_flops

    @property
    def storage_bytes(self) -> int:
        """Raw parameter and buffer payload of a checkpoint."""
        return (self.params + self.buffers) * self.itemsize

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {'layer': layer.name, 'scope': layer.scope, 'GFLOPs': layer.flops / 1e9, 'params (M)': layer.params / 1e6}
                for layer in self.layers
            ]
        )

    def summary(self) -> dict[str, float | int]:
        return {
            'frames': self.frames,
            'tokens': self.tokens,
            'params': self.params,
            'params_m': round(self.params / 1e6, 4),
            'frame_gflops': round(self.frame_flops / 1e9, 4),
            'clip_gflops': round(self.clip_flops / 1e9, 4),
            'storage_bytes': self.storage_bytes,
        }

    def to_table(self) -> str:
        lines = [self.to_frame().to_string(index=False, float_format=lambda v: f'{v:.4f}'), '']
        lines += [f'{key:<14} {value}' for key, value in self.summary().items()]
        return '\n'.join(lines)


def dct_flops(channels: int, height: int, width: int) -> int:
    """One separable 2D DCT (forward or inverse) on C x H x W."""
    return 2 * channels * height * width * (height + width)


def hco_flops(channels: int, height: int, width: int) -> int:
    return 2 * dct_flops(channels, height, width) + channels * height * width


def linear_flops(positions: int, in_features: int, out_features: int) -> int:
    return 2 * positions * in_features * out_features


def conv_flops(in_channels: int, out_channels: int, out_size: int, kernel: int) -> int:
    return 2 * out_channels * out_size * out_size * in_channels * kernel * kernel


def depthwise_flops(channels: int, out_size: int, kernel: int) -> int:
    return 2 * channels * out_size * out_size * kernel * kernel


def count_costs(
    config: BackboneConfig,
    num_classes: int,
    frames: int = 1,
    fusion_mode: FusionMode = 'route',
    msf_per_channel: bool = False,
) -> CostReport:
    """
    Analytic FLOPs and trainable parameter counts of the full classifier.

    Parameter counts equal `MMHCOHAR(...).num_parameters()` for the same arguments.

    Raises:
        InvalidParameterError: If frames < 1 or num_classes < 2.
    """
    if frames < 1:
        raise InvalidParameterError('frames', frames, 'need at least one frame')
    if num_classes < 2:
        raise InvalidParameterError('num_classes', num_classes, 'need at least 2 classes')

    channels = config.stage_channels
    sizes = config.stage_resolutions
    d = config.embed_dim
    c_in = config.in_channels
    layers: list[LayerCost] = []

    hidden = max(channels[0] // 2, 1)
    half = config.resolution // 2
    stem_flops = conv_flops(c_in, hidden, half, 3) + conv_flops(hidden, channels[0], sizes[0], 3)
    stem_params = hidden * c_in * 9 + 2 * hidden + channels[0] * hidden * 9 + 2 * channels[0]
    layers.append(LayerCost('stem', STREAMS * stem_flops, STREAMS * stem_params))
    buffers = STREAMS * 2 * (hidden + channels[0])

    if config.continuous_fve:
        fve_params = sizes[0] ** 2 * d + (len(sizes) - 1) * (d * 9 + d)
        fve_flops = sum(depthwise_flops(d, r, 3) for r in sizes[1:])
    else:
        fve_params = sum(r**2 * d for r in sizes)
        fve_flops = 0
    layers.append(LayerCost('fve', STREAMS * fve_flops, STREAMS * fve_params, scope='clip'))

    for s, (c, r, depth) in enumerate(zip(channels, sizes, config.stage_depths), start=1):
        n = r * r
        if s > 1:
            prev = channels[s - 2]
            layers.append(
                LayerCost(
                    f'downsample{s - 1}',
                    STREAMS * conv_flops(prev, c, r, 3),
                    STREAMS * (c * prev * 9 + c + 2 * c),
                )
            )
        branch_params = (2 * c * c + 2 * c) + 2 * c + (c * c + c) + (c * c + c) + (d * c + c)
        block_flops = STREAMS * (
            depthwise_flops(c, r, 3)
            + linear_flops(n, c, 2 * c)
            + hco_flops(c, r, r)
            + 2 * linear_flops(n, c, c)
        )
        layers.append(LayerCost(f'stage{s}', depth * block_flops, depth * (c * 9 + c + STREAMS * branch_params)))
        layers.append(LayerCost(f'stage{s}.diffusivity', depth * STREAMS * linear_flops(n, d, c), 0, scope='clip'))

    c = config.out_channels
    msf_out = 2 * c if msf_per_channel else 2
    router_params = (2 * c) ** 2 + 2 * c + 2 * c * 3 + 3 + 2 * c * msf_out + msf_out
    router_flops = linear_flops(1, 2 * c, 2 * c) + linear_flops(1, 2 * c, 3) + linear_flops(1, 2 * c, msf_out)
    layers.append(LayerCost('router', router_flops, router_params, scope='clip'))

    width = c if fusion_mode == 'add' else 2 * c
    layers.append(LayerCost('head', linear_flops(1, width, num_classes), 2 * width + width * num_classes + num_classes, scope='clip'))

    report = CostReport(
        layers=layers,
        frames=frames,
        tokens=config.resolution**2,
        buffers=buffers,
        itemsize=config.precision.numpy.itemsize,
    )
    logger.info(
        f'Analytic cost: {report.frame_flops / 1e9:.3f} GFLOPs/frame, '
        f'{report.clip_flops / 1e9:.3f} GFLOPs/clip (T={frames}), {report.params / 1e6:.3f}M params'
    )
    return report


def dense_attention(x: np.ndarray, block: int = 512) -> np.ndarray:
    """
    Single-head softmax(x x^T / sqrt(C)) x over tokens x [N, C].

    Rows are processed in query blocks so memory stays O(block * N); the
    arithmetic is still quadratic in N.
    """
    n, c = x.shape
    out = np.empty_like(x)
    scale = 1.0 / math.sqrt(c)
    for start in range(0, n, block):
        scores = x[start : start + block] @ x.T * scale
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[start : start + block] = scores @ x
    return out


@dataclass
class BenchRow:
    kind: BenchKind
    resolution: int
    tokens: int
    wall_ms: float
    spread: float


@dataclass
class BenchReport:
    rows: list[BenchRow]
    slopes: dict[str, float]
    advisories: list[str] = field(default_factory=list)
    parallel: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {'kind': r.kind, 'resolution': r.resolution, 'tokens': r.tokens, 'wall_ms': r.wall_ms, 'spread': r.spread}
                for r in self.rows
            ]
        )

    def to_table(self) -> str:
        lines = [self.to_frame().to_string(index=False, float_format=lambda v: f'{v:.3f}'), '']
        lines += [f'slope[{kind}] = {slope:.3f}' for kind, slope in self.slopes.items()]
        if self.parallel:
            lines.append('note: resolutions were timed concurrently; slopes may be distorted')
        lines += [f'advisory: {a}' for a in self.advisories]
        return '\n'.join(lines)

    def to_key_values(self) -> dict[str, str]:
        values = {f'slope.{kind}': f'{slope:.6f}' for kind, slope in self.slopes.items()}
        for r in self.rows:
            values[f'{r.kind}.{r.resolution}.tokens'] = str(r.tokens)
            values[f'{r.kind}.{r.resolution}.wall_ms'] = f'{r.wall_ms:.6f}'
            values[f'{r.kind}.{r.resolution}.spread'] = f'{r.spread:.6f}'
        values['parallel'] = str(self.parallel).lower()
        values['advisories'] = str(len(self.advisories))
        return values


def time_callable(fn, runs: int, warmup: int) -> tuple[float, float]:
    """Median wall time in ms over `runs` calls after `warmup` discarded calls, and spread = stdev / median."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    median = statistics.median(samples)
    spread = statistics.pstdev(samples) / median if median > 0 else 0.0
    return median, spread


def loglog_slope(tokens: list[int], wall_ms: list[float]) -> float:
    return float(np.polyfit(np.log(tokens), np.log(wall_ms), 1)[0])


def _measure(kind: BenchKind, resolution: int, settings: BenchSettings, seed: int) -> BenchRow:
    rng = np.random.default_rng([seed, resolution])
    c = settings.channels
    if kind == 'hco':
        x = Tensor(rng.standard_normal((1, c, resolution, resolution)))
        k = Tensor(rng.uniform(0.0, 1.0, (c, resolution, resolution)))

        def run():
            with no_grad():
                diffuse(x, k)
    else:
        tokens = rng.standard_normal((resolution * resolution, c))

        def run():
            dense_attention(tokens, settings.attention_block)

    median, spread = time_callable(run, settings.runs, settings.warmup)
    logger.debug(f'{kind} @ {resolution}x{resolution}: {median:.3f} ms (spread {spread:.1%})')
    return BenchRow(kind=kind, resolution=resolution, tokens=resolution * resolution, wall_ms=median, spread=spread)


def scaling_bench(settings: BenchSettings, seed: int = 0) -> BenchReport:
    """
    Time the HCO layer (and optionally dense attention) over square resolutions
    and fit log-log slopes of wall time against token count H*W.

    Raises:
        InvalidParameterError: With fewer than three distinct resolutions.
    """
    resolutions = sorted(set(settings.resolutions))
    if len(resolutions) < 3:
        raise InvalidParameterError('resolutions', settings.resolutions, 'need at least 3 distinct resolutions')
    kinds: list[BenchKind] = ['hco', 'attention'] if settings.attention else ['hco']
    jobs = [(kind, r) for kind in kinds for r in resolutions]

    if settings.parallel:
        with ThreadPoolExecutor(thread_name_prefix='bench') as pool:
            rows = list(pool.map(lambda job: _measure(job[0], job[1], settings, seed), jobs))
    else:
        with threadpool_limits(limits=1):
            rows = [_measure(kind, r, settings, seed) for kind, r in jobs]

    slopes = {
        kind: loglog_slope([r.tokens for r in rows if r.kind == kind], [r.wall_ms for r in rows if r.kind == kind])
        for kind in kinds
    }
    advisories = [
        f'{r.kind} @ {r.resolution}: spread {r.spread:.1%} exceeds {settings.variance_threshold:.0%} of median; rerun'
        for r in rows
        if r.spread > settings.variance_threshold
    ]
    for advisory in advisories:
        logger.warning(advisory)
    report = BenchReport(rows=rows, slopes=slopes, advisories=advisories, parallel=settings.parallel)
    logger.info(f'Scaling slopes: {", ".join(f"{k}={v:.3f}" for k, v in slopes.items())}')
    return report


def write_bench_report(report: BenchReport, out_dir: Path) -> tuple[Path, Path]:
    """Write bench.txt (table) and bench.kv (key=value)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path, kv_path = out_dir / 'bench.txt', out_dir / 'bench.kv'
    save_text_file(report.to_table() + '\n', table_path)
    write_key_value_file(report.to_key_values(), kv_path)
    return table_path, kv_path


def write_cost_report(report: CostReport, out_dir: Path) -> tuple[Path, Path]:
    """Write costs.txt (table) and costs.kv (key=value)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path, kv_path = out_dir / 'costs.txt', out_dir / 'costs.kv'
    save_text_file(report.to_table() + '\n', table_path)
    values: dict[str, object] = dict(report.summary())
    for layer in report.layers:
        values[f'layer.{layer.name}.flops'] = layer.flops
        values[f'layer.{layer.name}.params'] = layer.params
    write_key_value_file(values, kv_path)
    return table_path, kv_path
