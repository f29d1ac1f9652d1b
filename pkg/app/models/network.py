"""
Full two-stream classifier: backbone -> fusion router -> head.
"""

from __future__ import annotations

import hashlib
import json

from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from app.engine.tensor import Tensor
from app.models.fusion import FusionBundle, FusionMode, PolicyRouter
from app.models.head import ClassifierHead, Prediction
from app.models.layers import Module
from app.models.mmhco import Backbone, BackboneConfig


InputModality = Literal['both', 'rgb', 'event']


@dataclass
class NetworkOutput:
    prediction: Prediction
    fusion: FusionBundle


class MMHCOHAR(Module):
    """
    Multi-modal heat-conduction activity recognizer.

    Args:
        config: Backbone architecture.
        num_classes: Number of action classes C'.
        rng: Generator used for every parameter initialisation.
        fusion_mode: Router mode (see PolicyRouter).
        tau: Gumbel temperature.
        msf_per_channel: Per-channel instead of per-modality MSF weights.
        modality: 'rgb' or 'event' zero out the other stream at the input.
    """

    def __init__(
        self,
        config: BackboneConfig,
        num_classes: int,
        rng: np.random.Generator,
        fusion_mode: FusionMode = 'route',
        tau: float = 1.0,
        msf_per_channel: bool = False,
        modality: InputModality = 'both',
    ):
        self.config = config
        self.num_classes = num_classes
        self.fusion_mode = fusion_mode
        self.msf_per_channel = msf_per_channel
        self.modality = modality
        dtype = config.precision
        self.backbone = Backbone(config, rng)
        self.router = PolicyRouter(config.out_channels, rng, dtype, fusion_mode, tau, msf_per_channel)
        self.head = ClassifierHead(self.router.out_width, num_classes, rng, dtype, config.layernorm_eps)

    def architecture(self) -> dict[str, Any]:
        """Everything that determines parameter names and shapes."""
        return {
            'backbone': self.config.model_dump(mode='json'),
            'num_classes': self.num_classes,
            'fusion_width': self.router.out_width,
            'msf_per_channel': self.msf_per_channel,
        }

    def architecture_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.architecture(), sort_keys=True).encode()).hexdigest()

    def _mask_inputs(self, rgb: Tensor, evt: Tensor) -> tuple[Tensor, Tensor]:
        if self.modality == 'rgb':
            return rgb, Tensor(np.zeros_like(evt.data))
        if self.modality == 'event':
            return Tensor(np.zeros_like(rgb.data)), evt
        return rgb, evt

    def forward(self, rgb: Tensor, evt: Tensor, rng: np.random.Generator | None = None) -> NetworkOutput:
        rgb, evt = self._mask_inputs(rgb, evt)
        f_r, f_e = self.backbone(rgb, evt)
        bundle = self.router(f_r, f_e, rng)
        return NetworkOutput(prediction=self.head(bundle.fused), fusion=bundle)
