"""Differentiable entropy of feature maps.

Each map is summarised by a soft histogram: every value is softly assigned
to ``bins`` equally wide bins spanning ``[-range, range]`` with weights
``softmax_b(-(v - center_b)**2 / temperature)``. Bin probabilities are the
mean assignment over the map and the entropy is measured in bits. Values
outside the range fall into the nearest edge bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

PROB_FLOOR = 1e-12


class EntropyInputError(ValueError):
    """Raised for empty or non-finite estimator input."""


@dataclass(frozen=True)
class EstimatorConfig:
    bins: int = 16
    temperature: float = 0.5
    value_range: float = 4.0

    def __post_init__(self):
        if self.bins < 2:
            raise EntropyInputError("bins must be >= 2")
        if self.temperature <= 0:
            raise EntropyInputError("temperature must be > 0")
        if self.value_range <= 0:
            raise EntropyInputError("value_range must be > 0")

    @classmethod
    def from_config(cls, cfg) -> "EstimatorConfig":
        return cls(cfg["entropy.bins"], cfg["entropy.temperature"], cfg["entropy.range"])

    def centers(self, dtype=torch.float32, device=None) -> torch.Tensor:
        width = 2.0 * self.value_range / self.bins
        idx = torch.arange(self.bins, dtype=dtype, device=device)
        return -self.value_range + (idx + 0.5) * width


@dataclass
class EntropyVector:
    """Raw per-map entropies (bits) and their softmax-normalised form."""

    raw: np.ndarray
    normalized: np.ndarray
    estimator: EstimatorConfig


def soft_histogram(values: torch.Tensor, cfg: EstimatorConfig) -> torch.Tensor:
    """Bin probabilities over the last axis, shape ``values.shape[:-1] + (bins,)``."""
    centers = cfg.centers(values.dtype, values.device)
    logits = -((values.unsqueeze(-1) - centers) ** 2) / cfg.temperature
    return torch.softmax(logits, dim=-1).mean(dim=-2)


def map_entropies(z: torch.Tensor, cfg: EstimatorConfig) -> torch.Tensor:
    """Entropy in bits of every map along the last axis of ``z``.

    ``z`` of shape ``(..., n_maps, length)`` gives ``(..., n_maps)``.
    Differentiable with respect to every entry of ``z``.
    """
    p = soft_histogram(z, cfg)
    return -(p * torch.log2(p.clamp_min(PROB_FLOOR))).sum(dim=-1)


def _check_finite(x: torch.Tensor) -> None:
    if x.numel() == 0:
        raise EntropyInputError("feature map is empty")
    if not torch.isfinite(x).all():
        raise EntropyInputError("feature map contains non-finite values")


def estimate_entropy(feature_map, cfg: EstimatorConfig | None = None) -> float:
    """Entropy in bits of a single 1-D feature map."""
    cfg = cfg or EstimatorConfig()
    x = torch.as_tensor(np.asarray(feature_map, dtype=np.float64)).reshape(1, -1)
    _check_finite(x)
    return float(map_entropies(x, cfg)[0])


def normalize_entropies(raw):
    """Softmax over the map axis. Accepts a tensor or anything array-like."""
    if isinstance(raw, torch.Tensor):
        if not torch.isfinite(raw).all():
            raise EntropyInputError("entropies must be finite")
        return torch.softmax(raw, dim=-1)
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise EntropyInputError("entropies must be finite")
    shifted = np.exp(arr - arr.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def mean_exp_entropy(raw):
    """Mean of ``exp(H)`` over maps, taken on raw (unnormalised) entropies."""
    if isinstance(raw, torch.Tensor):
        return torch.exp(raw).mean(dim=-1)
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise EntropyInputError("entropies must be finite")
    return np.exp(arr).mean(axis=-1)


def entropy_vector(z, cfg: EstimatorConfig | None = None) -> EntropyVector:
    """Build an :class:`EntropyVector` for one ``(2C, L/2)`` feature block."""
    cfg = cfg or EstimatorConfig()
    x = torch.as_tensor(np.asarray(z, dtype=np.float64))
    _check_finite(x)
    raw = map_entropies(x, cfg).numpy()
    return EntropyVector(raw=raw, normalized=normalize_entropies(raw), estimator=cfg)


def max_entropy_bits(cfg: EstimatorConfig) -> float:
    return math.log2(cfg.bins)
