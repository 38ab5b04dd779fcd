"""Perceptual models used by the losses and metrics, behind a small plug-in seam.

Each oracle is a callable on ``(B, 3, H, W)`` batches in [-1, 1] and carries an
``input_size``; :func:`resize_for` brings images to that size.  The toy
implementations are fixed, seeded, differentiable stand-ins:

* feature extractor - two frozen random conv layers; returns the input and
  both activations, each unit-normalized across channels
* recognizer - random linear projection of pooled pixels, L2-normalized
* landmark predictor - frozen random conv responses, soft-argmax to K points
* pose / expression estimators - random linear read-outs (evaluation stubs)

Real models can be registered under a name with :func:`register_oracle` as
long as they follow the same call contract.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError

DEFAULT_SIZES = {
    "recognizer": 112,
    "feature_extractor": 256,
    "landmarks": 256,
    "pose": 64,
    "expression": 64,
}


def resize_for(model, images: torch.Tensor) -> torch.Tensor:
    """Bilinear resize to ``model``'s input size (an oracle, a kind name, or an int).

    Accepts ``(B, 3, H, W)`` batches or a single ``(H, W, 3)`` image.
    """
    if isinstance(model, int):
        size = model
    elif isinstance(model, str):
        size = DEFAULT_SIZES[model]
    else:
        size = model.input_size
    if images.dim() == 3:
        return resize_for(size, images.permute(2, 0, 1)[None])[0].permute(1, 2, 0)
    if images.shape[-1] == size and images.shape[-2] == size:
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False,
                         antialias=images.shape[-1] > size)


def _seeded(shape, seed, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64).float() * scale


class _Oracle(nn.Module):
    """Frozen module: all weights are buffers, so optimizers never see them."""

    input_size: int

    def prepare(self, images):
        return resize_for(self, images)


class ToyFeatureExtractor(_Oracle):
    def __init__(self, input_size=256, channels=(8, 16), seed=0):
        super().__init__()
        self.input_size = input_size
        c_in = 3
        for i, c in enumerate(channels):
            self.register_buffer(f"w{i}", _seeded((c, c_in, 3, 3), seed + i, (c_in * 9) ** -0.5))
            self.register_buffer(f"b{i}", _seeded((c,), seed + 100 + i, 0.1))
            c_in = c
        self.depth = len(channels)

    @staticmethod
    def _unit(f):
        # eps inside the root keeps the gradient finite where relu zeroes a whole column
        return f * torch.rsqrt(f.pow(2).sum(dim=1, keepdim=True) + 1e-12)

    def forward(self, images):
        x = self.prepare(images)
        feats = [self._unit(x)]
        for i in range(self.depth):
            x = F.relu(F.conv2d(x, getattr(self, f"w{i}"), getattr(self, f"b{i}"),
                                stride=2, padding=1))
            feats.append(self._unit(x))
        return feats


class ToyRecognizer(_Oracle):
    def __init__(self, input_size=112, pool_size=16, embed_dim=128, seed=1):
        super().__init__()
        self.input_size = input_size
        self.pool_size = pool_size
        n_in = 3 * pool_size * pool_size
        self.register_buffer("proj", _seeded((embed_dim, n_in), seed, n_in ** -0.5))

    def raw(self, images):
        x = F.adaptive_avg_pool2d(self.prepare(images), self.pool_size)
        return x.flatten(1) @ self.proj.T

    def forward(self, images):
        e = self.raw(images)
        return e / e.norm(dim=1, keepdim=True)


class ToyLandmarkPredictor(_Oracle):
    """K soft-argmax landmarks in pixel coordinates of the ``input_size`` frame."""

    def __init__(self, input_size=256, num_points=5, kernel=7, temperature=1.0, seed=2):
        super().__init__()
        self.input_size = input_size
        self.num_points = num_points
        self.temperature = temperature
        self.register_buffer("weight", _seeded((num_points, 3, kernel, kernel), seed,
                                               (3 * kernel * kernel) ** -0.5))
        coords = torch.arange(input_size, dtype=torch.float32)
        yy, xx = torch.meshgrid(coords, coords, indexing="ij")
        self.register_buffer("grid", torch.stack([xx.flatten(), yy.flatten()], dim=1))

    def forward(self, images):
        x = self.prepare(images)
        r = F.conv2d(x, self.weight, padding=self.weight.shape[-1] // 2)
        p = torch.softmax(r.flatten(2) / self.temperature, dim=-1)  # (B, K, H*W)
        return p @ self.grid  # (B, K, 2)


class ToyAttributeEstimator(_Oracle):
    """Stand-in for a pose or expression regressor."""

    def __init__(self, dim=3, input_size=64, pool_size=8, seed=3):
        super().__init__()
        self.input_size = input_size
        self.pool_size = pool_size
        n_in = 3 * pool_size * pool_size
        self.register_buffer("proj", _seeded((dim, n_in), seed, 10 * n_in ** -0.5))

    def forward(self, images):
        x = F.adaptive_avg_pool2d(self.prepare(images), self.pool_size)
        return x.flatten(1) @ self.proj.T


_REGISTRY: dict[str, dict[str, Callable[..., nn.Module]]] = {
    "feature_extractor": {"toy": ToyFeatureExtractor},
    "recognizer": {"toy": ToyRecognizer},
    "landmarks": {"toy": ToyLandmarkPredictor},
    "pose": {"toy": lambda **kw: ToyAttributeEstimator(dim=3, seed=3, **kw)},
    "expression": {"toy": lambda **kw: ToyAttributeEstimator(dim=10, seed=4, **kw)},
}


def register_oracle(kind: str, name: str, factory: Callable[..., nn.Module]) -> None:
    if kind not in _REGISTRY:
        raise ConfigurationError(f"unknown oracle kind {kind!r}")
    _REGISTRY[kind][name] = factory


def create_oracle(kind: str, name: str = "toy", **kwargs) -> nn.Module:
    try:
        factory = _REGISTRY[kind][name]
    except KeyError:
        raise ConfigurationError(f"no {kind} oracle registered as {name!r}") from None
    return factory(**kwargs)


@dataclass
class OracleSet:
    feature_extractor: Callable | None = None
    recognizer: Callable | None = None
    landmarks: Callable | None = None

    def require(self) -> "OracleSet":
        missing = [k for k, v in self.__dict__.items() if v is None]
        if missing:
            raise ConfigurationError(f"missing oracles: {', '.join(missing)}")
        return self

    def to(self, dtype) -> "OracleSet":
        for v in self.__dict__.values():
            if isinstance(v, nn.Module):
                v.to(dtype)
        return self

    @classmethod
    def toy(cls, feature_size=None, recognizer_size=None, landmark_size=None) -> "OracleSet":
        return cls(
            ToyFeatureExtractor(input_size=feature_size or DEFAULT_SIZES["feature_extractor"]),
            ToyRecognizer(input_size=recognizer_size or DEFAULT_SIZES["recognizer"]),
            ToyLandmarkPredictor(input_size=landmark_size or DEFAULT_SIZES["landmarks"]),
        )

    @classmethod
    def from_names(cls, feature_extractor="toy", recognizer="toy", landmarks="toy",
                   sizes: dict | None = None):
        """Build from registered plug-in names; ``sizes`` maps kind to input size."""
        sizes = sizes or {}

        def make(kind, name):
            size = sizes.get(kind)
            return create_oracle(kind, name, **({"input_size": size} if size else {}))
        return cls(make("feature_extractor", feature_extractor),
                   make("recognizer", recognizer), make("landmarks", landmarks))
