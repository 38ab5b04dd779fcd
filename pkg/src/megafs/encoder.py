"""Hierarchical face encoder (HieRFE).

Residual backbone -> feature pyramid -> one mapping network per style code.
The four low codes always come from the smallest pyramid map; the high codes
are spread over the mid and large maps according to ``EncoderConfig.code_split``.
In W++ mode an extra head turns the deepest backbone features into the 4x4
constant input of the generator.

Pyramid sizes for an encoder input of size S: large = S/2, mid = S/4,
small = S/8.  Inputs larger than ``input_size`` are resized down first.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .errors import CheckpointError, ConfigurationError, DimensionError, NumericError
from .latent import (CONSTANT_SIZE, DEFAULT_CODE_DIM, NUM_LOW_CODES, HierLatent, WPlusLatent,
                     image_to_batch, num_style_codes, validate_image)

LEVELS = ("small", "mid", "large")


class LatentSpace(str, enum.Enum):
    W_PLUS_PLUS = "W++"
    W_PLUS = "W+"


def default_code_split(resolution: int) -> tuple[tuple[str, int, int], ...]:
    """High codes: floor(n/2) to the mid map, the rest to the large map.

    Ranges are half-open ``(level, start, stop)`` over code indices.
    """
    n_total = num_style_codes(resolution)
    n_high = n_total - NUM_LOW_CODES
    n_mid = n_high // 2
    split = []
    if n_mid:
        split.append(("mid", NUM_LOW_CODES, NUM_LOW_CODES + n_mid))
    split.append(("large", NUM_LOW_CODES + n_mid, n_total))
    return tuple(split)


@dataclass(frozen=True)
class EncoderConfig:
    resolution: int = 1024
    latent_space: LatentSpace = LatentSpace.W_PLUS_PLUS
    code_dim: int = DEFAULT_CODE_DIM
    backbone_width: int = 64
    blocks: tuple[int, ...] = (3, 4, 6, 3)
    pyramid_width: int | None = None  # defaults to code_dim
    mapper_width: int | None = None  # defaults to code_dim
    input_size: int = 256
    code_split: tuple[tuple[str, int, int], ...] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "latent_space", LatentSpace(self.latent_space))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "pyramid_width", self.pyramid_width or self.code_dim)
        object.__setattr__(self, "mapper_width", self.mapper_width or self.code_dim)
        if self.code_split is None:
            object.__setattr__(self, "code_split", default_code_split(self.resolution))
        else:
            object.__setattr__(self, "code_split",
                               tuple((str(l), int(a), int(b)) for l, a, b in self.code_split))
        if len(self.blocks) != 4 or min(self.blocks) < 1:
            raise ConfigurationError(f"blocks must be four positive counts, got {self.blocks}")
        if self.encoder_input_size < 32:
            raise ConfigurationError("encoder input must be at least 32 pixels")
        n_total = self.num_codes
        covered = []
        for level, start, stop in self.code_split:
            if level not in LEVELS:
                raise ConfigurationError(f"unknown pyramid level {level!r}")
            covered.extend(range(start, stop))
        if sorted(covered) != list(range(NUM_LOW_CODES, n_total)):
            raise ConfigurationError(
                f"code_split must cover indices {NUM_LOW_CODES}..{n_total - 1} exactly once")

    @property
    def num_codes(self) -> int:
        return num_style_codes(self.resolution)

    @property
    def num_high(self) -> int:
        return self.num_codes - NUM_LOW_CODES

    @property
    def encoder_input_size(self) -> int:
        return min(self.resolution, self.input_size)

    @property
    def level_sizes(self) -> dict[str, int]:
        s = self.encoder_input_size
        return {"large": s // 2, "mid": s // 4, "small": s // 8}

    def code_levels(self) -> list[str]:
        """Pyramid level feeding each code index."""
        levels = ["small"] * self.num_codes
        for level, start, stop in self.code_split:
            for i in range(start, stop):
                levels[i] = level
        return levels

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution, "latent_space": self.latent_space.value,
            "code_dim": self.code_dim, "backbone_width": self.backbone_width,
            "blocks": list(self.blocks), "pyramid_width": self.pyramid_width or self.code_dim,
            "mapper_width": self.mapper_width or self.code_dim, "input_size": self.input_size,
            "code_split": [f"{l}:{a}-{b}" for l, a, b in self.code_split],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        split = d.pop("code_split", None)
        if split is not None:
            if isinstance(split, str):
                split = [split]
            parsed = []
            for item in split:
                level, rng = item.split(":")
                a, b = rng.split("-")
                parsed.append((level, int(a), int(b)))
            d["code_split"] = tuple(parsed)
        if "blocks" in d and not isinstance(d["blocks"], (list, tuple)):
            d["blocks"] = [d["blocks"]]
        return cls(**d)


def conv_bn(inp, oup, stride=1):
    return nn.Sequential(
        nn.Conv2d(inp, oup, 3, stride, 1, bias=False),
        nn.BatchNorm2d(oup),
        nn.ReLU(),
    )


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, inplanes, planes, stride=1):
        super().__init__()
        out = planes * self.expansion
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out)
        self.shortcut = None
        if stride != 1 or inplanes != out:
            self.shortcut = nn.Sequential(nn.Conv2d(inplanes, out, 1, stride, bias=False),
                                          nn.BatchNorm2d(out))

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        return F.relu(y + identity)


class ResidualBackbone(nn.Module):
    """ResNet-style body; ``blocks=(3, 4, 6, 3)`` is the 50-layer layout."""

    strides = (1, 2, 2, 1)

    def __init__(self, width=64, blocks=(3, 4, 6, 3)):
        super().__init__()
        self.stem = conv_bn(3, width, stride=2)
        inplanes = width
        stages = []
        for i, (n, stride) in enumerate(zip(blocks, self.strides)):
            planes = width * 2 ** i
            layers = []
            for j in range(n):
                layers.append(Bottleneck(inplanes, planes, stride if j == 0 else 1))
                inplanes = planes * Bottleneck.expansion
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.out_channels = [width * 2 ** i * Bottleneck.expansion for i in range(4)]

    def forward(self, x):
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class CodeMapper(nn.Module):
    """Lateral mapping network: strided conv/BN/LeakyReLU down to 1x1, then an affine output."""

    def __init__(self, in_channels, code_dim, spatial, width=None):
        super().__init__()
        if spatial < 1 or spatial & (spatial - 1):
            raise DimensionError(f"feature size must be a power of two, got {spatial}")
        width = width or code_dim
        self.spatial = spatial
        layers = []
        ch = in_channels
        for _ in range(int(math.log2(spatial))):
            layers += [nn.Conv2d(ch, width, 3, 2, 1), nn.BatchNorm2d(width), nn.LeakyReLU(0.2)]
            ch = width
        self.convs = nn.Sequential(*layers)
        self.linear = nn.Linear(ch, code_dim)

    @property
    def num_stages(self) -> int:
        return len(self.convs) // 3

    def forward(self, x):
        if x.shape[-1] != x.shape[-2]:
            raise DimensionError(f"feature map must be square, got {tuple(x.shape[-2:])}")
        if x.shape[-1] != self.spatial:
            raise DimensionError(f"mapper built for {self.spatial}px maps, got {x.shape[-1]}")
        x = self.convs(x)
        x = x.mean(dim=(2, 3))
        return self.linear(x)


class ConstantHead(nn.Module):
    """Strided conv stack from the smallest pyramid map to the (D, 4, 4) constant."""

    def __init__(self, in_channels, code_dim, spatial):
        super().__init__()
        layers = []
        ch = in_channels
        while spatial > CONSTANT_SIZE:
            layers += [nn.Conv2d(ch, code_dim, 3, 2, 1), nn.BatchNorm2d(code_dim), nn.LeakyReLU(0.2)]
            ch = code_dim
            spatial //= 2
        layers.append(nn.Conv2d(ch, code_dim, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class HieRFE(nn.Module):
    """Image batch ``(B, 3, R, R)`` in [-1, 1] -> ``(constant or None, codes (B, N, D))``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        pw = cfg.pyramid_width or cfg.code_dim
        self.backbone = ResidualBackbone(cfg.backbone_width, cfg.blocks)
        c1, c2, c3, c4 = self.backbone.out_channels
        self.lateral_large = conv_bn(c1, pw)
        self.lateral_mid = conv_bn(c2, pw)
        self.lateral_small = conv_bn(c3, pw)
        sizes = cfg.level_sizes
        self.mappers = nn.ModuleList(
            CodeMapper(pw, cfg.code_dim, sizes[level], cfg.mapper_width)
            for level in cfg.code_levels())
        if cfg.latent_space is LatentSpace.W_PLUS_PLUS:
            self.top = nn.Sequential(nn.Conv2d(c4, pw, 3, 1, 1), nn.BatchNorm2d(pw))
            self.constant_head = ConstantHead(pw, cfg.code_dim, sizes["small"])
        else:
            self.top = None
            self.constant_head = None

    def pyramid(self, x):
        c1, c2, c3, c4 = self.backbone(x)
        small = self.lateral_small(c3)
        mid = self.lateral_mid(c2) + F.interpolate(small, scale_factor=2, mode="bilinear",
                                                   align_corners=True)
        large = self.lateral_large(c1) + F.interpolate(mid, scale_factor=2, mode="bilinear",
                                                       align_corners=True)
        return {"small": small, "mid": mid, "large": large}, c4

    def forward(self, x):
        r = self.cfg.resolution
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[-1] != r or x.shape[-2] != r:
            raise DimensionError(f"expected (B, 3, {r}, {r}) input, got {tuple(x.shape)}")
        x = x.clamp(-1.0, 1.0)
        s = self.cfg.encoder_input_size
        if s != r:
            x = F.interpolate(x, size=(s, s), mode="bilinear", align_corners=False)
        feats, c4 = self.pyramid(x)
        levels = self.cfg.code_levels()
        codes = torch.stack([m(feats[lvl]) for m, lvl in zip(self.mappers, levels)], dim=1)
        const = None
        if self.constant_head is not None:
            const = self.constant_head(self.top(c4))
        return const, codes


def map_feature_to_code(feature_map: torch.Tensor, mapper: CodeMapper) -> torch.Tensor:
    """Run one mapping network on an ``(h, w, c)`` feature map; returns a ``(D,)`` code.

    A single map cannot supply batch statistics, so batch-norm uses stored ones.
    """
    if feature_map.dim() != 3 or feature_map.shape[0] != feature_map.shape[1]:
        raise DimensionError(f"expected a square (h, w, c) map, got {tuple(feature_map.shape)}")
    with _eval_mode(mapper):
        return mapper(feature_map.permute(2, 0, 1).unsqueeze(0))[0]


class _eval_mode:
    def __init__(self, module):
        self.module = module

    def __enter__(self):
        self.was_training = self.module.training
        self.module.eval()

    def __exit__(self, *exc):
        self.module.train(self.was_training)


def encode(image: torch.Tensor, encoder: HieRFE) -> HierLatent | WPlusLatent:
    """Encode one ``(H, W, 3)`` face.  Batch-norm runs on its stored statistics."""
    cfg = encoder.cfg
    validate_image(image, cfg.resolution)
    with _eval_mode(encoder):
        const, codes = encoder(image_to_batch(image))
    if not bool(torch.isfinite(codes).all()) or (
            const is not None and not bool(torch.isfinite(const).all())):
        raise NumericError("encoder produced non-finite activations")
    codes = codes[0]
    if const is None:
        return WPlusLatent(codes, cfg.resolution)
    return HierLatent(const[0].permute(1, 2, 0), codes[:NUM_LOW_CODES], codes[NUM_LOW_CODES:],
                      cfg.resolution)


def encode_batch(images: torch.Tensor, encoder: HieRFE):
    """Batched encode for ``(B, 3, R, R)`` tensors; returns ``(C or None, codes)``."""
    with _eval_mode(encoder):
        return encoder(images)


def save_encoder(encoder: HieRFE, directory):
    return checkpoint.save_checkpoint(directory, "encoder", encoder.cfg.to_dict(),
                                      encoder.state_dict())


def load_encoder(directory, expected_resolution: int | None = None) -> HieRFE:
    _, config, state = checkpoint.load_checkpoint(directory, kind="encoder")
    try:
        cfg = EncoderConfig.from_dict(config)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{directory}: bad encoder config: {exc}") from exc
    if expected_resolution is not None and cfg.resolution != expected_resolution:
        raise CheckpointError(
            f"{directory}: encoder resolution {cfg.resolution}, expected {expected_resolution}")
    enc = HieRFE(cfg)
    checkpoint.load_into(enc, state, source=str(directory))
    enc.eval()
    return enc
