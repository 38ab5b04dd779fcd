"""Style-based synthesis: a small StyleGAN2-like generator plus a frozen handle.

Style index layout (R = output resolution, L = log2(R) - 2 upsampling levels)::

    level 0 (4x4):   conv -> w[0], to_rgb -> w[1]
    level i >= 1:    conv0 -> w[2i-1], conv1 -> w[2i], to_rgb -> w[2i+1]

which gives 2*log2(R) - 2 style inputs, 18 at 1024.  The learned 4x4 constant
can be overridden by an externally supplied ``C`` (the W++ route).  Noise
inputs are omitted, i.e. fixed at zero.  The final RGB sum goes through tanh,
so images land in [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .errors import CapabilityError, CheckpointError, DimensionError, NumericError
from .latent import (CONSTANT_SIZE, DEFAULT_CODE_DIM, NUM_LOW_CODES, batch_to_image,
                     merge_codes, num_style_codes)


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 1024
    code_dim: int = DEFAULT_CODE_DIM
    channel_base: int = 32768
    channel_max: int = 512
    mapping_layers: int = 8
    accepts_external_constant: bool = True

    def channels(self, res: int) -> int:
        return max(1, min(self.channel_max, self.channel_base // res))

    @property
    def num_ws(self) -> int:
        return num_style_codes(self.resolution)

    def to_dict(self):
        return dict(self.__dict__)


class ModulatedConv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, code_dim, demodulate=True):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.padding = kernel // 2
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.scale = 1 / math.sqrt(in_ch * kernel * kernel)
        self.affine = nn.Linear(code_dim, in_ch)
        nn.init.normal_(self.affine.weight, std=code_dim ** -0.5)
        nn.init.ones_(self.affine.bias)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w):
        b, _, h, wd = x.shape
        s = self.affine(w)  # (B, in)
        weight = self.weight[None] * self.scale * s[:, None, :, None, None]
        if self.demodulate:
            weight = weight * torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        x = x.reshape(1, b * self.in_ch, h, wd)
        weight = weight.reshape(b * self.out_ch, self.in_ch, *weight.shape[-2:])
        out = F.conv2d(x, weight, padding=self.padding, groups=b)
        return out.reshape(b, self.out_ch, h, wd) + self.bias[None, :, None, None]


class MappingNetwork(nn.Module):
    def __init__(self, code_dim, num_layers):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(code_dim, code_dim) for _ in range(num_layers))
        for layer in self.layers:
            nn.init.normal_(layer.weight, std=math.sqrt(2 / code_dim))
            nn.init.zeros_(layer.bias)

    def forward(self, z):
        x = z * torch.rsqrt(z.pow(2).mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


class ToyStyleGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.code_dim
        self.mapping = MappingNetwork(d, cfg.mapping_layers)
        self.const = nn.Parameter(torch.randn(1, d, CONSTANT_SIZE, CONSTANT_SIZE))
        ch = cfg.channels(4)
        self.conv4 = ModulatedConv2d(d, ch, 3, d)
        self.rgb4 = ModulatedConv2d(ch, 3, 1, d, demodulate=False)
        self.conv0 = nn.ModuleList()
        self.conv1 = nn.ModuleList()
        self.to_rgb = nn.ModuleList()
        res = 8
        while res <= cfg.resolution:
            out = cfg.channels(res)
            self.conv0.append(ModulatedConv2d(ch, out, 3, d))
            self.conv1.append(ModulatedConv2d(out, out, 3, d))
            self.to_rgb.append(ModulatedConv2d(out, 3, 1, d, demodulate=False))
            ch = out
            res *= 2

    @property
    def num_ws(self):
        return self.cfg.num_ws

    def forward(self, ws, const=None):
        """``ws`` (B, num_ws, D); ``const`` (B, D, 4, 4) or None for the learned constant."""
        b = ws.shape[0]
        x = self.const.expand(b, -1, -1, -1) if const is None else const
        x = F.leaky_relu(self.conv4(x, ws[:, 0]), 0.2)
        rgb = self.rgb4(x, ws[:, 1])
        for i, (c0, c1, trgb) in enumerate(zip(self.conv0, self.conv1, self.to_rgb), start=1):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.leaky_relu(c0(x, ws[:, 2 * i - 1]), 0.2)
            x = F.leaky_relu(c1(x, ws[:, 2 * i]), 0.2)
            rgb = F.interpolate(rgb, scale_factor=2, mode="bilinear", align_corners=False)
            rgb = rgb + trgb(x, ws[:, 2 * i + 1])
        return torch.tanh(rgb)


class GeneratorHandle:
    """Frozen generator.  Parameters never receive gradients; latents do."""

    def __init__(self, module: ToyStyleGenerator):
        module.eval()
        module.requires_grad_(False)
        self.module = module

    @property
    def resolution(self) -> int:
        return self.module.cfg.resolution

    @property
    def code_dim(self) -> int:
        return self.module.cfg.code_dim

    @property
    def num_style_inputs(self) -> int:
        return self.module.num_ws

    @property
    def num_high(self) -> int:
        return self.num_style_inputs - NUM_LOW_CODES

    @property
    def accepts_external_constant(self) -> bool:
        return self.module.cfg.accepts_external_constant

    def checksum(self) -> str:
        return checkpoint.state_checksum(self.module)

    def to(self, dtype):
        self.module.to(dtype)
        return self

    def __call__(self, codes, const=None):
        return synthesize_batch(const, codes, self)


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> GeneratorHandle:
    """Randomly initialized toy generator (stands in for a pre-trained one)."""
    torch.manual_seed(seed)
    return GeneratorHandle(ToyStyleGenerator(cfg))


def synthesize_batch(const, codes, gen: GeneratorHandle):
    """``const`` (B, D, 4, 4) or None, ``codes`` (B, N, D) -> images (B, 3, R, R)."""
    n, d = gen.num_style_inputs, gen.code_dim
    if codes.dim() != 3 or tuple(codes.shape[1:]) != (n, d):
        raise DimensionError(f"expected codes (B, {n}, {d}), got {tuple(codes.shape)}")
    if const is not None:
        if not gen.accepts_external_constant:
            raise CapabilityError("generator does not accept an external constant input")
        expected = (codes.shape[0], d, CONSTANT_SIZE, CONSTANT_SIZE)
        if tuple(const.shape) != expected:
            raise DimensionError(f"expected constant {expected}, got {tuple(const.shape)}")
    img = gen.module(codes, const)
    if not bool(torch.isfinite(img).all()):
        raise NumericError("generator produced non-finite pixels")
    return img.clamp(-1.0, 1.0)


def synthesize(const, low, high, gen: GeneratorHandle) -> torch.Tensor:
    """One face: ``const`` (4, 4, D) or None, ``low`` (4, D), ``high`` (N_high, D) -> (R, R, 3)."""
    if low.dim() != 2 or high.dim() != 2:
        raise DimensionError("low and high codes must be matrices")
    if high.shape[0] != gen.num_high:
        raise DimensionError(f"generator takes {gen.num_high} high codes, got {high.shape[0]}")
    codes = merge_codes(low, high).unsqueeze(0)
    c = None
    if const is not None:
        if const.dim() != 3:
            raise DimensionError(f"constant must be (4, 4, D), got {tuple(const.shape)}")
        c = const.permute(2, 0, 1).unsqueeze(0)
    return batch_to_image(synthesize_batch(c, codes, gen))


def render(latent, gen: GeneratorHandle) -> torch.Tensor:
    """Synthesize from a HierLatent or WPlusLatent."""
    return synthesize(latent.constant_input, latent.low_codes, latent.high_codes, gen)


@dataclass(frozen=True)
class AuxiliarySample:
    image: torch.Tensor  # (R, R, 3)
    codes: torch.Tensor  # (N_total, D)


def sample_codes(gen: GeneratorHandle, n: int, seed: int) -> torch.Tensor:
    """``n`` W-space code stacks from the generator's mapping network."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    rng = torch.Generator().manual_seed(seed)
    dtype = gen.module.const.dtype
    z = torch.randn(n, gen.code_dim, generator=rng, dtype=torch.float64).to(dtype)
    with torch.no_grad():
        w = gen.module.mapping(z)
    return w[:, None, :].expand(-1, gen.num_style_inputs, -1).contiguous()


def sample_auxiliary(gen: GeneratorHandle, n: int, seed: int, chunk=64) -> list[AuxiliarySample]:
    codes = sample_codes(gen, n, seed)
    out = []
    with torch.no_grad():
        for start in range(0, n, chunk):
            c = codes[start:start + chunk]
            imgs = synthesize_batch(None, c, gen)
            out.extend(AuxiliarySample(img.permute(1, 2, 0), code) for img, code in zip(imgs, c))
    return out


def save_generator(gen: GeneratorHandle, directory):
    return checkpoint.save_checkpoint(directory, "generator", gen.module.cfg.to_dict(),
                                      gen.module.state_dict())


def load_generator(directory, expected_resolution: int | None = None) -> GeneratorHandle:
    _, config, _ = checkpoint.read_manifest(directory)
    res = config.get("resolution")
    if expected_resolution is not None and res != expected_resolution:
        raise CapabilityError(
            f"{directory}: checkpoint is for resolution {res}, expected {expected_resolution}")
    _, config, state = checkpoint.load_checkpoint(directory, kind="generator")
    try:
        cfg = GeneratorConfig(**config)
    except TypeError as exc:
        raise CheckpointError(f"{directory}: bad generator config: {exc}") from exc
    module = ToyStyleGenerator(cfg)
    checkpoint.load_into(module, state, source=str(directory))
    return GeneratorHandle(module)

