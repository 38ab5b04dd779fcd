"""Latent-space data model: W+ code stacks and the W++ extension.

A W++ latent is the triple (constant input C, low codes, high codes).  C
replaces the generator's learned 4x4 constant; the low codes drive the first
four style inputs and the high codes drive the rest.  A W+ latent is just the
stack of style codes.

Tensors are stored as torch tensors.  The constant input is kept in the
channels-last layout ``(4, 4, D)`` at this boundary; modules convert to
channels-first internally.

Binary format (one block per field, concatenated)::

    int64 LE   rank
    int64 LE   dim_0 ... dim_{rank-1}
    float32 LE values, C order
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
import torch

from .errors import DimensionError, ValidationError

DEFAULT_CODE_DIM = 512
NUM_LOW_CODES = 4
CONSTANT_SIZE = 4


def num_style_codes(resolution: int) -> int:
    """Number of style inputs of a style-based generator at ``resolution``."""
    if resolution < 8 or resolution & (resolution - 1):
        raise DimensionError(f"resolution must be a power of two >= 8, got {resolution}")
    return 2 * int(math.log2(resolution)) - 2


def num_high_codes(resolution: int) -> int:
    return num_style_codes(resolution) - NUM_LOW_CODES


def resolution_for_codes(n_total: int) -> int:
    """Inverse of :func:`num_style_codes`."""
    if n_total < 4 or n_total % 2:
        raise DimensionError(f"no resolution has {n_total} style codes")
    return 2 ** ((n_total + 2) // 2)


def split_codes(codes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a ``(N_total, D)`` stack (or ``(B, N_total, D)`` batch) into low and high codes."""
    if codes.dim() not in (2, 3) or codes.shape[-2] < NUM_LOW_CODES + 1:
        raise DimensionError(
            f"need at least {NUM_LOW_CODES + 1} code rows, got shape {tuple(codes.shape)}")
    return codes[..., :NUM_LOW_CODES, :], codes[..., NUM_LOW_CODES:, :]


def merge_codes(low: torch.Tensor, high: torch.Tensor) -> torch.Tensor:
    if low.shape[-2] != NUM_LOW_CODES:
        raise DimensionError(f"low codes must have {NUM_LOW_CODES} rows, got {low.shape[-2]}")
    if low.shape[-1] != high.shape[-1] or low.shape[:-2] != high.shape[:-2]:
        raise DimensionError(
            f"incompatible low/high shapes {tuple(low.shape)} and {tuple(high.shape)}")
    return torch.cat([low, high], dim=-2)


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not bool(torch.isfinite(t).all()):
        raise ValidationError(f"{name} contains non-finite entries", field=name)


@dataclass(frozen=True)
class HierLatent:
    """W++ representation of one face."""

    constant_input: torch.Tensor  # (4, 4, D)
    low_codes: torch.Tensor  # (4, D)
    high_codes: torch.Tensor  # (N_high, D)
    resolution: int

    @property
    def code_dim(self) -> int:
        return self.low_codes.shape[-1]

    @property
    def codes(self) -> torch.Tensor:
        return merge_codes(self.low_codes, self.high_codes)

    def validate(self) -> None:
        validate(self)

    def replace(self, **changes) -> "HierLatent":
        fields = dict(constant_input=self.constant_input, low_codes=self.low_codes,
                      high_codes=self.high_codes, resolution=self.resolution)
        fields.update(changes)
        return HierLatent(**fields)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        for t in (self.constant_input, self.low_codes, self.high_codes):
            write_block(buf, t)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HierLatent":
        buf = io.BytesIO(data)
        c, low, high = (torch.from_numpy(read_block(buf)) for _ in range(3))
        latent = cls(c, low, high, resolution_for_codes(low.shape[0] + high.shape[0]))
        validate(latent)
        return latent


@dataclass(frozen=True)
class WPlusLatent:
    """W+ representation: style codes only, the generator keeps its own constant."""

    codes: torch.Tensor  # (N_total, D)
    resolution: int

    @property
    def low_codes(self) -> torch.Tensor:
        return split_codes(self.codes)[0]

    @property
    def high_codes(self) -> torch.Tensor:
        return split_codes(self.codes)[1]

    @property
    def constant_input(self):
        return None

    def validate(self) -> None:
        validate(self)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_block(buf, self.codes)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WPlusLatent":
        codes = torch.from_numpy(read_block(io.BytesIO(data)))
        latent = cls(codes, resolution_for_codes(codes.shape[0]))
        validate(latent)
        return latent


def validate(latent: HierLatent | WPlusLatent) -> None:
    """Raise if ``latent`` breaks a shape or finiteness invariant."""
    n_total = num_style_codes(latent.resolution)
    if isinstance(latent, WPlusLatent):
        if latent.codes.dim() != 2 or latent.codes.shape[0] != n_total:
            raise DimensionError(
                f"codes: expected ({n_total}, D), got {tuple(latent.codes.shape)}")
        _check_finite("codes", latent.codes)
        return

    d = latent.low_codes.shape[-1]
    expected = {
        "constant_input": (CONSTANT_SIZE, CONSTANT_SIZE, d),
        "low_codes": (NUM_LOW_CODES, d),
        "high_codes": (n_total - NUM_LOW_CODES, d),
    }
    for name, shape in expected.items():
        t = getattr(latent, name)
        if tuple(t.shape) != shape:
            raise DimensionError(f"{name}: expected shape {shape}, got {tuple(t.shape)}")
    for name in expected:
        _check_finite(name, getattr(latent, name))


def validate_image(image: torch.Tensor, resolution: int | None = None) -> None:
    """Check the FaceImage contract: ``(H, W, 3)``, square, values in [-1, 1]."""
    if image.dim() != 3 or image.shape[-1] != 3 or image.shape[0] != image.shape[1]:
        raise DimensionError(f"expected a square (H, W, 3) image, got {tuple(image.shape)}")
    if resolution is not None and image.shape[0] != resolution:
        raise DimensionError(f"expected resolution {resolution}, got {image.shape[0]}")
    _check_finite("pixels", image)
    if float(image.abs().max()) > 1.0:
        raise ValidationError("pixels outside [-1, 1]", field="pixels")


def image_to_batch(image: torch.Tensor) -> torch.Tensor:
    """(H, W, 3) -> (1, 3, H, W)."""
    return image.permute(2, 0, 1).unsqueeze(0)


def batch_to_image(batch: torch.Tensor) -> torch.Tensor:
    """(1, 3, H, W) -> (H, W, 3)."""
    if batch.dim() != 4 or batch.shape[0] != 1:
        raise DimensionError(f"expected a single-image batch, got {tuple(batch.shape)}")
    return batch[0].permute(1, 2, 0)


# -- binary blocks ----------------------------------------------------------

def write_block(fh: BinaryIO, tensor: torch.Tensor | np.ndarray) -> None:
    arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
    arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
    fh.write(struct.pack("<q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(arr.tobytes())


def read_block(fh: BinaryIO) -> np.ndarray:
    head = fh.read(8)
    if len(head) != 8:
        raise ValueError("truncated block header")
    (rank,) = struct.unpack("<q", head)
    if not 0 <= rank <= 8:
        raise ValueError(f"implausible rank {rank}")
    dims_raw = fh.read(8 * rank)
    if len(dims_raw) != 8 * rank:
        raise ValueError("truncated shape header")
    dims = struct.unpack(f"<{rank}q", dims_raw)
    if any(d < 0 for d in dims):
        raise ValueError(f"negative dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError(f"expected {count} float32 values, file is short")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
