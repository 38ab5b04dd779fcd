"""PNG in/out.  Only 8-bit RGB is accepted; pixels map [0, 255] <-> [-1, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ImageIOError


def load_image(path) -> torch.Tensor:
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt != "PNG":
                raise ImageIOError(f"{path}: expected PNG, got {fmt}")
            if mode != "RGB":
                raise ImageIOError(f"{path}: expected 8-bit RGB, got mode {mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0)


def save_image(image: torch.Tensor, path) -> None:
    arr = image.detach().cpu().double().numpy()
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ImageIOError(f"{path}: expected an (H, W, 3) image, got {arr.shape}")
    arr = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
