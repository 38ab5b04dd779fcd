"""Desk-scale training data: procedural face-like images and batch streams."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .synthesis import GeneratorHandle, sample_codes, synthesize_batch


def synthetic_faces(resolution: int, n: int, seed: int = 0) -> torch.Tensor:
    """``n`` cartoon faces, ``(n, 3, R, R)`` in [-1, 1].

    Random background, skin ellipse, eyes, brows and mouth; geometry and colors
    vary per sample so identity-like and pose-like factors both exist.
    """
    rng = np.random.default_rng(seed)
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64) / r
    out = np.empty((n, r, r, 3))

    def ellipse(cx, cy, ax, ay):
        return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0

    for i in range(n):
        img = np.empty((r, r, 3))
        img[:] = rng.uniform(-0.9, 0.3, size=3)
        cx, cy = 0.5 + rng.uniform(-0.08, 0.08), 0.52 + rng.uniform(-0.06, 0.06)
        fw, fh = rng.uniform(0.26, 0.36), rng.uniform(0.34, 0.44)
        img[ellipse(cx, cy, fw, fh)] = rng.uniform(0.0, 0.9, size=3)
        hair = ellipse(cx, cy - fh * 0.75, fw * 1.05, fh * 0.45) & (yy < cy - fh * 0.45)
        img[hair] = rng.uniform(-1.0, -0.2, size=3)
        eye_dx, eye_y = fw * rng.uniform(0.35, 0.5), cy - fh * rng.uniform(0.1, 0.3)
        eye_r = rng.uniform(0.03, 0.06)
        eye_color = rng.uniform(-1.0, -0.4, size=3)
        for side in (-1, 1):
            img[ellipse(cx + side * eye_dx, eye_y, eye_r * 1.4, eye_r)] = eye_color
            brow = ellipse(cx + side * eye_dx, eye_y - eye_r * 2.2, eye_r * 1.8, eye_r * 0.4)
            img[brow] = eye_color * 0.8
        mouth_w = fw * rng.uniform(0.3, 0.6)
        mouth_h = rng.uniform(0.01, 0.05)
        img[ellipse(cx, cy + fh * 0.5, mouth_w, mouth_h)] = rng.uniform(-0.6, 0.2, size=3)
        out[i] = img
    return torch.from_numpy(out.transpose(0, 3, 1, 2).copy()).float().clamp(-1, 1)


def auxiliary_images(gen: GeneratorHandle, n: int, seed: int = 0, chunk=64) -> torch.Tensor:
    """Generator samples from its own mapping prior, ``(n, 3, R, R)``."""
    codes = sample_codes(gen, n, seed)
    with torch.no_grad():
        return torch.cat([synthesize_batch(None, codes[i:i + chunk], gen)
                          for i in range(0, n, chunk)])


def training_set(gen: GeneratorHandle, n_faces: int, n_aux: int, seed: int = 0) -> torch.Tensor:
    parts = []
    if n_faces:
        parts.append(synthetic_faces(gen.resolution, n_faces, seed))
    if n_aux:
        parts.append(auxiliary_images(gen, n_aux, seed + 1))
    return torch.cat(parts)


def load_image_dir(directory, resolution: int | None = None) -> torch.Tensor:
    from .imageio import load_image

    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG images in {directory}")
    images = [load_image(p) for p in paths]
    if resolution is not None:
        from .oracles import resize_for
        images = [resize_for(resolution, im) for im in images]
    return torch.stack([im.permute(2, 0, 1) for im in images])


def image_stream(images: torch.Tensor, batch_size: int, seed: int = 0):
    """Endless random batches drawn with replacement."""
    rng = np.random.default_rng(seed)
    while True:
        idx = rng.integers(0, len(images), size=batch_size)
        yield images[torch.from_numpy(idx)]


def pair_stream(images: torch.Tensor, batch_size: int, seed: int = 0, same_fraction=0.2):
    """Endless ``(sources, targets)`` batches; ``same_fraction`` of rows are self-pairs."""
    rng = np.random.default_rng(seed)
    while True:
        src = rng.integers(0, len(images), size=batch_size)
        tgt = rng.integers(0, len(images), size=batch_size)
        same = rng.random(batch_size) < same_fraction
        tgt = np.where(same, src, tgt)
        yield images[torch.from_numpy(src)], images[torch.from_numpy(tgt)]
