"""Swap and inversion metrics.

Means are accumulated with ``math.fsum`` so results do not depend on the
order pairs are processed in.  FID uses the symmetric form
``Tr sqrt(sqrt(Sa) Sb sqrt(Sa))`` evaluated by eigendecomposition; tiny
negative eigenvalues from round-off are clipped, larger ones are an error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import DimensionError, MegaFSError, NumericError, ValidationError
from .losses import lpips_loss
from .oracles import resize_for

EIG_TOLERANCE = 1e-6


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _as_batch(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images if images.dim() == 4 else images.unsqueeze(0)
    return torch.stack([im.permute(2, 0, 1) if im.shape[-1] == 3 else im for im in images])


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("zero-norm embedding")
    return x / norms


@dataclass(frozen=True)
class IdentityGallery:
    labels: tuple
    embeddings: np.ndarray  # (M, E), unit rows

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or len(emb) == 0:
            raise ValueError("gallery needs at least one embedding")
        if len(self.labels) != len(emb):
            raise DimensionError(f"{len(self.labels)} labels for {len(emb)} embeddings")
        if not np.allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-5):
            raise ValidationError("gallery embeddings must be unit-norm", field="embeddings")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "embeddings", emb)

    @classmethod
    def from_embeddings(cls, labels, embeddings):
        return cls(tuple(labels), _unit_rows(np.asarray(embeddings, dtype=np.float64)))


def id_retrieval(probe_embeddings, probe_labels: Sequence, gallery: IdentityGallery) -> float:
    """Top-1 cosine retrieval rate in percent; ties go to the lowest gallery index."""
    probes = np.asarray(probe_embeddings, dtype=np.float64)
    if probes.ndim != 2 or len(probes) == 0:
        raise ValueError("need at least one probe embedding")
    if len(probe_labels) != len(probes):
        raise DimensionError(f"{len(probe_labels)} labels for {len(probes)} probes")
    sims = _unit_rows(probes) @ gallery.embeddings.T
    nearest = np.argmax(sims, axis=1)
    hits = sum(gallery.labels[j] == lab for j, lab in zip(nearest, probe_labels))
    return 100.0 * hits / len(probes)


@torch.no_grad()
def embed(images, recognizer) -> np.ndarray:
    batch = _as_batch(images)
    return recognizer(resize_for(recognizer, batch)).double().numpy()


def id_similarity(swapped, sources, recognizer) -> float:
    """Mean cosine between recognizer embeddings of swapped and source faces."""
    a, b = embed(swapped, recognizer), embed(sources, recognizer)
    if len(a) != len(b):
        raise DimensionError(f"{len(a)} swapped images for {len(b)} sources")
    cos = np.sum(_unit_rows(a) * _unit_rows(b), axis=1)
    return _mean(cos)


@torch.no_grad()
def attribute_error(swapped, targets, estimator: Callable) -> float:
    """Mean L2 distance between estimator vectors of swapped and target images."""
    a, b = _as_batch(swapped), _as_batch(targets)
    if len(a) != len(b):
        raise DimensionError(f"{len(a)} swapped images for {len(b)} targets")
    dists = []
    for i in range(len(a)):
        try:
            va = np.asarray(estimator(a[i:i + 1]), dtype=np.float64).ravel()
            vb = np.asarray(estimator(b[i:i + 1]), dtype=np.float64).ravel()
        except Exception as exc:
            raise MegaFSError(f"estimator failed on image {i}: {exc}") from exc
        dists.append(float(np.linalg.norm(va - vb)))
    return _mean(dists)


pose_error = attribute_error
expression_error = attribute_error


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    _check_eigs(vals, "covariance")
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def _check_eigs(vals, what):
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -EIG_TOLERANCE * scale:
        raise NumericError(f"{what} has a significantly negative eigenvalue {vals.min():.3g}")


def frechet_distance(mu_a, sigma_a, mu_b, sigma_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    sigma_a, sigma_b = np.atleast_2d(sigma_a), np.atleast_2d(sigma_b)
    root_a = _psd_sqrt(sigma_a)
    middle = root_a @ sigma_b @ root_a
    vals = np.linalg.eigvalsh((middle + middle.T) / 2)
    _check_eigs(vals, "covariance product")
    tr_covmean = float(np.sum(np.sqrt(np.clip(vals, 0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2 * tr_covmean)
    return max(value, 0.0)


def fid(features_a, features_b) -> float:
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or len(a) < 2 or len(b) < 2:
        raise ValueError("FID needs at least two feature rows per set")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


@torch.no_grad()
def pooled_features(images, feature_extractor) -> np.ndarray:
    """Global-average-pooled activations, the front end used for FID here."""
    batch = _as_batch(images)
    feats = feature_extractor(resize_for(feature_extractor, batch))
    return torch.cat([f.mean(dim=(2, 3)) for f in feats], dim=1).double().numpy()


@dataclass(frozen=True)
class InversionMetrics:
    lpips: float
    mse: float
    failure_rate: float


@torch.no_grad()
def inversion_metrics(originals, reconstructions, feature_extractor, recognizer,
                      failure_threshold: float = 0.3) -> InversionMetrics:
    """Mean LPIPS, mean per-pixel squared error, and percent of pairs whose
    identity cosine falls below ``failure_threshold``."""
    a, b = _as_batch(originals), _as_batch(reconstructions)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    lp = [float(lpips_loss(a[i:i + 1], b[i:i + 1], feature_extractor)) for i in range(len(a))]
    mse = [float((a[i] - b[i]).double().pow(2).mean()) for i in range(len(a))]
    ea, eb = _unit_rows(embed(a, recognizer)), _unit_rows(embed(b, recognizer))
    failures = int(np.sum(np.sum(ea * eb, axis=1) < failure_threshold))
    return InversionMetrics(_mean(lp), _mean(mse), 100.0 * failures / len(a))


LABELS = {
    "id_retrieval": "ID retrieval",
    "id_similarity": "ID similarity",
    "pose_error": "pose",
    "expression_error": "expression",
    "fid": "FID",
    "inversion_lpips": "LPIPS",
    "inversion_mse": "MSE",
    "failure_rate": "failure rate",
}


@dataclass
class MetricReport:
    id_retrieval: float | None = None
    id_similarity: float | None = None
    pose_error: float | None = None
    expression_error: float | None = None
    fid: float | None = None
    inversion_lpips: float | None = None
    inversion_mse: float | None = None
    failure_rate: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not math.isfinite(v):
                raise ValidationError(f"{f.name} is not finite", field=f.name)
        for name in ("id_retrieval", "failure_rate"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 100:
                raise ValidationError(f"{name}={v} outside [0, 100]", field=name)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{LABELS[f.name]}: {v:.6g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        by_label = {v: k for k, v in LABELS.items()}
        values = {}
        for line in text.splitlines():
            if ":" in line:
                label, value = line.rsplit(":", 1)
                values[by_label[label.strip()]] = float(value)
        return cls(**values)
