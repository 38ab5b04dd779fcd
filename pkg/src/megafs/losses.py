"""Training objectives.

All image losses take ``(B, 3, H, W)`` batches and return the batch mean of a
per-sample distance.  Normalization convention for the L2 distances:

* pixels and perceptual features: root-mean-square difference
  (``||a - b||_2 / sqrt(n)``), so a uniform offset of 0.1 costs exactly 0.1
* landmarks and latent codes: plain Euclidean distance

Each image is resized to the consuming model's input size first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from .errors import ConfigurationError, DimensionError, NumericError
from .oracles import OracleSet, resize_for


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _norm(diff, start_dim=1):
    return torch.linalg.vector_norm(diff.flatten(start_dim), dim=-1)


def rec_loss(x, x_hat):
    _same_shape(x, x_hat)
    n = x[0].numel()
    return (_norm(x - x_hat) / math.sqrt(n)).mean()


def lpips_loss(x, x_hat, feature_extractor):
    _same_shape(x, x_hat)
    fa = feature_extractor(resize_for(feature_extractor, x))
    fb = feature_extractor(resize_for(feature_extractor, x_hat))
    diff = torch.cat([(a - b).flatten(1) for a, b in zip(fa, fb)], dim=1)
    return (_norm(diff) / math.sqrt(diff.shape[1])).mean()


def cosine(a, b):
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise NumericError("zero-norm embedding")
    # round-off can push |cos| past 1; clamp so 1 - cos stays in [0, 2]
    return ((a * b).sum(dim=-1) / (na * nb)).clamp(-1.0, 1.0)


def id_loss(x, x_hat, recognizer):
    ea = recognizer(resize_for(recognizer, x))
    eb = recognizer(resize_for(recognizer, x_hat))
    return (1 - cosine(ea, eb)).mean()


def ldm_loss(x, x_hat, landmarks):
    pa = landmarks(resize_for(landmarks, x))
    pb = landmarks(resize_for(landmarks, x_hat))
    return _norm(pa - pb).mean()


def norm_loss(high_s, transferred):
    """Euclidean distance between code matrices; ``(N, D)`` or ``(B, N, D)``."""
    _same_shape(high_s, transferred)
    if high_s.dim() == 2:
        return torch.linalg.vector_norm(high_s - transferred)
    return _norm(high_s - transferred).mean()


@dataclass(frozen=True)
class _Weights:
    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"loss weight {f.name}={v} must be finite and >= 0")

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class LossWeightsInv(_Weights):
    rec: float = 1.0
    lpips: float = 0.8
    id: float = 1.0
    ldm: float = 1000.0


@dataclass(frozen=True)
class LossWeightsSwap(_Weights):
    rec: float = 8.0
    lpips: float = 32.0
    id: float = 24.0
    ldm: float = 100000.0
    norm: float = 32.0


@dataclass
class LossReport:
    terms: dict[str, torch.Tensor]
    weights: dict[str, float]
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.floats().items())

    @staticmethod
    def parse_text(text: str) -> dict[str, float]:
        out = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                out[k.strip()] = float(v)
        return out

    def first_nonfinite(self) -> str | None:
        for k, v in self.terms.items():
            if not bool(torch.isfinite(v).all()):
                return k
        if not bool(torch.isfinite(self.total).all()):
            return "total"
        return None


def combine(terms: dict, weights: _Weights | dict) -> LossReport:
    w = weights.as_dict() if isinstance(weights, _Weights) else dict(weights)
    if set(w) != set(terms):
        raise ConfigurationError(f"terms {sorted(terms)} do not match weights {sorted(w)}")
    terms = {k: v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=torch.float64)
             for k, v in terms.items()}
    total = sum(w[k] * terms[k] for k in terms)
    return LossReport(terms, w, total)


def l_inv(x, x_hat, oracles: OracleSet, weights: LossWeightsInv = LossWeightsInv()) -> LossReport:
    oracles.require()
    terms = {
        "rec": rec_loss(x, x_hat),
        "lpips": lpips_loss(x, x_hat, oracles.feature_extractor),
        "id": id_loss(x, x_hat, oracles.recognizer),
        "ldm": ldm_loss(x, x_hat, oracles.landmarks),
    }
    return combine(terms, weights)


def l_swap(x_s, x_t, x_hat_s, x_hat_t, y_s2t, high_s, transferred, oracles: OracleSet,
           weights: LossWeightsSwap = LossWeightsSwap()) -> LossReport:
    oracles.require()
    _same_shape(x_t, y_s2t)
    terms = {
        "rec": rec_loss(x_s, x_hat_s) + rec_loss(x_t, x_hat_t),
        "lpips": lpips_loss(x_t, y_s2t, oracles.feature_extractor),
        "id": id_loss(x_s, y_s2t, oracles.recognizer),
        "ldm": ldm_loss(x_t, y_s2t, oracles.landmarks),
        "norm": norm_loss(high_s, transferred),
    }
    return combine(terms, weights)
