"""Two-stage training with a frozen generator.

Stage 1 fits the encoder to reconstruct images through the generator.
Stage 2 fits the FTM with encoder and generator both frozen.  In stage 2 the
reconstructions for the rec term are self-swaps routed through the FTM
(``FTM(L_high, L_high)``); a bypassing reconstruction would carry no
gradient to the FTM at all.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import state_checksum
from .encoder import HieRFE, save_encoder
from .errors import ConfigurationError, NumericError
from .latent import merge_codes, split_codes
from .losses import LossWeightsInv, LossWeightsSwap, l_inv, l_swap
from .manipulators import FTM, save_manipulator
from .oracles import OracleSet
from .synthesis import GeneratorHandle, synthesize_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    weights_inv: LossWeightsInv = field(default_factory=LossWeightsInv)
    weights_swap: LossWeightsSwap = field(default_factory=LossWeightsSwap)
    checkpoint_interval: int = 0
    checkpoint_dir: str | None = None
    initial_eval_batches: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainLog:
    seed: int
    history: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    initial_total: float | None = None

    def totals(self) -> np.ndarray:
        return np.array([h["total"] for h in self.history])

    def smoothed(self, window=25) -> tuple[float, float]:
        """(initial, final) loss levels.

        Initial is the pre-training evaluation mean when one was run, else the
        step-0 loss; final is the mean over the last ``window`` steps.
        """
        t = self.totals()
        initial = self.initial_total if self.initial_total is not None else float(t[0])
        return initial, float(t[-window:].mean())

    def term(self, name) -> np.ndarray:
        return np.array([h[name] for h in self.history])

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for record in self.history:
                fh.write(json.dumps(record) + "\n")
            fh.write(json.dumps({"event": "end", "seed": self.seed, "steps": len(self.history),
                                 "initial_total": self.initial_total,
                                 "wall_clock": self.wall_clock}) + "\n")


def _grad_norm(params) -> float:
    sq = [p.grad.detach().pow(2).sum() for p in params if p.grad is not None]
    return float(torch.stack(sq).sum().sqrt()) if sq else 0.0


def _record(step, report, params) -> dict:
    bad = report.first_nonfinite()
    if bad is not None:
        raise NumericError(f"non-finite loss at step {step} (term '{bad}')")
    rec = {"step": step}
    rec.update(report.floats())
    rec["grad_norm"] = _grad_norm(params)
    return rec


def _forward(step, loss_fn):
    try:
        return loss_fn()
    except NumericError as exc:
        raise NumericError(f"non-finite value at step {step} (forward pass: {exc})") from exc


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)


def _initial_total(n, loss_fn, module) -> float | None:
    """Mean loss of the untrained model over ``n`` batches; module state is restored."""
    if not n:
        return None
    saved = {k: v.clone() for k, v in module.state_dict().items()}
    with torch.no_grad():
        values = [float(loss_fn()) for _ in range(n)]
    module.load_state_dict(saved)
    return float(np.mean(values))


def _maybe_checkpoint(cfg, step, save):
    if cfg.checkpoint_dir and cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
        save(Path(cfg.checkpoint_dir) / f"step_{step + 1:06d}")


def train_hierfe(data_stream, encoder: HieRFE, gen: GeneratorHandle, oracles: OracleSet,
                 cfg: TrainConfig) -> tuple[HieRFE, TrainLog]:
    """Fit ``encoder`` so that ``gen(encoder(x))`` reconstructs ``x`` under L_inv."""
    oracles.require()
    torch.manual_seed(cfg.seed)
    gen_sum = state_checksum(gen.module)
    params = [p for p in encoder.parameters() if p.requires_grad]
    opt = _adam(params, cfg)
    history = TrainLog(seed=cfg.seed)
    encoder.train()

    def loss():
        x = next(data_stream)
        const, codes = encoder(x)
        return l_inv(x, synthesize_batch(const, codes, gen), oracles, cfg.weights_inv)

    history.initial_total = _initial_total(cfg.initial_eval_batches, lambda: loss().total, encoder)
    start = time.perf_counter()
    for step in range(cfg.steps):
        report = _forward(step, loss)
        opt.zero_grad(set_to_none=True)
        if bool(torch.isfinite(report.total)):
            report.total.backward()
        history.history.append(_record(step, report, params))
        opt.step()
        _maybe_checkpoint(cfg, step, lambda d: save_encoder(encoder, d))
        if step % 50 == 0:
            log.info("stage1 step %d total %.4f", step, history.history[-1]["total"])
    history.wall_clock = time.perf_counter() - start
    encoder.eval()
    if state_checksum(gen.module) != gen_sum:
        raise RuntimeError("generator weights changed during encoder training")
    return encoder, history


def swap_forward(x_s, x_t, encoder: HieRFE, ftm: FTM, gen: GeneratorHandle):
    """Everything L_swap needs for one pair batch."""
    with torch.no_grad():
        c_s, codes_s = encoder(x_s)
        c_t, codes_t = encoder(x_t)
    low_s, high_s = split_codes(codes_s)
    low_t, high_t = split_codes(codes_t)
    transferred = ftm(high_s, high_t)
    y = synthesize_batch(c_t, merge_codes(low_t, transferred), gen)
    x_hat_s = synthesize_batch(c_s, merge_codes(low_s, ftm(high_s, high_s)), gen)
    x_hat_t = synthesize_batch(c_t, merge_codes(low_t, ftm(high_t, high_t)), gen)
    return dict(x_hat_s=x_hat_s, x_hat_t=x_hat_t, y_s2t=y, high_s=high_s, transferred=transferred)


def train_ftm(pair_stream, ftm: FTM, encoder: HieRFE, gen: GeneratorHandle, oracles: OracleSet,
              cfg: TrainConfig) -> tuple[FTM, TrainLog]:
    """Fit ``ftm`` under L_swap; ``encoder`` and ``gen`` stay bit-identical."""
    oracles.require()
    torch.manual_seed(cfg.seed)
    enc_sum, gen_sum = state_checksum(encoder), state_checksum(gen.module)
    flags = [p.requires_grad for p in encoder.parameters()]
    encoder.eval()
    encoder.requires_grad_(False)
    params = list(ftm.parameters())
    opt = _adam(params, cfg)
    history = TrainLog(seed=cfg.seed)
    ftm.train()

    def loss():
        x_s, x_t = next(pair_stream)
        out = swap_forward(x_s, x_t, encoder, ftm, gen)
        return l_swap(x_s, x_t, out["x_hat_s"], out["x_hat_t"], out["y_s2t"],
                      out["high_s"], out["transferred"], oracles, cfg.weights_swap)

    start = time.perf_counter()
    try:
        history.initial_total = _initial_total(cfg.initial_eval_batches,
                                               lambda: loss().total, ftm)
        for step in range(cfg.steps):
            report = _forward(step, loss)
            opt.zero_grad(set_to_none=True)
            if bool(torch.isfinite(report.total)):
                report.total.backward()
            history.history.append(_record(step, report, params))
            opt.step()
            _maybe_checkpoint(cfg, step, lambda d: save_manipulator(ftm, d))
            if step % 50 == 0:
                log.info("stage2 step %d total %.4f", step, history.history[-1]["total"])
    finally:
        for p, f in zip(encoder.parameters(), flags):
            p.requires_grad_(f)
    history.wall_clock = time.perf_counter() - start
    ftm.eval()
    if state_checksum(encoder) != enc_sum or state_checksum(gen.module) != gen_sum:
        raise RuntimeError("frozen modules changed during FTM training")
    return ftm, history
