"""Latent-code manipulators for identity transfer.

* :class:`FTM` - Face Transfer Module.  One block per high code; each block
  chains three transfer cells and blends the refined source/target codes
  with a learned per-dimension gate.
* :func:`lcr_compose` - Latent Code Replacement, the parameter-free baseline.
* :class:`IDInjection` - SPADE-style residual modulation of the target codes
  by a source identity code.

Transfer cell, for concatenated input ``c = [l_s, l_t]``::

    l_s' = tanh(K2_s(c)) + sigmoid(K1_s(c)) * l_s
    l_t' = tanh(K2_t(c)) + sigmoid(K1_t(c)) * l_t

Cells in a block share architecture, not weights, and each cell consumes
the refined pair from the previous one.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .errors import CheckpointError, DimensionError
from .latent import DEFAULT_CODE_DIM, HierLatent, WPlusLatent, merge_codes

CELLS_PER_BLOCK = 3


def _init_linear(layer: nn.Linear, std=0.01):
    nn.init.normal_(layer.weight, std=std)
    nn.init.zeros_(layer.bias)


class TransferBranch(nn.Module):
    """K1 (gate) and K2 (shift) for one of the two refined codes."""

    def __init__(self, code_dim):
        super().__init__()
        self.k1 = nn.Linear(2 * code_dim, code_dim)
        self.k2 = nn.Linear(2 * code_dim, code_dim)
        _init_linear(self.k1)
        _init_linear(self.k2)

    def forward(self, lc, l):
        return torch.tanh(self.k2(lc)) + torch.sigmoid(self.k1(lc)) * l


class TransferCell(nn.Module):
    def __init__(self, code_dim=DEFAULT_CODE_DIM):
        super().__init__()
        self.code_dim = code_dim
        self.src = TransferBranch(code_dim)
        self.tgt = TransferBranch(code_dim)

    def forward(self, l_s, l_t):
        lc = torch.cat([l_s, l_t], dim=-1)
        return self.src(lc, l_s), self.tgt(lc, l_t)


class TransferBlock(nn.Module):
    def __init__(self, code_dim=DEFAULT_CODE_DIM):
        super().__init__()
        self.code_dim = code_dim
        self.cells = nn.ModuleList(TransferCell(code_dim) for _ in range(CELLS_PER_BLOCK))
        self.omega = nn.Parameter(torch.zeros(code_dim))

    def refine(self, l_s, l_t):
        for cell in self.cells:
            l_s, l_t = cell(l_s, l_t)
        return l_s, l_t

    def forward(self, l_s, l_t):
        s_hat, t_hat = self.refine(l_s, l_t)
        gate = torch.sigmoid(self.omega)
        return gate * t_hat + (1 - gate) * s_hat


class FTM(nn.Module):
    """``(…, N_high, D)`` source and target high codes -> transferred codes."""

    def __init__(self, num_high=14, code_dim=DEFAULT_CODE_DIM):
        super().__init__()
        self.num_high = num_high
        self.code_dim = code_dim
        self.blocks = nn.ModuleList(TransferBlock(code_dim) for _ in range(num_high))

    def forward(self, high_s, high_t):
        return torch.stack([block(high_s[..., i, :], high_t[..., i, :])
                            for i, block in enumerate(self.blocks)], dim=-2)


def _check_width(l, d, name):
    if l.shape[-1] != d:
        raise DimensionError(f"{name} has width {l.shape[-1]}, expected {d}")


def transfer_cell(l_s, l_t, cell: TransferCell):
    _check_width(l_s, cell.code_dim, "l_s")
    _check_width(l_t, cell.code_dim, "l_t")
    return cell(l_s, l_t)


def transfer_block(l_s, l_t, block: TransferBlock):
    _check_width(l_s, block.code_dim, "l_s")
    _check_width(l_t, block.code_dim, "l_t")
    return block(l_s, l_t)


def ftm_forward(high_s, high_t, params: FTM):
    expected = (params.num_high, params.code_dim)
    if high_s.shape != high_t.shape or tuple(high_s.shape[-2:]) != expected:
        raise DimensionError(
            f"FTM expects two (…, {expected[0]}, {expected[1]}) inputs, "
            f"got {tuple(high_s.shape)} and {tuple(high_t.shape)}")
    return params(high_s, high_t)


def lcr_compose(src, tgt):
    """Target's constant and low codes with the source's high codes."""
    if src.resolution != tgt.resolution:
        raise DimensionError(f"resolution mismatch: {src.resolution} vs {tgt.resolution}")
    if type(src) is not type(tgt):
        raise DimensionError("cannot mix W+ and W++ latents")
    if isinstance(tgt, WPlusLatent):
        return WPlusLatent(merge_codes(tgt.low_codes, src.high_codes), tgt.resolution)
    return tgt.replace(high_codes=src.high_codes)


# -- ID injection ----------------------------------------------------------

def _normalize_rows(x, eps=1e-5):
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class InjectionRow(nn.Module):
    """``out = x + gamma(z) * norm(x) + beta(z)`` with ``h = lrelu(W_s z + b_s)``.

    ``norm`` standardizes x over its D entries.  ``gamma`` and ``beta`` start at
    zero so the row starts as the identity map.
    """

    def __init__(self, code_dim, hidden=None):
        super().__init__()
        hidden = hidden or code_dim
        self.shared = nn.Linear(code_dim, hidden)
        self.gamma = nn.Linear(hidden, code_dim)
        self.beta = nn.Linear(hidden, code_dim)
        _init_linear(self.shared, std=code_dim ** -0.5)
        nn.init.zeros_(self.gamma.weight)
        nn.init.zeros_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, x, id_code):
        h = F.leaky_relu(self.shared(id_code), 0.2)
        return x + self.gamma(h) * _normalize_rows(x) + self.beta(h)


class IDInjection(nn.Module):
    def __init__(self, num_high=14, code_dim=DEFAULT_CODE_DIM, hidden=None):
        super().__init__()
        self.num_high = num_high
        self.code_dim = code_dim
        self.hidden = hidden or code_dim
        self.rows = nn.ModuleList(InjectionRow(code_dim, self.hidden) for _ in range(num_high))

    def forward(self, high_t, id_code):
        return torch.stack([row(high_t[..., i, :], id_code)
                            for i, row in enumerate(self.rows)], dim=-2)


def identity_code(high_s):
    """Source identity code fed to ID injection: mean of the source high codes."""
    return high_s.mean(dim=-2)


def id_inject(high_t, id_code, params: IDInjection):
    if tuple(high_t.shape[-2:]) != (params.num_high, params.code_dim):
        raise DimensionError(
            f"expected (…, {params.num_high}, {params.code_dim}) codes, got {tuple(high_t.shape)}")
    if id_code.shape[-1] != params.code_dim or id_code.shape[:-1] != high_t.shape[:-2]:
        raise DimensionError(f"id_code shape {tuple(id_code.shape)} does not match codes")
    return params(high_t, id_code)


# -- checkpoints -----------------------------------------------------------

def save_manipulator(module: FTM | IDInjection, directory):
    kind = "ftm" if isinstance(module, FTM) else "id_injection"
    config = {"num_high": module.num_high, "code_dim": module.code_dim}
    if isinstance(module, IDInjection):
        config["hidden"] = module.hidden
    return checkpoint.save_checkpoint(directory, kind, config, module.state_dict())


def load_manipulator(directory, kind="ftm"):
    _, config, state = checkpoint.load_checkpoint(directory, kind=kind)
    try:
        module = FTM(**config) if kind == "ftm" else IDInjection(**config)
    except TypeError as exc:
        raise CheckpointError(f"{directory}: bad {kind} config: {exc}") from exc
    checkpoint.load_into(module, state, source=str(directory))
    return module
