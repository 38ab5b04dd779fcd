#!/usr/bin/env python3
"""What a transfer block does to one pair of codes, cell by cell.

Each cell gates a code by sigmoid(K1) in (0, 1) and shifts it by tanh(K2) in
(-1, 1); the block output is a per-dimension blend of the two refined codes.
"""
import torch

from megafs.manipulators import TransferBlock

torch.manual_seed(0)
block = TransferBlock(code_dim=6)
with torch.no_grad():
    for p in block.parameters():
        p.normal_(0, 0.7)

l_s, l_t = torch.randn(6), torch.randn(6)
print("source ", l_s.numpy().round(3))
print("target ", l_t.numpy().round(3))
s, t = l_s, l_t
for k, cell in enumerate(block.cells):
    lc = torch.cat([s, t])
    gate = torch.sigmoid(cell.src.k1(lc))
    shift = torch.tanh(cell.src.k2(lc))
    s, t = cell(s, t)
    print(f"cell {k}: gate {gate.detach().numpy().round(2)} shift {shift.detach().numpy().round(2)}")

w = torch.sigmoid(block.omega)
out = block(l_s, l_t)
print("blend w", w.detach().numpy().round(2))
print("output ", out.detach().numpy().round(3))
lo, hi = torch.minimum(s, t), torch.maximum(s, t)
print("inside [min, max] of refined codes:", bool(((out >= lo) & (out <= hi)).all()))
