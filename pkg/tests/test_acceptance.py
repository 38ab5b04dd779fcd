"""Acceptance criteria 1-9.  Each test prints one ``criterion N: PASS|FAIL`` line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear even without -s).
"""
import math
import time

import numpy as np
import pytest
import torch

import scalar_ref
from conftest import to_hwc
from fdcheck import check_grad, generic_point
from megafs.encoder import EncoderConfig, HieRFE, encode
from megafs.evaluation import IdentityGallery, fid, id_retrieval, inversion_metrics
from megafs.latent import HierLatent, num_high_codes, num_style_codes
from megafs.losses import (LossWeightsInv, LossWeightsSwap, id_loss, l_inv, l_swap, ldm_loss,
                           lpips_loss, norm_loss, rec_loss)
from megafs.manipulators import FTM, IDInjection, ftm_forward, id_inject, transfer_block, transfer_cell
from megafs.oracles import OracleSet, ToyFeatureExtractor, ToyLandmarkPredictor, ToyRecognizer
from megafs.pipeline import MegaFS
from megafs.synthesis import (GeneratorConfig, GeneratorHandle, ToyStyleGenerator, build_generator,
                              render, synthesize, synthesize_batch)
from megafs.toy import toy_encoder_config, toy_generator_config


@pytest.fixture
def verdict(capsys):
    def emit(n, checks, detail=""):
        failed = [name for name, ok in checks.items() if not ok]
        line = f"criterion {n}: {'FAIL' if failed else 'PASS'}"
        if detail:
            line += f" ({detail})"
        if failed:
            line += " failed: " + ", ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert not failed, line
    return emit


def _randomize(module, seed, scale):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def _randn(seed, *shape):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


# 1 ------------------------------------------------------------------------

def test_criterion_1_ftm_algebra(verdict):
    t0 = time.perf_counter()
    gate_ok = shift_ok = blend_ok = rows_ok = True
    for seed in range(1000):
        ftm = _randomize(FTM(4, 8).double(), seed, scale=0.5)
        hs, ht = _randn(10_000 + seed, 4, 8), _randn(20_000 + seed, 4, 8)
        out = ftm_forward(hs, ht, ftm)
        for i, block in enumerate(ftm.blocks):
            ls, lt = hs[i], ht[i]
            for cell in block.cells:
                lc = torch.cat([ls, lt])
                for br in (cell.src, cell.tgt):
                    g = torch.sigmoid(br.k1(lc))
                    s = torch.tanh(br.k2(lc))
                    gate_ok &= bool(((g > 0) & (g < 1)).all())
                    shift_ok &= bool(((s > -1) & (s < 1)).all())
                ls, lt = cell(ls, lt)
            lo, hi = torch.minimum(ls, lt), torch.maximum(ls, lt)
            blend_ok &= bool(((out[i] >= lo - 1e-12) & (out[i] <= hi + 1e-12)).all())
        # row independence: perturbing row j leaves every other row unchanged
        j = seed % 4
        hs2, ht2 = hs.clone(), ht.clone()
        hs2[j] += _randn(30_000 + seed, 8)
        ht2[j] += _randn(40_000 + seed, 8)
        out2 = ftm_forward(hs2, ht2, ftm)
        keep = [r for r in range(4) if r != j]
        rows_ok &= bool(torch.equal(out[keep], out2[keep]))
    elapsed = time.perf_counter() - t0
    verdict(1, {"sigmoid gate in (0,1)": gate_ok, "tanh shift in (-1,1)": shift_ok,
                "convex blend bound": blend_ok, "row independence": rows_ok,
                "runtime < 60s": elapsed < 60}, f"1000 instances, {elapsed:.1f}s")


# 2 ------------------------------------------------------------------------

def _max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def test_criterion_2_scalar_oracle(verdict):
    t0 = time.perf_counter()
    worst = {"cell": 0.0, "block": 0.0, "ftm": 0.0, "inject": 0.0}
    for seed in range(100):
        ftm = _randomize(FTM(4, 8).double(), seed, scale=0.5)
        inj = _randomize(IDInjection(4, 8).double(), seed + 500, scale=0.5)
        hs, ht = _randn(seed + 1000, 4, 8), _randn(seed + 2000, 4, 8)
        z = _randn(seed + 3000, 8)
        cell = ftm.blocks[0].cells[0]
        got_s, got_t = transfer_cell(hs[0], ht[0], cell)
        ref_s, ref_t = scalar_ref.cell(cell, hs[0].tolist(), ht[0].tolist())
        worst["cell"] = max(worst["cell"], _max_abs(got_s.detach(), ref_s),
                            _max_abs(got_t.detach(), ref_t))
        block = ftm.blocks[1]
        worst["block"] = max(worst["block"], _max_abs(
            transfer_block(hs[1], ht[1], block).detach(),
            scalar_ref.block(block, hs[1].tolist(), ht[1].tolist())))
        worst["ftm"] = max(worst["ftm"], _max_abs(
            ftm_forward(hs, ht, ftm).detach(), scalar_ref.ftm(ftm, hs.tolist(), ht.tolist())))
        worst["inject"] = max(worst["inject"], _max_abs(
            id_inject(ht, z, inj).detach(), scalar_ref.inject(inj, ht.tolist(), z.tolist())))
    elapsed = time.perf_counter() - t0
    checks = {f"{k} within 1e-6": v <= 1e-6 for k, v in worst.items()}
    checks["runtime < 60s"] = elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(2, checks, f"100 cases, max abs err {detail}, {elapsed:.1f}s")


# 3 ------------------------------------------------------------------------

def _img(seed, size=16):
    return (_randn(seed, 2, 3, size, size).clamp(-2, 2) * 0.45)


def test_criterion_3_gradients(verdict):
    t0 = time.perf_counter()
    torch.manual_seed(0)
    o = OracleSet(ToyFeatureExtractor(input_size=16), ToyRecognizer(input_size=16, pool_size=4),
                  ToyLandmarkPredictor(input_size=16)).to(torch.float64)
    errs = {}
    x = _img(1)
    y = _img(2).requires_grad_()
    errs["rec"] = check_grad(lambda: rec_loss(x, y), [y])
    errs["lpips"] = check_grad(lambda: lpips_loss(x, y, o.feature_extractor), [y])
    errs["id"] = check_grad(lambda: id_loss(x, y, o.recognizer), [y])
    errs["ldm"] = check_grad(lambda: ldm_loss(x, y, o.landmarks), [y])
    hs = _randn(3, 4, 6)
    tr = _randn(4, 4, 6).requires_grad_()
    errs["norm"] = check_grad(lambda: norm_loss(hs, tr), [tr])
    errs["l_inv"] = check_grad(lambda: l_inv(x, y, o).total, [y])
    xs = _img(5)
    errs["l_swap"] = check_grad(lambda: l_swap(xs, x, y, y, y, hs, tr, o).total, [y, tr])

    ftm = _randomize(FTM(2, 8).double(), 5, scale=0.3)
    a, b, w = _randn(6, 2, 8).requires_grad_(), _randn(7, 2, 8).requires_grad_(), _randn(8, 2, 8)
    block, cell = ftm.blocks[0], ftm.blocks[0].cells[1]
    errs["cell"] = check_grad(lambda: sum((t * w[0]).sum() for t in cell(a[0], b[0])),
                              list(cell.parameters()) + [a, b])
    errs["block"] = check_grad(lambda: (block(a[0], b[0]) * w[0]).sum(),
                               list(block.parameters()) + [a, b])
    errs["ftm"] = check_grad(lambda: (ftm(a, b) * w).sum(), list(ftm.parameters()) + [a, b])
    inj = _randomize(IDInjection(2, 8).double(), 9, scale=0.3)
    z = _randn(10, 8).requires_grad_()
    errs["id_inject"] = check_grad(lambda: (inj(a, z) * w).sum(), list(inj.parameters()) + [a, z])

    torch.manual_seed(0)
    g = GeneratorHandle(ToyStyleGenerator(toy_generator_config(16, 4)).double())
    codes = (_randn(11, 1, 6, 4) * 0.5).requires_grad_()
    const = _randn(12, 1, 4, 4, 4).requires_grad_()
    wg = _randn(13, 1, 3, 16, 16)
    errs["generator"] = check_grad(lambda: (synthesize_batch(const, codes, g) * wg).sum(),
                                   [codes, const])
    torch.manual_seed(0)
    enc = generic_point(HieRFE(toy_encoder_config(32, 4)).double().eval())
    xe = (torch.rand(2, 3, 32, 32, dtype=torch.float64) * 1.8 - 0.9).requires_grad_()
    wc, wk = _randn(14, 2, 4, 4, 4), _randn(15, 2, 8, 4)

    def enc_loss():
        c, k = enc(xe)
        return (c * wc).sum() + (k * wk).sum()

    full = check_grad(enc_loss, list(enc.parameters()) + [xe], max_coords=8)
    elapsed = time.perf_counter() - t0
    checks = {f"{k} < 1e-4": v < 1e-4 for k, v in errs.items()}
    checks["full encoder < 1e-3"] = full < 1e-3
    checks["runtime < 300s"] = elapsed < 300
    worst = max(errs.values())
    verdict(3, checks, f"worst rel err {worst:.1e}, full encoder {full:.1e}, {elapsed:.1f}s")


# 4 ------------------------------------------------------------------------

def test_criterion_4_composite_arithmetic(verdict, oracles):
    expected_inv = {"rec": 1.0, "lpips": 0.8, "id": 1.0, "ldm": 1000.0}
    expected_swap = {"rec": 8.0, "lpips": 32.0, "id": 24.0, "ldm": 100000.0, "norm": 32.0}
    x, y = _img(20, 32).float(), _img(21, 32).float()
    xs, ys, yt = _img(22, 32).float(), _img(23, 32).float(), _img(24, 32).float()
    hs, tr = torch.randn(2, 4, 32), torch.randn(2, 4, 32)
    rep_inv = l_inv(x, y, oracles)
    hand_inv = sum(expected_inv[k] * float(v) for k, v in {
        "rec": rec_loss(x, y), "lpips": lpips_loss(x, y, oracles.feature_extractor),
        "id": id_loss(x, y, oracles.recognizer), "ldm": ldm_loss(x, y, oracles.landmarks)}.items())
    rep_swap = l_swap(xs, x, ys, yt, y, hs, tr, oracles)
    hand_swap = sum(expected_swap[k] * float(v) for k, v in {
        "rec": rec_loss(xs, ys) + rec_loss(x, yt),
        "lpips": lpips_loss(x, y, oracles.feature_extractor),
        "id": id_loss(xs, y, oracles.recognizer), "ldm": ldm_loss(x, y, oracles.landmarks),
        "norm": norm_loss(hs, tr)}.items())
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-12)  # noqa: E731
    e_inv, e_swap = rel(float(rep_inv.total), hand_inv), rel(float(rep_swap.total), hand_swap)
    verdict(4, {"default inverse weights": LossWeightsInv().as_dict() == expected_inv,
                "default swap weights": LossWeightsSwap().as_dict() == expected_swap,
                "L_inv within 1e-6 rel": e_inv <= 1e-6, "L_swap within 1e-6 rel": e_swap <= 1e-6},
            f"rel err {e_inv:.1e} / {e_swap:.1e}")


# 5, 6 --------------------------------------------------------------------

def test_criterion_5_frozen_checksums(verdict, toy_run):
    c = toy_run.checksums
    verdict(5, {"generator unchanged by train_hierfe": c["gen_before_stage1"] == c["gen_after_stage1"],
                "encoder unchanged by train_ftm": c["enc_before_stage2"] == c["enc_after_stage2"],
                "generator unchanged by train_ftm": c["gen_before_stage2"] == c["gen_after_stage2"]})


def test_criterion_6_toy_convergence(verdict, toy_run):
    i1, f1 = toy_run.encoder_log.smoothed(25)
    i2, f2 = toy_run.ftm_log.smoothed(25)
    wall = toy_run.encoder_log.wall_clock + toy_run.ftm_log.wall_clock
    verdict(6, {"stage 1 < 0.5x": f1 < 0.5 * i1, "stage 2 < 0.7x": f2 < 0.7 * i2,
                "runtime < 30 min": wall < 1800},
            f"stage 1 ratio {f1 / i1:.3f}, stage 2 ratio {f2 / i2:.3f}, {wall:.0f}s")


# 7 ------------------------------------------------------------------------

def test_criterion_7_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    a = rng.standard_normal((500, 8))
    f_same = fid(a, a)
    f_gauss = fid(rng.standard_normal((10000, 2)), rng.standard_normal((10000, 2)) + 1.0)
    emb = rng.standard_normal((5, 6))
    labels = ["a", "b", "c", "d", "e"]
    gallery = IdentityGallery.from_embeddings(labels, emb)
    exact_self = id_retrieval(emb, labels, gallery) == 100.0
    g3 = IdentityGallery.from_embeddings(["a", "b", "c"], np.eye(3))
    probes = np.array([[1.0, 0.1, 0], [0.1, 1.0, 0], [0.9, 0, 0.2]])
    one_wrong = abs(id_retrieval(probes, ["a", "b", "c"], g3) - 200 / 3) < 0.01
    imgs = torch.rand(4, 3, 16, 16) * 2 - 1
    inv = inversion_metrics(imgs, imgs.clone(), ToyFeatureExtractor(input_size=16),
                            ToyRecognizer(input_size=16))
    elapsed = time.perf_counter() - t0
    verdict(7, {"fid(a,a) <= 1e-6": f_same <= 1e-6, "Gaussian FID within 0.1 of 2": abs(f_gauss - 2) < 0.1,
                "retrieval exact on self gallery": exact_self, "retrieval 66.67% case": one_wrong,
                "inversion (0,0,0%)": (inv.lpips, inv.mse, inv.failure_rate) == (0.0, 0.0, 0.0),
                "runtime < 120s": elapsed < 120},
            f"fid(a,a)={f_same:.1e}, Gaussian FID={f_gauss:.4f}")


# 8 ------------------------------------------------------------------------

class _Guarded:
    def __init__(self, latent, log):
        self._latent, self._log = latent, log

    @property
    def high_codes(self):
        return self._latent.high_codes

    def __getattr__(self, name):
        self._log.append(name)
        raise AttributeError(f"source latent field {name} read during swap")


def _toy_pipe(manipulator="FTM"):
    gen = build_generator(toy_generator_config(), seed=0)
    torch.manual_seed(0)
    enc = HieRFE(toy_encoder_config()).eval()
    ftm = _randomize(FTM(enc.cfg.num_high, 32), 3, scale=0.2)
    return MegaFS(enc, gen, manipulator, ftm=ftm)


def test_criterion_8_pipeline_identities(verdict, faces):
    xs, xt = to_hwc(faces)[:2]
    lcr = _toy_pipe("LCR")
    self_swap = torch.equal(lcr.swap(xs, xs).image, lcr.reconstruct(xs))

    pipe = _toy_pipe("FTM")
    reads, calls = [], []
    real = pipe.encode

    def spy(image):
        calls.append(image)
        lat = real(image)
        return _Guarded(lat, reads) if len(calls) == 1 else lat

    pipe.encode = spy
    try:
        guarded = pipe.swap(xs, xt).image
        discards = not reads
    except AttributeError:
        guarded, discards = None, False
    pipe.encode = real
    src, tgt = real(xs), real(xt)
    scrambled = src.replace(constant_input=torch.randn_like(src.constant_input) * 5,
                            low_codes=torch.randn_like(src.low_codes) * 5)
    with torch.no_grad():
        alt = synthesize(tgt.constant_input, tgt.low_codes, pipe.manipulate(scrambled, tgt),
                         pipe.generator)
    discards &= guarded is not None and torch.equal(alt, guarded)

    reproducible = torch.equal(_toy_pipe().swap(xs, xt).image, _toy_pipe().swap(xs, xt).image)
    verdict(8, {"LCR self-swap == reconstruction": self_swap,
                "swap discards C_s and L_s^low": discards,
                "seeded swap bit-reproducible": reproducible})


# 9 ------------------------------------------------------------------------

def test_criterion_9_shape_conformance(verdict):
    checks = {}
    for res in (32, 64, 128):
        n = 2 * int(math.log2(res)) - 2
        torch.manual_seed(0)
        enc = HieRFE(toy_encoder_config(res, 8)).eval()
        gen = build_generator(toy_generator_config(res, 8))
        lat = encode(torch.zeros(res, res, 3), enc)
        img = render(lat, gen)
        checks[f"R={res}: {n} codes"] = (lat.codes.shape == (n, 8) and num_style_codes(res) == n
                                         and gen.num_style_inputs == n
                                         and lat.high_codes.shape[0] == n - 4)
        checks[f"R={res}: image shape"] = img.shape == (res, res, 3)
    big = EncoderConfig(resolution=1024)
    checks["1024: 18 codes, N_high 14"] = (big.num_codes == 18 and big.num_high == 14
                                           and num_high_codes(1024) == 14
                                           and GeneratorConfig(resolution=1024).num_ws == 18)
    verdict(9, checks)
