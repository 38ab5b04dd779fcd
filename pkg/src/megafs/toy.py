"""Desk-scale model family and the two-stage toy experiment.

Everything here is small enough to train on one CPU in a few minutes:
resolution 32, 32-wide codes, a one-block-per-stage encoder backbone, and
toy perceptual oracles.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .checkpoint import state_checksum
from .data import image_stream, pair_stream, training_set
from .encoder import EncoderConfig, HieRFE
from .manipulators import FTM
from .oracles import OracleSet, ToyFeatureExtractor, ToyLandmarkPredictor, ToyRecognizer
from .synthesis import GeneratorConfig, GeneratorHandle, build_generator
from .trainer import TrainConfig, TrainLog, train_ftm, train_hierfe


def toy_generator_config(resolution=32, code_dim=32, **kw) -> GeneratorConfig:
    return GeneratorConfig(resolution=resolution, code_dim=code_dim,
                           channel_base=16 * resolution, channel_max=32, mapping_layers=2, **kw)


def toy_encoder_config(resolution=32, code_dim=32, **kw) -> EncoderConfig:
    kw.setdefault("backbone_width", 4)
    kw.setdefault("blocks", (1, 1, 1, 1))
    return EncoderConfig(resolution=resolution, code_dim=code_dim, **kw)


def toy_oracles(feature_size=64, recognizer_size=32, landmark_size=64) -> OracleSet:
    return OracleSet(ToyFeatureExtractor(input_size=feature_size),
                     ToyRecognizer(input_size=recognizer_size),
                     ToyLandmarkPredictor(input_size=landmark_size))


@dataclass
class ToyRun:
    generator: GeneratorHandle
    encoder: HieRFE
    ftm: FTM
    oracles: OracleSet
    images: torch.Tensor
    encoder_log: TrainLog
    ftm_log: TrainLog
    checksums: dict


def run_toy_training(steps=500, batch_size=8, n_faces=32, n_aux=96, seed=0,
                     initial_eval_batches=25, resolution=32, code_dim=32) -> ToyRun:
    """Stage 1 then stage 2 on synthetic faces plus generator samples.

    ``checksums`` records generator/encoder state before and after each stage.
    """
    gen = build_generator(toy_generator_config(resolution, code_dim), seed=seed)
    torch.manual_seed(seed)
    encoder = HieRFE(toy_encoder_config(resolution, code_dim))
    oracles = toy_oracles()
    images = training_set(gen, n_faces, n_aux, seed=seed)
    cfg = TrainConfig(steps=steps, batch_size=batch_size, seed=seed,
                      initial_eval_batches=initial_eval_batches)
    sums = {"gen_before_stage1": gen.checksum()}
    encoder, log1 = train_hierfe(image_stream(images, batch_size, seed), encoder, gen, oracles, cfg)
    sums["gen_after_stage1"] = gen.checksum()
    sums["enc_before_stage2"] = state_checksum(encoder)
    sums["gen_before_stage2"] = gen.checksum()
    torch.manual_seed(seed)
    ftm = FTM(encoder.cfg.num_high, code_dim)
    ftm, log2 = train_ftm(pair_stream(images, batch_size, seed + 1), ftm, encoder, gen, oracles,
                          cfg)
    sums["enc_after_stage2"] = state_checksum(encoder)
    sums["gen_after_stage2"] = gen.checksum()
    return ToyRun(gen, encoder, ftm, oracles, images, log1, log2, sums)
