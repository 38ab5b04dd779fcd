"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration, 2 I/O, 3 checkpoint, 4 numeric.
"""
from __future__ import annotations

import argparse
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

import torch

from . import evaluation
from .data import image_stream, load_image_dir, pair_stream
from .encoder import EncoderConfig, HieRFE, load_encoder, save_encoder
from .errors import (CapabilityError, CheckpointError, ConfigurationError, MegaFSError,
                     NumericError)
from .imageio import load_image, save_image
from .manipulators import FTM, IDInjection, save_manipulator
from .oracles import OracleSet, create_oracle
from .pipeline import MegaFS, PipelineConfig, batch_generate
from .synthesis import build_generator, load_generator, save_generator
from .toy import toy_encoder_config, toy_generator_config
from .trainer import TrainConfig, train_ftm, train_hierfe

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECKPOINT, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("megafs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config helpers --------------------------------------------------------

def train_config(settings: dict, seed=None, steps=None) -> TrainConfig:
    """TrainConfig from ``[train]`` strings; unknown keys are rejected."""
    hints = typing.get_type_hints(TrainConfig)
    kwargs = {}
    for key, value in settings.items():
        if key not in hints:
            raise ConfigurationError(f"unknown [train] key {key!r}")
        hint = hints[key]
        if hint is tuple[float, float]:
            kwargs[key] = tuple(float(v) for v in value.split(";"))
        elif hint in (int, float):
            kwargs[key] = hint(value)
        elif key == "checkpoint_dir":
            kwargs[key] = value
        else:
            raise ConfigurationError(f"[train] key {key!r} cannot be set from a config file")
    if seed is not None:
        kwargs["seed"] = seed
    if steps is not None:
        kwargs["steps"] = steps
    return TrainConfig(**kwargs)


def encoder_config(cfg: PipelineConfig, code_dim: int) -> EncoderConfig:
    d = {"resolution": cfg.resolution, "latent_space": cfg.latent_space.value,
         "code_dim": code_dim}
    for key, value in cfg.encoder_settings.items():
        if key in ("blocks", "code_split"):
            items = [v.strip() for v in value.split(";") if v.strip()]
            d[key] = [int(v) for v in items] if key == "blocks" else items
        else:
            d[key] = int(value)
    known = {f.name for f in fields(EncoderConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown [encoder] keys {sorted(unknown)}")
    return EncoderConfig.from_dict(d)


def oracle_set(cfg: PipelineConfig | None) -> OracleSet:
    settings = dict(cfg.oracles) if cfg else {}
    sizes = {}
    for kind in ("feature_extractor", "recognizer", "landmarks", "pose", "expression"):
        if f"{kind}_size" in settings:
            sizes[kind] = int(settings.pop(f"{kind}_size"))
    names = {k: settings.get(k, "toy") for k in ("feature_extractor", "recognizer", "landmarks")}
    return OracleSet.from_names(**names, sizes=sizes)


def _estimator(cfg: PipelineConfig | None, kind: str):
    settings = cfg.oracles if cfg else {}
    size = settings.get(f"{kind}_size")
    return create_oracle(kind, settings.get(kind, "toy"), **({"input_size": int(size)} if size else {}))


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.from_file(path)


# -- subcommands -----------------------------------------------------------

def cmd_train_encoder(args) -> int:
    cfg = _load_config(args.config)
    gen = load_generator(args.generator, expected_resolution=cfg.resolution)
    data = load_image_dir(args.data, cfg.resolution)
    tcfg = train_config(cfg.train, seed=args.seed, steps=args.steps)
    torch.manual_seed(tcfg.seed)
    encoder = HieRFE(encoder_config(cfg, gen.code_dim))
    encoder, history = train_hierfe(image_stream(data, tcfg.batch_size, tcfg.seed), encoder, gen,
                                    oracle_set(cfg), tcfg)
    out = Path(args.out)
    save_encoder(encoder, out)
    history.write_ndjson(out / "train_log.ndjson")
    print(f"encoder written to {out}")
    return EXIT_OK


def cmd_train_ftm(args) -> int:
    cfg = _load_config(args.config)
    if cfg.encoder is None:
        raise ConfigurationError("train-ftm needs [checkpoints] encoder in the config")
    gen = load_generator(args.generator, expected_resolution=cfg.resolution)
    encoder = load_encoder(cfg.encoder, expected_resolution=cfg.resolution)
    data = load_image_dir(args.data, cfg.resolution)
    tcfg = train_config(cfg.train, seed=args.seed, steps=args.steps)
    torch.manual_seed(tcfg.seed)
    ftm = FTM(encoder.cfg.num_high, encoder.cfg.code_dim)
    ftm, history = train_ftm(pair_stream(data, tcfg.batch_size, tcfg.seed), ftm, encoder, gen,
                             oracle_set(cfg), tcfg)
    out = Path(args.out)
    save_manipulator(ftm, out)
    history.write_ndjson(out / "train_log.ndjson")
    print(f"FTM written to {out}")
    return EXIT_OK


def cmd_swap(args) -> int:
    pipe = MegaFS.from_config(_load_config(args.config))
    result = pipe.swap(load_image(args.source), load_image(args.target))
    save_image(result.image, args.out)
    t = result.timings
    print(f"wrote {args.out} (encode {t['encode']:.3f}s, manipulate {t['manipulate']:.3f}s, "
          f"generate {t['generate']:.3f}s)")
    return EXIT_OK


def cmd_batch(args) -> int:
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    pipe = MegaFS.from_config(_load_config(args.config))
    rows = batch_generate(args.pairs, pipe, args.out_dir, workers=args.workers)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok} of {len(rows)} pairs swapped; manifest at {Path(args.out_dir) / 'manifest.csv'}")
    for r in rows:
        if r["status"] != "ok":
            print(f"failed: {r['source']} -> {r['target']}: {r['error']}", file=sys.stderr)
    if rows and ok == 0:
        return EXIT_IO
    return EXIT_OK


def cmd_invert(args) -> int:
    pipe = MegaFS.from_config(_load_config(args.config))
    save_image(pipe.reconstruct(load_image(args.image)), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _stem_index(directory) -> dict[str, Path]:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG images in {directory}")
    return {p.stem: p for p in paths}


def _match_swaps(swapped, sources, targets):
    """(swapped, source, target) triples from ``<src>_to_<tgt>.png`` names,
    falling back to sorted order when names do not parse."""
    sw, src, tgt = _stem_index(swapped), _stem_index(sources), _stem_index(targets)
    triples = []
    for stem, path in sw.items():
        s, sep, t = stem.partition("_to_")
        if not sep or s not in src or t not in tgt:
            break
        triples.append((path, src[s], tgt[t]))
    else:
        return triples
    if not len(sw) == len(src) == len(tgt):
        raise UsageError(f"cannot pair {len(sw)} swapped, {len(src)} source and {len(tgt)} "
                         "target images by name or by order")
    return list(zip(sw.values(), src.values(), tgt.values()))


def cmd_eval(args) -> int:
    cfg = _load_config(args.config) if args.config else None
    triples = _match_swaps(args.swapped, args.sources, args.targets)
    load = lambda paths: torch.stack([load_image(p).permute(2, 0, 1) for p in paths])
    swapped = load([t[0] for t in triples])
    sources = load([t[1] for t in triples])
    targets = load([t[2] for t in triples])
    oracles = oracle_set(cfg)

    src_index = _stem_index(args.sources)
    gallery_imgs = load(src_index.values())
    gallery = evaluation.IdentityGallery.from_embeddings(
        list(src_index), evaluation.embed(gallery_imgs, oracles.recognizer))
    probe_labels = [t[1].stem for t in triples]
    fid = None
    if len(triples) >= 2:
        fid = evaluation.fid(evaluation.pooled_features(swapped, oracles.feature_extractor),
                             evaluation.pooled_features(targets, oracles.feature_extractor))
    report = evaluation.MetricReport(
        id_retrieval=evaluation.id_retrieval(evaluation.embed(swapped, oracles.recognizer),
                                             probe_labels, gallery),
        id_similarity=evaluation.id_similarity(swapped, sources, oracles.recognizer),
        pose_error=evaluation.pose_error(swapped, targets, _estimator(cfg, "pose")),
        expression_error=evaluation.expression_error(swapped, targets,
                                                     _estimator(cfg, "expression")),
        fid=fid,
    )
    Path(args.report).write_text(report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK


CONFIG_TEMPLATE = """\
[pipeline]
resolution = {resolution}
latent_space = {latent_space}
manipulator = FTM
seed = {seed}

[checkpoints]
encoder = encoder
generator = generator
ftm = ftm
id_injection = id_injection

[oracles]
feature_extractor = toy
recognizer = toy
landmarks = toy
feature_extractor_size = {feature_size}
recognizer_size = {recognizer_size}
landmarks_size = {landmark_size}

[encoder]
backbone_width = {backbone_width}
blocks = 1;1;1;1

[train]
learning_rate = 0.01
batch_size = 8
steps = 500
initial_eval_batches = 25
"""


def cmd_init_toy(args) -> int:
    """Randomly initialized checkpoints plus a config, for smoke tests and demos."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(args.seed)
    gen = build_generator(toy_generator_config(args.resolution, args.code_dim), seed=args.seed)
    save_generator(gen, out / "generator")
    text = CONFIG_TEMPLATE.format(resolution=args.resolution, latent_space=args.latent_space,
                                  seed=args.seed, feature_size=64, recognizer_size=32,
                                  landmark_size=64, backbone_width=4)
    ecfg = toy_encoder_config(args.resolution, args.code_dim, latent_space=args.latent_space)
    encoder = HieRFE(ecfg)
    save_encoder(encoder, out / "encoder")
    save_manipulator(FTM(ecfg.num_high, args.code_dim), out / "ftm")
    save_manipulator(IDInjection(ecfg.num_high, args.code_dim), out / "id_injection")
    (out / "config.ini").write_text(text)
    print(f"toy checkpoints and config written to {out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="megafs", description="One-shot megapixel face swapping.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, what in (("train-encoder", cmd_train_encoder, "stage 1: fit the encoder"),
                           ("train-ftm", cmd_train_ftm, "stage 2: fit the FTM")):
        p = sub.add_parser(name, help=what)
        p.add_argument("--config", required=True)
        p.add_argument("--data", required=True, help="directory of PNG faces")
        p.add_argument("--generator", required=True, help="generator checkpoint directory")
        p.add_argument("--out", required=True, help="output checkpoint directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.set_defaults(func=fn)

    p = sub.add_parser("swap", help="swap one source face onto one target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("batch", help="swap every pair in a CSV list")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("invert", help="reconstruct an image through encoder and generator")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("eval", help="identity, attribute and FID metrics for a swap set")
    p.add_argument("--swapped", required=True)
    p.add_argument("--sources", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("init-toy", help="write random toy checkpoints and a config")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--code-dim", type=int, default=32)
    p.add_argument("--latent-space", default="W++", choices=["W++", "W+"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_toy)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (CheckpointError, CapabilityError)):
        return EXIT_CHECKPOINT
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (UsageError, MegaFSError, ValueError)):
        return EXIT_USAGE
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to an exit code, unknown errors re-raised
        code = exit_code(exc)
        print(f"megafs: error: {exc}", file=sys.stderr)
        return code
