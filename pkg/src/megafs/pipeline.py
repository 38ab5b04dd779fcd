"""End-to-end swapping: encode both faces, manipulate high codes, synthesize.

The swapped face is generated from the *target's* constant input and low
codes plus the manipulated high codes.  Nothing from the source except its
high codes is read after encoding.

Config file (INI)::

    [pipeline]
    resolution = 256
    latent_space = W++          ; or W+
    manipulator = FTM           ; FTM | LCR | ID_INJECTION
    seed = 0

    [checkpoints]               ; paths relative to the config file
    encoder = ckpt/encoder
    generator = ckpt/generator
    ftm = ckpt/ftm
    id_injection = ckpt/id_injection

    [oracles]                   ; plug-in names, optional *_size overrides
    feature_extractor = toy
    recognizer = toy
    landmarks = toy

    [encoder]                   ; EncoderConfig fields for train-encoder
    backbone_width = 4
    blocks = 1;1;1;1

    [train]                     ; TrainConfig fields
    learning_rate = 0.01
    batch_size = 4
"""
from __future__ import annotations

import configparser
import csv
import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .checkpoint import file_checksum
from .encoder import HieRFE, LatentSpace, encode, load_encoder
from .errors import CheckpointError, ConfigurationError, MegaFSError
from .imageio import load_image, save_image
from .latent import validate_image
from .manipulators import FTM, IDInjection, id_inject, identity_code, load_manipulator
from .synthesis import GeneratorHandle, load_generator, synthesize


class Manipulator(str, enum.Enum):
    FTM = "FTM"
    LCR = "LCR"
    ID_INJECTION = "ID_INJECTION"


@dataclass
class PipelineConfig:
    resolution: int
    latent_space: LatentSpace = LatentSpace.W_PLUS_PLUS
    manipulator: Manipulator = Manipulator.FTM
    encoder: Path | None = None
    generator: Path | None = None
    ftm: Path | None = None
    id_injection: Path | None = None
    oracles: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    encoder_settings: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        try:
            name = getattr(self.manipulator, "value", self.manipulator)
            self.manipulator = Manipulator(str(name).upper())
        except ValueError:
            raise ConfigurationError(f"unknown manipulator {self.manipulator!r}") from None
        self.latent_space = LatentSpace(self.latent_space)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.read(path)
        if "pipeline" not in parser:
            raise ConfigurationError(f"{path}: missing [pipeline] section")
        p = parser["pipeline"]
        base = path.parent
        ckpts = parser["checkpoints"] if "checkpoints" in parser else {}

        def resolve(key):
            value = ckpts.get(key)
            if not value:
                return None
            full = (base / value).resolve()
            if not full.exists():
                raise FileNotFoundError(f"{path}: checkpoint path for {key} does not exist: {full}")
            return full

        try:
            return cls(
                resolution=p.getint("resolution"),
                latent_space=p.get("latent_space", "W++"),
                manipulator=p.get("manipulator", "FTM"),
                encoder=resolve("encoder"), generator=resolve("generator"),
                ftm=resolve("ftm"), id_injection=resolve("id_injection"),
                oracles=dict(parser["oracles"]) if "oracles" in parser else {},
                train=dict(parser["train"]) if "train" in parser else {},
                encoder_settings=dict(parser["encoder"]) if "encoder" in parser else {},
                seed=p.getint("seed", 0),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc


@dataclass
class SwapResult:
    image: torch.Tensor
    source_latent: object
    target_latent: object
    transferred_codes: torch.Tensor
    timings: dict[str, float]


class MegaFS:
    def __init__(self, encoder: HieRFE, generator: GeneratorHandle,
                 manipulator: Manipulator | str = Manipulator.FTM,
                 ftm: FTM | None = None, id_injection: IDInjection | None = None):
        self.encoder = encoder.eval()
        self.generator = generator
        self.manipulator = Manipulator(manipulator)
        self.ftm = ftm.eval() if ftm is not None else None
        self.id_injection = id_injection.eval() if id_injection is not None else None
        cfg = encoder.cfg
        if cfg.resolution != generator.resolution or cfg.code_dim != generator.code_dim:
            raise CheckpointError(
                f"encoder ({cfg.resolution}px, D={cfg.code_dim}) does not match generator "
                f"({generator.resolution}px, D={generator.code_dim})")
        if cfg.latent_space is LatentSpace.W_PLUS_PLUS and not generator.accepts_external_constant:
            raise CheckpointError("W++ encoder needs a generator that accepts an external constant")
        module = {Manipulator.FTM: self.ftm, Manipulator.ID_INJECTION: self.id_injection}.get(
            self.manipulator, ...)
        if module is None:
            raise ConfigurationError(f"manipulator {self.manipulator.value} has no checkpoint")
        if module is not ... and (module.num_high, module.code_dim) != (cfg.num_high, cfg.code_dim):
            raise CheckpointError(
                f"{self.manipulator.value} is built for ({module.num_high}, {module.code_dim}) "
                f"codes, encoder produces ({cfg.num_high}, {cfg.code_dim})")

    @property
    def resolution(self) -> int:
        return self.encoder.cfg.resolution

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "MegaFS":
        if cfg.encoder is None or cfg.generator is None:
            raise ConfigurationError("config needs encoder and generator checkpoints")
        gen = load_generator(cfg.generator, expected_resolution=cfg.resolution)
        enc = load_encoder(cfg.encoder, expected_resolution=cfg.resolution)
        if enc.cfg.latent_space is not cfg.latent_space:
            raise CheckpointError(
                f"encoder is {enc.cfg.latent_space.value}, config asks for {cfg.latent_space.value}")
        ftm = load_manipulator(cfg.ftm, "ftm") if cfg.ftm else None
        inj = load_manipulator(cfg.id_injection, "id_injection") if cfg.id_injection else None
        return cls(enc, gen, cfg.manipulator, ftm, inj)

    def encode(self, image: torch.Tensor):
        return encode(image, self.encoder)

    def manipulate(self, source_latent, target_latent) -> torch.Tensor:
        """Transferred high codes; reads only the source's high codes."""
        high_s = source_latent.high_codes
        if self.manipulator is Manipulator.LCR:
            return high_s
        high_t = target_latent.high_codes
        if self.manipulator is Manipulator.FTM:
            return self.ftm(high_s, high_t)
        return id_inject(high_t, identity_code(high_s), self.id_injection)

    @torch.no_grad()
    def swap(self, source: torch.Tensor, target: torch.Tensor) -> SwapResult:
        for img in (source, target):
            validate_image(img, self.resolution)
        t0 = time.perf_counter()
        src = self.encode(source)
        tgt = self.encode(target)
        t1 = time.perf_counter()
        transferred = self.manipulate(src, tgt)
        t2 = time.perf_counter()
        image = synthesize(tgt.constant_input, tgt.low_codes, transferred, self.generator)
        t3 = time.perf_counter()
        timings = {"encode": t1 - t0, "manipulate": t2 - t1, "generate": t3 - t2,
                   "total": t3 - t0}
        return SwapResult(image, src, tgt, transferred, timings)

    @torch.no_grad()
    def reconstruct(self, image: torch.Tensor) -> torch.Tensor:
        validate_image(image, self.resolution)
        lat = self.encode(image)
        return synthesize(lat.constant_input, lat.low_codes, lat.high_codes, self.generator)


# -- batch generation ------------------------------------------------------

MANIFEST_FIELDS = ("source", "target", "output", "sha256", "status", "error")


def read_pairs(pair_list_file) -> list[tuple[Path, Path]]:
    """Two-column CSV of image paths; relative paths resolve against the list's directory."""
    path = Path(pair_list_file)
    base = path.parent
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise ConfigurationError(f"{path}: expected 'source,target' rows, got {row}")
            s, t = (c.strip() for c in row)
            if (s, t) == ("source", "target"):
                continue
            pairs.append((base / s, base / t))
    return pairs


def output_name(source, target) -> str:
    return f"{Path(source).stem}_to_{Path(target).stem}.png"


def _swap_one(pipeline: MegaFS, source: Path, target: Path, out_dir: Path) -> dict:
    row = {"source": str(source), "target": str(target), "output": "", "sha256": "",
           "status": "ok", "error": ""}
    try:
        result = pipeline.swap(load_image(source), load_image(target))
        out = out_dir / output_name(source, target)
        save_image(result.image, out)
        row["output"], row["sha256"] = str(out), file_checksum(out)
    except (MegaFSError, OSError) as exc:
        row["status"], row["error"] = "failed", str(exc)
    return row


def batch_generate(pair_list_file, pipeline: MegaFS, out_dir, workers: int = 1) -> list[dict]:
    """Swap every listed pair; failures become manifest rows instead of aborting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = read_pairs(pair_list_file)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda p: _swap_one(pipeline, p[0], p[1], out_dir), pairs))
    else:
        rows = [_swap_one(pipeline, s, t, out_dir) for s, t in pairs]
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows

