"""Checkpoint directories.

Layout::

    <dir>/manifest.ini         [checkpoint] kind, [config] key = value,
                               [params] name = comma-separated shape
    <dir>/<name>.bin           one binary block per named tensor

Weight files use the block format from :mod:`megafs.latent`.  Integer
buffers (batch-norm counters) round-trip through float32, which is exact
for any realistic counter value.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from pathlib import Path

import torch

from .errors import CheckpointError
from .latent import read_block, write_block

MANIFEST = "manifest.ini"


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # parameter names are case sensitive
    return parser


def save_checkpoint(directory, kind: str, config: dict, state: dict[str, torch.Tensor]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    parser = _parser()
    parser["checkpoint"] = {"kind": kind, "format": "1"}
    parser["config"] = {k: _encode_value(v) for k, v in config.items()}
    parser["params"] = {}
    for name, tensor in state.items():
        parser["params"][name] = ",".join(str(d) for d in tensor.shape)
        with open(directory / f"{name}.bin", "wb") as fh:
            write_block(fh, tensor)
    with open(directory / MANIFEST, "w") as fh:
        parser.write(fh)
    return directory


def read_manifest(directory) -> tuple[str, dict, dict[str, tuple[int, ...]]]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest: {path}")
    parser = _parser()
    try:
        parser.read(path)
        kind = parser["checkpoint"]["kind"]
        config = {k: _decode_value(v) for k, v in parser["config"].items()}
        shapes = {k: tuple(int(d) for d in v.split(",") if d) for k, v in parser["params"].items()}
    except (KeyError, ValueError, configparser.Error) as exc:
        raise CheckpointError(f"malformed manifest {path}: {exc}") from exc
    return kind, config, shapes


def load_checkpoint(directory, kind: str | None = None):
    """Return ``(kind, config, state_dict)`` after checking every file against the manifest."""
    directory = Path(directory)
    found_kind, config, shapes = read_manifest(directory)
    if kind is not None and found_kind != kind:
        raise CheckpointError(f"{directory} holds a '{found_kind}' checkpoint, expected '{kind}'")
    state = {}
    for name, shape in shapes.items():
        path = directory / f"{name}.bin"
        if not path.is_file():
            raise FileNotFoundError(f"missing weight file: {path}")
        try:
            with open(path, "rb") as fh:
                arr = read_block(fh)
        except ValueError as exc:
            raise CheckpointError(f"corrupted weight file {path}: {exc}") from exc
        if tuple(arr.shape) != shape:
            raise CheckpointError(
                f"{path}: shape {tuple(arr.shape)} does not match manifest {shape}")
        state[name] = torch.from_numpy(arr)
    return found_kind, config, state


def load_into(module: torch.nn.Module, state: dict[str, torch.Tensor], source="checkpoint") -> None:
    own = module.state_dict()
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    if missing or unexpected:
        raise CheckpointError(f"{source}: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for name, tensor in state.items():
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{source}: {name} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(own[name].shape)}")
    module.load_state_dict({k: v.to(own[k].dtype) for k, v in state.items()})


def state_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _encode_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return ";".join(_encode_value(v) for v in value)
    return str(value)


def _decode_value(text: str):
    if ";" in text:
        return [_decode_value(part) for part in text.split(";")]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("True", "False"):
        return text == "True"
    return text


def is_checkpoint(directory) -> bool:
    return os.path.isfile(os.path.join(directory, MANIFEST))
