import pytest
import torch

from megafs.checkpoint import (file_checksum, load_checkpoint, read_manifest, save_checkpoint,
                               state_checksum)
from megafs.errors import CheckpointError


def _state():
    g = torch.Generator().manual_seed(0)
    return {"a.weight": torch.randn(3, 4, generator=g), "a.bias": torch.randn(3, generator=g),
            "bn.num_batches_tracked": torch.tensor(5.0)}


def test_roundtrip(tmp_path):
    cfg = {"resolution": 32, "blocks": [1, 2], "name": "x", "flag": True, "rate": 0.5}
    save_checkpoint(tmp_path, "thing", cfg, _state())
    kind, config, state = load_checkpoint(tmp_path, kind="thing")
    assert kind == "thing" and config == cfg
    for k, v in _state().items():
        assert torch.equal(state[k], v)
    _, _, shapes = read_manifest(tmp_path)
    assert shapes["a.weight"] == (3, 4) and shapes["bn.num_batches_tracked"] == ()


def test_manifest_is_case_sensitive(tmp_path):
    save_checkpoint(tmp_path, "thing", {}, {"Up.W": torch.zeros(1), "up.w": torch.ones(1)})
    _, _, state = load_checkpoint(tmp_path)
    assert set(state) == {"Up.W", "up.w"}


def test_wrong_kind(tmp_path):
    save_checkpoint(tmp_path, "thing", {}, _state())
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path, kind="other")


def test_missing_and_corrupt_files(tmp_path):
    save_checkpoint(tmp_path, "thing", {}, _state())
    (tmp_path / "a.bias.bin").write_bytes(b"\x01\x00")
    with pytest.raises(CheckpointError, match="a.bias"):
        load_checkpoint(tmp_path)
    (tmp_path / "a.bias.bin").unlink()
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope")


def test_shape_disagreeing_with_manifest(tmp_path):
    save_checkpoint(tmp_path, "thing", {}, _state())
    other = tmp_path / "other"
    save_checkpoint(other, "thing", {}, {"a.weight": torch.zeros(4, 3)})
    (tmp_path / "a.weight.bin").write_bytes((other / "a.weight.bin").read_bytes())
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(tmp_path)


def test_checksums(tmp_path):
    m = torch.nn.Linear(3, 2)
    before = state_checksum(m)
    assert state_checksum(m) == before
    with torch.no_grad():
        m.weight[0, 0] += 1e-7
    assert state_checksum(m) != before
    p = tmp_path / "f"
    p.write_bytes(b"abc")
    assert file_checksum(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
