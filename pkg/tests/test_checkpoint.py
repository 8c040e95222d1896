import struct

import numpy as np
import pytest

from cwan import checkpoint
from cwan.checkpoint import CheckpointError


def _tensors():
    rng = np.random.default_rng(0)
    return {"a.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32), "a.bias": np.zeros(4, np.float32)}


def test_round_trip(tmp_path):
    desc = {"kind": "cwan_l", "config": {"channels": 4}}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, desc, _tensors())
    d2, t2 = checkpoint.load(path)
    assert d2 == desc
    for k, v in _tensors().items():
        np.testing.assert_array_equal(t2[k], v)
        assert t2[k].dtype == np.float32


def test_bytes_are_deterministic():
    desc = {"b": 1, "a": [1, 2]}
    assert checkpoint.dumps(desc, _tensors()) == checkpoint.dumps(dict(reversed(desc.items())), _tensors())


def test_header_layout():
    blob = checkpoint.dumps({"kind": "x"}, {"w": np.ones(2, np.float32)})
    assert blob[:4] == b"CWAN"
    version, hlen = struct.unpack("<II", blob[4:12])
    assert version == checkpoint.VERSION
    assert blob[12:12 + hlen] == b'{"kind":"x"}'
    assert blob.endswith(np.ones(2, "<f4").tobytes())


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b[:4] + struct.pack("<I", 99) + b[8:],
])
def test_corrupt_inputs_rejected(mutate):
    blob = checkpoint.dumps({"kind": "x"}, _tensors())
    with pytest.raises(CheckpointError):
        checkpoint.loads(mutate(blob))


def test_float64_stored_as_float32():
    _, t = checkpoint.loads(checkpoint.dumps({}, {"w": np.full(2, 0.1)}))
    assert t["w"].dtype == np.float32
    np.testing.assert_array_equal(t["w"], np.float32(0.1))


def test_missing_file(tmp_path):
    with pytest.raises((CheckpointError, OSError)):
        checkpoint.load(tmp_path / "absent.ckpt")
