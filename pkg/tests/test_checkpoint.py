import struct

import numpy as np
import pytest

from xmexp import checkpoint
from xmexp.checkpoint import Block, decode_blocks, encode_blocks
from xmexp.errors import InputError


def test_layout_of_single_block():
    raw = encode_blocks([Block("dense.w", np.array([[1.0, 2.0]]))])
    assert raw[:6] == b"XMEXP1"
    assert struct.unpack("<I", raw[6:10]) == (1,)
    assert raw[10] == len("dense.w") and raw[11:18] == b"dense.w"
    assert raw[18] == 2 and struct.unpack("<2I", raw[19:27]) == (1, 2)
    assert struct.unpack("<2d", raw[27:]) == (1.0, 2.0)


def test_bit_exact_round_trip(rng):
    blocks = [Block("conv.w", rng.standard_normal((2, 3, 3, 3))), Block("conv.b", np.array([np.pi, -0.0])),
              Block("som", rng.standard_normal((2, 2, 4))), Block("meta", b'{"a": 1}')]
    back = decode_blocks(encode_blocks(blocks))
    for a, b in zip(blocks, back):
        assert a.kind == b.kind
        if isinstance(a.data, bytes):
            assert a.data == b.data
        else:
            assert a.data.tobytes() == b.data.tobytes()
    assert encode_blocks(back) == encode_blocks(blocks)


def test_bad_magic():
    with pytest.raises(InputError, match="magic"):
        decode_blocks(b"NOPE00" + b"\0" * 4)


def test_truncated(rng):
    raw = encode_blocks([Block("dense.b", rng.standard_normal(4))])
    with pytest.raises(InputError, match="truncated"):
        decode_blocks(raw[:-3])


def test_file_round_trip(tmp_path, rng):
    path = tmp_path / "c.bin"
    data = rng.standard_normal(7)
    checkpoint.save(path, [Block("dense.b", data)])
    assert checkpoint.load(path)[0].data.tobytes() == data.tobytes()
