import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from simulmt.checkpoint import (MAGIC, CheckpointError, ShapeMismatch, load_checkpoint,
                                restore_store, save_checkpoint, write_arrays)
from simulmt.numerics import ParamStore


def _store(seed=0, shape=(3, 2)):
    s = ParamStore()
    r = np.random.default_rng(seed)
    s.add("w", r.normal(size=shape))
    s.add("b", r.normal(size=shape[-1:]))
    s.m["w"][...] = r.normal(size=shape)
    s.v["b"][...] = r.random(shape[-1:])
    s.step = 12
    return s


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4),
              elements=st.floats(allow_nan=False)))
def test_arrays_roundtrip_bit_exact(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("ck") / "a.ckpt"
    write_arrays(p, {"x/y": a}, "cfg ünïcode")
    ck = load_checkpoint(p)
    assert ck.config_text == "cfg ünïcode"
    assert ck.arrays["x/y"].shape == a.shape
    assert ck.arrays["x/y"].tobytes() == np.asarray(a, "<f8").tobytes()


def test_layout_is_as_documented(tmp_path):
    p = tmp_path / "a.ckpt"
    write_arrays(p, {"ab": np.array([[1.0, 2.0]])}, "T")
    raw = p.read_bytes()
    expected = (MAGIC + struct.pack("<I", 2) + b"ab" + struct.pack("<III", 2, 1, 2)
                + struct.pack("<2d", 1.0, 2.0) + struct.pack("<I", 0) + b"T")
    assert raw == expected


def test_store_roundtrip_restores_params_moments_and_names(tmp_path):
    src = _store(1)
    save_checkpoint(tmp_path / "s.ckpt", {"agent": src}, "x")
    ck = load_checkpoint(tmp_path / "s.ckpt")
    assert ck.store_names() == ["agent"]
    dst = _store(2)
    restore_store(ck, "agent", dst)
    for k in src.params:
        np.testing.assert_array_equal(dst.params[k], src.params[k])
        np.testing.assert_array_equal(dst.m[k], src.m[k])
        np.testing.assert_array_equal(dst.v[k], src.v[k])
    assert dst.step == 12


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


@pytest.mark.parametrize("cut, what", [(10, "name length"), (12, "array name"),
                                       (16, "rank of a/w"), (22, "shape of a/w"), (40, "data of a/w")])
def test_truncation_names_what_was_being_read(tmp_path, cut, what):
    p = tmp_path / "s.ckpt"
    save_checkpoint(p, {"a": _store()})
    raw = p.read_bytes()
    p.write_bytes(raw[:cut])
    with pytest.raises(CheckpointError, match=what):
        load_checkpoint(p)


def test_shape_mismatch_names_the_array(tmp_path):
    save_checkpoint(tmp_path / "s.ckpt", {"agent": _store(0, (3, 2))})
    with pytest.raises(ShapeMismatch, match="agent/w"):
        restore_store(load_checkpoint(tmp_path / "s.ckpt"), "agent", _store(0, (4, 2)))


def test_missing_and_extra_arrays(tmp_path):
    save_checkpoint(tmp_path / "s.ckpt", {"agent": _store()})
    ck = load_checkpoint(tmp_path / "s.ckpt")
    bigger = _store()
    bigger.add_zeros("extra", (2,))
    with pytest.raises(CheckpointError, match="lacks"):
        restore_store(ck, "agent", bigger)
    smaller = ParamStore()
    smaller.add_zeros("w", (3, 2))
    with pytest.raises(CheckpointError):
        restore_store(ck, "agent", smaller)


def test_bad_store_names(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "s.ckpt", {"a/b": _store()})
    with pytest.raises(ValueError):
        write_arrays(tmp_path / "s.ckpt", {"": np.zeros(1)})
