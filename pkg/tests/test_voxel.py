import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubekit.symmetry import compose, generate_group
from cubekit.voxel import (
    HEADER_SIZE,
    BadMagicError,
    DtypeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    VoxtError,
    apply_group_action,
    decode_voxt,
    encode_voxt,
    pad_symmetric,
    read_voxt,
    rotate_spatial,
    translate,
    write_voxt,
)

from oracles import signed_perm_oracle

S4 = generate_group("S4")
RZ90 = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]])


@pytest.mark.parametrize("g", range(24))
def test_rotate_matches_index_oracle(g):
    vol = np.random.default_rng(g).normal(size=(5, 5, 5))
    R = S4.elements[g].array
    assert np.array_equal(rotate_spatial(vol, R), signed_perm_oracle(vol, R))


def test_rotate_non_cubic_matches_oracle():
    vol = np.random.default_rng(1).normal(size=(2, 3, 4))
    for R in S4.matrices:
        out = rotate_spatial(vol, R)
        assert np.array_equal(out, signed_perm_oracle(vol, R))


def test_rotate_single_voxel_moves_as_vector():
    vol = np.zeros((5, 5, 5))
    vol[4, 2, 2] = 1.0  # offset (+2, 0, 0) from centre
    out = rotate_spatial(vol, RZ90)
    offset = RZ90 @ np.array([2, 0, 0])
    assert out[tuple(offset + 2)] == 1.0
    assert out.sum() == 1.0


def test_fourfold_quarter_turn_is_identity():
    vol = np.random.default_rng(0).normal(size=(3, 4, 4, 4))
    out = vol
    for _ in range(4):
        out = rotate_spatial(out, RZ90)
    assert np.array_equal(out, vol)


def test_rotate_composition():
    vol = np.random.default_rng(0).normal(size=(4, 4, 4))
    for a, b in itertools.product(range(24), repeat=2):
        lhs = rotate_spatial(rotate_spatial(vol, S4.matrices[b]), S4.matrices[a])
        rhs = rotate_spatial(vol, S4.matrices[compose(S4, a, b)])
        assert np.array_equal(lhs, rhs)


def test_rotate_rejects_bad_input():
    with pytest.raises(ValueError):
        rotate_spatial(np.zeros((3, 3)), np.eye(3))
    with pytest.raises(ValueError):
        rotate_spatial(np.zeros((3, 3, 3)), np.eye(2))


@settings(max_examples=40, deadline=None)
@given(
    shape=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
    g=st.integers(0, 23),
    seed=st.integers(0, 2**16),
)
def test_rotate_preserves_values_and_inverts(shape, g, seed):
    vol = np.random.default_rng(seed).normal(size=shape)
    R = S4.matrices[g]
    out = rotate_spatial(vol, R)
    assert np.array_equal(np.sort(out, axis=None), np.sort(vol, axis=None))
    assert np.array_equal(rotate_spatial(out, R.T), vol)


@pytest.mark.parametrize("kind", ["V", "T4", "S4"])
def test_group_action_is_representation(kind):
    group = generate_group(kind)
    rng = np.random.default_rng(3)
    f = rng.normal(size=(2, group.order, 3, 3, 3))
    pairs = itertools.product(range(group.order), repeat=2)
    if kind == "S4":
        pairs = [tuple(p) for p in rng.integers(0, 24, size=(60, 2))]
    for p, q in pairs:
        lhs = apply_group_action(apply_group_action(f, group, q), group, p)
        rhs = apply_group_action(f, group, compose(group, p, q))
        assert np.array_equal(lhs, rhs)


def test_group_action_reindexes_group_axis():
    V = generate_group("V")
    f = np.zeros((1, 4, 3, 3, 3))
    f[0, 2] = 1.0
    out = apply_group_action(f, V, 1)
    # channel g=2 moves to g1*g2 = g3
    assert out[0, 3].sum() == 27 and out[0, 2].sum() == 0


def test_group_action_lifted_map_is_spatial_only():
    f = np.random.default_rng(0).normal(size=(2, 1, 4, 4, 4))
    assert np.array_equal(apply_group_action(f, S4, 5), rotate_spatial(f, S4.matrices[5]))


def test_group_action_axis_mismatch():
    with pytest.raises(ValueError, match="group axis"):
        apply_group_action(np.zeros((1, 3, 2, 2, 2)), S4, 1)


def test_translate_matches_loop_oracle():
    vol = np.random.default_rng(0).normal(size=(2, 4, 5, 3))
    for t in [(1, 0, 0), (-1, 2, 1), (0, -3, -2), (4, 0, 0)]:
        expected = np.zeros_like(vol)
        for x in itertools.product(range(4), range(5), range(3)):
            y = tuple(a - b for a, b in zip(x, t))
            if all(0 <= v < n for v, n in zip(y, (4, 5, 3))):
                expected[(slice(None),) + x] = vol[(slice(None),) + y]
        assert np.array_equal(translate(vol, t), expected)


def test_translate_needs_three_components():
    with pytest.raises(ValueError):
        translate(np.zeros((2, 2, 2)), (1, 1))


def test_pad_commutes_with_rotation():
    vol = np.random.default_rng(0).normal(size=(1, 3, 3, 3))
    for R in S4.matrices:
        assert np.array_equal(pad_symmetric(rotate_spatial(vol, R), 2), rotate_spatial(pad_symmetric(vol, 2), R))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_voxt_roundtrip(tmp_path, dtype):
    arr = np.random.default_rng(0).normal(size=(2, 4, 3, 5, 6)).astype(dtype)
    path = tmp_path / "m.voxt"
    write_voxt(path, arr)
    back = read_voxt(path)
    assert back.dtype == dtype and back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_voxt_byte_layout():
    arr = np.arange(8, dtype=np.float32).reshape(1, 1, 2, 2, 2)
    buf = encode_voxt(arr)
    assert HEADER_SIZE == 36
    assert len(buf) == 36 + 8 * 4
    assert buf[:4] == b"VOXT"
    assert int.from_bytes(buf[4:8], "little") == 1  # version
    assert int.from_bytes(buf[8:12], "little") == 0  # f32 code
    assert int.from_bytes(buf[12:16], "little") == 5
    dims = [int.from_bytes(buf[16 + 4 * i:20 + 4 * i], "little") for i in range(5)]
    assert dims == [1, 1, 2, 2, 2]
    assert np.array_equal(np.frombuffer(buf[36:], dtype="<f4"), np.arange(8))
    assert int.from_bytes(encode_voxt(arr.astype(np.float64))[8:12], "little") == 1


def test_voxt_errors():
    arr = np.zeros((1, 1, 2, 2, 2), dtype=np.float64)
    buf = encode_voxt(arr)
    with pytest.raises(BadMagicError):
        decode_voxt(b"XXXX" + buf[4:])
    with pytest.raises(UnsupportedVersionError):
        decode_voxt(buf[:4] + (2).to_bytes(4, "little") + buf[8:])
    with pytest.raises(TruncatedPayloadError):
        decode_voxt(buf[:-1])
    with pytest.raises(TruncatedPayloadError):
        decode_voxt(buf[:10])
    with pytest.raises(DtypeMismatchError):
        decode_voxt(buf, dtype="f32")
    with pytest.raises(DtypeMismatchError):
        decode_voxt(buf[:8] + (9).to_bytes(4, "little") + buf[12:])
    with pytest.raises(VoxtError):
        decode_voxt(buf + b"\0")
    with pytest.raises(DtypeMismatchError):
        encode_voxt(np.zeros((1, 1, 1, 1, 1), dtype=np.int32))
    with pytest.raises(ValueError):
        encode_voxt(np.zeros((2, 2, 2)))
    assert issubclass(VoxtError, ValueError)


def test_voxt_deterministic_bytes(tmp_path):
    arr = np.random.default_rng(5).normal(size=(1, 2, 3, 3, 3))
    write_voxt(tmp_path / "a.voxt", arr)
    write_voxt(tmp_path / "b.voxt", arr)
    assert (tmp_path / "a.voxt").read_bytes() == (tmp_path / "b.voxt").read_bytes()
