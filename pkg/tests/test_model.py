import struct

import numpy as np
import pytest

from multipofo.data import Scaler
from multipofo.errors import CheckpointError, ShapeError
from multipofo.model import (
    FORMAT_VERSION,
    MAGIC,
    build_model,
    encode,
    freeze_encoder,
    from_bytes,
    load,
    params_hash,
    predict,
    reconstruct,
    save,
    to_bytes,
)
from multipofo.multiscale import ScaleSpec, default_scales
from multipofo.nn_core import IDENTITY, RELU, forward, seed_rng

SCALES = [ScaleSpec("a", 6, 0), ScaleSpec("b", 10, 1)]


def small(seed=0, **kw):
    return build_model(SCALES, seed_rng(seed), hidden=(12, 8), latent_dim=4, **kw)


def test_default_architecture():
    m = build_model(default_scales(), seed_rng(0))
    assert [(l.in_dim, l.out_dim, l.activation) for l in m.encoder] == [
        (1443, 256, RELU),
        (256, 128, RELU),
        (128, 64, RELU),
    ]
    assert [(l.in_dim, l.out_dim) for l in m.decoder] == [(64, 128), (128, 256), (256, 1440)]
    assert [l.activation for l in m.decoder] == [RELU, RELU, IDENTITY]
    assert [(h.in_dim, h.out_dim, h.activation) for h in m.heads] == [(64, 1, IDENTITY)]


def test_zero_input_encodes_to_zero():
    m = small()
    assert not encode(m, np.zeros(m.input_dim)).any()


def test_encode_is_pure_and_composes_forward(rng):
    m = small()
    x = rng.normal(size=(5, m.input_dim))
    z = encode(m, x)
    np.testing.assert_array_equal(z, encode(m, x))
    manual = x
    for layer in m.encoder:
        manual = forward(layer, manual)
    np.testing.assert_array_equal(z, manual)
    assert reconstruct(m, z).shape == (5, m.L_max)


def test_shape_errors():
    m = small()
    with pytest.raises(ShapeError):
        encode(m, np.zeros(m.input_dim + 1))
    with pytest.raises(ShapeError):
        reconstruct(m, np.zeros(3))
    with pytest.raises(ShapeError):
        predict(m, np.zeros(5))


def test_predict_examples():
    m = small()
    head = m.heads[0]
    head.weights[:] = 0.0
    head.bias[:] = 3.5
    z = np.random.default_rng(0).normal(size=(4, 4))
    np.testing.assert_array_equal(predict(m, z), np.full((4, 1), 3.5))

    m2 = build_model(SCALES, seed_rng(0), hidden=(4, 3), latent_dim=2)
    m2.heads[0].weights[:] = [[1.0, -1.0]]
    m2.heads[0].bias[:] = 0.0
    np.testing.assert_array_equal(predict(m2, [3.0, 1.0]), [2.0])


def test_predict_is_affine(rng):
    m = small()
    z1, z2 = rng.normal(size=4), rng.normal(size=4)
    a = 0.3
    lhs = predict(m, a * z1 + (1 - a) * z2)
    rhs = a * predict(m, z1) + (1 - a) * predict(m, z2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_per_scale_heads_route_by_index(rng):
    m = small(per_scale_heads=True)
    assert len(m.heads) == 2
    z = rng.normal(size=(3, 4))
    out = predict(m, z, np.array([0, 1, 0]))
    np.testing.assert_allclose(out[1], forward(m.heads[1], z[1]), rtol=1e-14)
    np.testing.assert_allclose(out[2], forward(m.heads[0], z[2]), rtol=1e-14)
    with pytest.raises(ValueError):
        predict(m, z)


def test_freeze_records_hash_and_flags():
    m = small()
    before = params_hash(m.encoder)
    freeze_encoder(m)
    assert m.frozen_encoder
    assert m.encoder_hash == before
    assert all(l.frozen for l in m.encoder + m.decoder)
    assert not any(h.frozen for h in m.heads)


def test_scale_lookup_lists_available():
    with pytest.raises(KeyError, match="a, b"):
        small().scale("hourly")


def test_save_load_save_is_byte_identical(tmp_path, rng):
    m = freeze_encoder(small())
    m.scalers = {"c1": Scaler(1.0, 5.0, "c1[0:10]")}
    m.meta = {"seed": 0}
    save(m, tmp_path / "a.ckpt")
    loaded = load(tmp_path / "a.ckpt")
    save(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    z = rng.normal(size=(6, m.input_dim))
    np.testing.assert_array_equal(predict(m, encode(m, z)), predict(loaded, encode(loaded, z)))
    assert loaded.scalers == m.scalers
    assert loaded.encoder_hash == m.encoder_hash
    assert loaded.scales == m.scales


def test_truncated_checkpoint():
    blob = to_bytes(small())
    for cut in (4, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointError):
            from_bytes(blob[:cut])


def test_corrupt_and_wrong_version():
    blob = bytearray(to_bytes(small()))
    flipped = bytes(blob[:-20]) + bytes([blob[-20] ^ 0xFF]) + bytes(blob[-19:])
    with pytest.raises(CheckpointError, match="checksum"):
        from_bytes(flipped)
    bumped = MAGIC + struct.pack("<H", FORMAT_VERSION + 1) + bytes(blob[len(MAGIC) + 2 :])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(bumped)
    with pytest.raises(CheckpointError):
        from_bytes(b"not a checkpoint at all")


def test_load_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load(tmp_path / "nope.ckpt")
