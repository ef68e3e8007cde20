import numpy as np
import pytest

from deltascan.pgm import PGMError, decode_pgm, encode_pgm, pgm_read, pgm_write


def test_single_white_pixel():
    g = decode_pgm(b"P5\n1 1\n255\n\xff")
    assert g.shape == (1, 1, 1) and g[0, 0, 0] == 1.0


def test_two_by_two():
    g = decode_pgm(b"P5\n2 2\n255\n" + bytes([0, 51, 102, 255]))
    assert g.shape == (2, 2, 1)
    np.testing.assert_allclose(g[:, :, 0], [[0, 0.2], [0.4, 1.0]])


def test_comments_dropped_on_rewrite():
    raw = b"P5\n# made by hand\n3 1\n# another\n255\n" + bytes([1, 2, 3])
    assert encode_pgm(decode_pgm(raw)) == b"P5\n3 1\n255\n" + bytes([1, 2, 3])


def test_round_trip_random(tmp_path, rng):
    payload = rng.integers(0, 256, 16 * 16, dtype=np.uint8).tobytes()
    src = tmp_path / "in.pgm"
    src.write_bytes(b"P5\n16 16\n255\n" + payload)
    dst = tmp_path / "out.pgm"
    pgm_write(pgm_read(src), dst)
    assert dst.read_bytes() == src.read_bytes()


def test_errors():
    with pytest.raises(PGMError, match="magic"):
        decode_pgm(b"P2\n1 1\n255\n0")
    with pytest.raises(PGMError, match="maxval"):
        decode_pgm(b"P5\n1 1\n65535\n\0\0")
    with pytest.raises(PGMError, match="truncated"):
        decode_pgm(b"P5\n2 2\n255\n\0\0")
    with pytest.raises(PGMError):
        decode_pgm(b"P5\n2 2")
    with pytest.raises(PGMError):
        encode_pgm(np.full((2, 2, 1), 1.5))
    with pytest.raises(PGMError):
        encode_pgm(np.zeros((2, 2, 3)))
