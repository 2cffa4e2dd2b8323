import math

import numpy as np
import pytest

from gpner.numerics import DimensionError
from gpner.rope import RotaryEncoding, rel_score, rotate


def test_rejects_odd_dim():
    with pytest.raises(ValueError):
        RotaryEncoding(5)


def test_position_zero_is_identity(rng):
    enc = RotaryEncoding(8)
    x = rng.normal(size=8)
    assert np.array_equal(rotate(enc, x, 0), x)


@pytest.mark.parametrize("p", [1, 7, 100])
def test_norm_preserved(rng, p):
    enc = RotaryEncoding(16)
    x = rng.normal(size=16)
    assert abs(np.linalg.norm(rotate(enc, x, p)) - np.linalg.norm(x)) <= 1e-9


def test_two_dim_closed_form():
    enc = RotaryEncoding(2)
    assert enc.angles[0] == 1.0
    np.testing.assert_allclose(rotate(enc, [1.0, 0.0], 1), [math.cos(1.0), math.sin(1.0)], atol=1e-15)
    np.testing.assert_allclose(rotate(enc, [1.0, 0.0], 1), [0.540302, 0.841471], atol=1e-6)


def test_length_mismatch():
    with pytest.raises(DimensionError):
        rotate(RotaryEncoding(4), np.ones(3), 1)
    with pytest.raises(DimensionError):
        rel_score(RotaryEncoding(4), np.ones(4), np.ones(2), 0, 1)


@pytest.mark.parametrize("d", [8, 64])
def test_relative_and_translation(rng, d):
    enc = RotaryEncoding(d)
    for _ in range(50):
        q, k = rng.normal(size=d), rng.normal(size=d)
        i, j = sorted(rng.integers(0, 128, size=2))
        s = rel_score(enc, q, k, i, j)
        assert abs(s - q @ rotate(enc, k, j - i)) <= 1e-6
        assert abs(s - rel_score(enc, q, k, i + 5, j + 5)) <= 1e-6
    q, k = rng.normal(size=d), rng.normal(size=d)
    assert abs(rel_score(enc, q, k, 9, 9) - q @ k) <= 1e-9


def test_orthogonality(rng):
    enc = RotaryEncoding(32)
    a, b = rng.normal(size=32), rng.normal(size=32)
    for p in (0, 3, 77):
        assert abs(rotate(enc, a, p) @ rotate(enc, b, p) - a @ b) <= 1e-9


def test_batched_apply_matches_rotate(rng):
    enc = RotaryEncoding(6)
    x = rng.normal(size=(2, 5, 6))
    out = enc.apply(x)
    for b in range(2):
        for p in range(5):
            np.testing.assert_allclose(out[b, p], rotate(enc, x[b, p], p), atol=1e-14)


def test_apply_backward_is_transpose(rng):
    enc = RotaryEncoding(6)
    x, g = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    assert (enc.apply(x) * g).sum() == pytest.approx((x * enc.apply_backward(g)).sum(), abs=1e-12)
