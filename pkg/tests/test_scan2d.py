import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from deltascan.errors import ContractViolation
from deltascan.scan2d import (ALL_DIRECTIONS, ScanDirection, ScanProjections, ShiftKind, ShiftSpec, depthwise_conv,
                              directional_scan, flatten_grid, multi_directional_scan, reparameterize_omni,
                              token_shift, unflatten_grid)

R, Lf, D, U = ScanDirection.RIGHT, ScanDirection.LEFT, ScanDirection.DOWN, ScanDirection.UP


def test_single_pixel():
    g = np.array([[[1.0, 2.0]]])
    for d in ScanDirection:
        assert np.array_equal(flatten_grid(g, d), [[1.0, 2.0]])


def test_two_by_two_orders():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    g = np.array([[a, b], [c, d]])[:, :, None]
    expect = {R: [a, b, c, d], Lf: [d, c, b, a], D: [a, c, b, d], U: [d, b, c, a]}
    for direction, seq in expect.items():
        assert flatten_grid(g, direction)[:, 0].tolist() == seq
        assert np.array_equal(unflatten_grid(np.array(seq)[:, None], direction, 2, 2), g)


def test_unflatten_fills_rows():
    g = unflatten_grid(np.arange(6.0)[:, None], R, 2, 3)
    assert g[:, :, 0].tolist() == [[0, 1, 2], [3, 4, 5]]
    with pytest.raises(ContractViolation):
        unflatten_grid(np.zeros((5, 1)), R, 2, 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3)),
              elements=st.floats(-1e6, 1e6)))
def test_round_trip_and_duality(g):
    H, W, _ = g.shape
    for d in ScanDirection:
        assert np.array_equal(unflatten_grid(flatten_grid(g, d), d, H, W), g)
    assert np.array_equal(flatten_grid(g, Lf), flatten_grid(g, R)[::-1])
    assert np.array_equal(flatten_grid(g, U), flatten_grid(g, D)[::-1])


@pytest.mark.parametrize("kind", list(ShiftKind))
def test_identity_shifts(rng, kind):
    g = rng.standard_normal((5, 6, 3))
    assert np.array_equal(token_shift(g, ShiftSpec.identity_for(kind, 3)), g)


def test_uni_shift_uses_previous_token():
    g = np.arange(6.0).reshape(2, 3, 1)
    out = token_shift(g, ShiftSpec(ShiftKind.UNI, mu=np.array([1.0])))
    assert out[:, :, 0].tolist() == [[0, 0, 1], [2, 3, 4]]


def test_quad_constant_grid():
    g = np.full((5, 5, 2), 3.0)
    q = np.array([[0.2, 0.6], [0.2, 0.1], [0.2, 0.1], [0.2, 0.1], [0.2, 0.1]])
    out = token_shift(g, ShiftSpec(ShiftKind.QUAD, quad=q))
    np.testing.assert_allclose(out[1:-1, 1:-1], 3.0, rtol=1e-15)
    assert np.all(out[0] < 3.0) and np.all(out[:, -1] < 3.0)


def test_quad_neighbor_directions():
    g = np.zeros((3, 3, 1))
    g[1, 1] = 1.0
    for row, pos in zip(range(1, 5), [(2, 1), (0, 1), (1, 0), (1, 2)]):
        # north weight pulls from the pixel above, so the impulse shows up below it, etc.
        q = np.zeros((5, 1))
        q[row] = 1.0
        out = token_shift(g, ShiftSpec(ShiftKind.QUAD, quad=q))
        assert np.argwhere(out[:, :, 0] == 1.0).tolist() == [list(pos)]


def test_quad_weights_validated():
    with pytest.raises(ContractViolation):
        ShiftSpec(ShiftKind.QUAD, quad=np.full((5, 1), 0.3))


def test_omni_impulse_plateau():
    g = np.zeros((7, 7, 1))
    g[3, 3] = 2.5
    spec = ShiftSpec(ShiftKind.OMNI, identity=np.zeros(1), k1=np.zeros(1), k3=np.ones((3, 3, 1)),
                     k5=np.zeros((5, 5, 1)))
    out = token_shift(g, spec)[:, :, 0]
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = 2.5
    assert np.array_equal(out, expected)


def test_depthwise_conv_is_correlation(rng):
    g = rng.standard_normal((6, 5, 2))
    k = rng.standard_normal((3, 3, 2))
    out = depthwise_conv(g, k)
    padded = np.pad(g, ((1, 1), (1, 1), (0, 0)))
    i, j = 2, 3
    np.testing.assert_allclose(out[i, j], (padded[i:i + 3, j:j + 3] * k).sum(axis=(0, 1)))


def test_reparameterize_simple_cases():
    only_id = ShiftSpec.identity_for(ShiftKind.OMNI, 2)
    m = reparameterize_omni(only_id)
    expected = np.zeros((5, 5, 2))
    expected[2, 2] = 1
    assert np.array_equal(m, expected)
    spec = ShiftSpec(ShiftKind.OMNI, identity=np.zeros(1), k1=np.array([0.7]), k3=np.zeros((3, 3, 1)),
                     k5=np.zeros((5, 5, 1)))
    m = reparameterize_omni(spec)
    assert m[2, 2, 0] == 0.7 and np.count_nonzero(m) == 1
    with pytest.raises(ContractViolation):
        reparameterize_omni(ShiftSpec.identity_for(ShiftKind.UNI, 1))


def test_reparameterize_matches_branches(rng):
    spec = ShiftSpec.random(ShiftKind.OMNI, 3, rng, scale=1.0)
    g = rng.standard_normal((8, 8, 3))
    merged = depthwise_conv(g, reparameterize_omni(spec))
    assert np.max(np.abs(merged[2:-2, 2:-2] - token_shift(g, spec)[2:-2, 2:-2])) <= 1e-12


def test_shift_channel_mismatch(rng):
    with pytest.raises(ContractViolation):
        token_shift(rng.standard_normal((3, 3, 2)), ShiftSpec.identity_for(ShiftKind.UNI, 3))


def _proj(rng, c, d_k=4, **kw):
    p = ScanProjections.random(c, d_k, rng)
    return ScanProjections(p.Wq, p.Wk, p.Wv, p.w_beta, **kw) if kw else p


def test_frozen_empty_state_reads_zero(rng):
    g = rng.standard_normal((4, 5, 3))
    out = multi_directional_scan(g, _proj(rng, 3, beta_gain=0.0), np.zeros((4, 3)), 4)
    assert np.array_equal(out, np.zeros_like(out))


def test_single_pixel_directions_agree(rng):
    g = rng.standard_normal((1, 1, 3))
    p, S0 = _proj(rng, 3), rng.standard_normal((4, 3))
    outs = [directional_scan(g, p, S0, 4, d) for d in ScanDirection]
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])
    np.testing.assert_allclose(multi_directional_scan(g, p, S0, 4), outs[0], atol=1e-15)


def test_scan_chunk_size_independence(rng):
    g = rng.standard_normal((4, 4, 3))
    p, S0 = _proj(rng, 3), rng.standard_normal((4, 3))
    a = multi_directional_scan(g, p, S0, 2)
    b = multi_directional_scan(g, p, S0, 16)
    assert np.max(np.abs(a - b)) <= 1e-9
    assert a.shape == g.shape


def test_fusion_order_irrelevant(rng):
    g = rng.standard_normal((3, 4, 2))
    p, S0 = _proj(rng, 2), np.zeros((4, 2))
    ref = multi_directional_scan(g, p, S0, 4)
    for perm in itertools.permutations(ALL_DIRECTIONS):
        np.testing.assert_allclose(multi_directional_scan(g, p, S0, 4, perm), ref, rtol=0, atol=1e-14)


def test_right_scan_is_causal(rng):
    g = rng.standard_normal((4, 5, 3))
    p, S0 = _proj(rng, 3), rng.standard_normal((4, 3))
    pos = 11  # row 2, col 1 in RIGHT order
    g2 = g.copy()
    g2.reshape(-1, 3)[pos + 1:] += rng.standard_normal((20 - pos - 1, 3))
    a = flatten_grid(directional_scan(g, p, S0, 4, R), R)
    b = flatten_grid(directional_scan(g2, p, S0, 4, R), R)
    np.testing.assert_allclose(a[:pos + 1], b[:pos + 1], rtol=0, atol=1e-12)
    assert np.max(np.abs(a[pos + 1:] - b[pos + 1:])) > 0


def test_projection_channel_mismatch(rng):
    with pytest.raises(ContractViolation):
        multi_directional_scan(rng.standard_normal((2, 2, 3)), _proj(rng, 2), np.zeros((4, 2)), 2)
