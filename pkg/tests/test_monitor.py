import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagediff import autodiff as ad
from stagediff.monitor import (RegimeWindow, SslEncoder, encode, observe_and_slope, ols_slope,
                               smoothing_views, ssl_discrepancy)


@pytest.fixture(scope="module")
def enc():
    return SslEncoder.from_seed(3, F=8, d_h=12, d_ssl=6)


def test_views_of_constant_are_constant():
    x = np.full((8, 12), 2.5)
    views = smoothing_views(x)
    assert len(views) == 3
    for v in views:
        assert np.allclose(v, x, rtol=0, atol=1e-14)


def test_checkerboard_factor_two_vanishes():
    x = np.where((np.arange(4)[:, None] + np.arange(4)[None, :]) % 2 == 0, 1.0, -1.0)
    # each 2x2 cell averages +1, -1, -1, +1 to zero
    v = smoothing_views(x)[1]
    assert np.allclose(v, 0.0, rtol=0, atol=1e-15)


def test_views_reject_bad_sizes():
    with pytest.raises(ValueError):
        smoothing_views(np.ones((6, 8)))


def test_views_deterministic_and_identity_first():
    x = np.random.default_rng(0).normal(size=(8, 16))
    a, b = smoothing_views(x), smoothing_views(x)
    assert np.array_equal(a[0], x)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_encode_zero_and_frozen(enc):
    assert np.array_equal(encode(np.zeros((8, 5)), enc), np.zeros((6, 5)))
    x = np.random.default_rng(1).normal(size=(8, 5))
    assert np.array_equal(encode(x, enc), encode(x, enc))
    assert np.array_equal(SslEncoder.from_seed(3, 8, 12, 6).A1, enc.A1)
    with pytest.raises(ValueError):
        enc.A1[0, 0] = 1.0
    with pytest.raises(ValueError):
        encode(np.zeros((7, 5)), enc)


def test_encode_lipschitz(enc):
    rng = np.random.default_rng(2)
    bound = np.linalg.norm(enc.A2, 2) * np.linalg.norm(enc.A1, 2)
    for _ in range(50):
        x, y = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
        assert np.linalg.norm(encode(x, enc) - encode(y, enc)) <= bound * np.linalg.norm(x - y) + 1e-12


def test_encode_records_no_graph(enc):
    with ad.new_graph() as g:
        ssl_discrepancy(np.ones((2, 8, 8)), np.zeros((2, 8, 8)), enc)
    assert len(g) == 0


def naive_discrepancy(xh, x, enc):
    vals = []
    for b in range(x.shape[0]):
        for vh, vx in zip(smoothing_views(xh[b]), smoothing_views(x[b])):
            fh, fx = encode(vh, enc), encode(vx, enc)
            vals.append(sum((fh[i, j] - fx[i, j]) ** 2 for i in range(fh.shape[0])
                            for j in range(fh.shape[1])) / fh.size)
    return sum(vals) / len(vals)


def test_discrepancy_matches_double_loop(enc):
    rng = np.random.default_rng(3)
    x, xh = rng.normal(size=(2, 8, 8)), rng.normal(size=(2, 8, 8))
    assert abs(ssl_discrepancy(xh, x, enc) - naive_discrepancy(xh, x, enc)) <= 1e-12


def test_discrepancy_properties(enc):
    rng = np.random.default_rng(4)
    x, xh = rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 8, 8))
    assert ssl_discrepancy(x, x, enc) == 0.0
    perm = [2, 0, 1]
    assert ssl_discrepancy(xh[perm], x[perm], enc) == pytest.approx(ssl_discrepancy(xh, x, enc), abs=1e-15)
    assert ssl_discrepancy(x, xh, enc) == pytest.approx(ssl_discrepancy(xh, x, enc), abs=1e-15)
    with pytest.raises(ValueError):
        ssl_discrepancy(np.zeros((0, 8, 8)), np.zeros((0, 8, 8)), enc)


def test_window_exact_line():
    w = RegimeWindow(capacity=3, interval=500)
    assert observe_and_slope(w, 0, 1.0) is None
    assert observe_and_slope(w, 500, 0.9) is None
    g = observe_and_slope(w, 1000, 0.8)
    assert g == pytest.approx(0.0002, rel=1e-12)
    # dyadic data is exact in binary, so the estimate is exact too
    w2 = RegimeWindow(capacity=4)
    for k in range(4):
        g2 = w2.observe(k * 8, 3.0 - 0.25 * k)
    assert g2 == 0.25 / 8


def test_window_constant_and_eviction():
    w = RegimeWindow(capacity=3)
    for k in range(6):
        g = w.observe(k, 0.7)
    assert g == 0.0
    assert [e[0] for e in w.entries] == [3, 4, 5]
    with pytest.raises(ValueError):
        w.observe(5, 0.1)


def closed_form(k, y):
    kb, yb = sum(k) / len(k), sum(y) / len(y)
    return sum((a - kb) * (b - yb) for a, b in zip(k, y)) / sum((a - kb) ** 2 for a in k)


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5), st.integers(0, 10_000))
def test_slope_matches_closed_form(noise, start):
    k = [start + 50 * i for i in range(5)]
    y = [0.5 - 1e-4 * ki + n * 1e-2 for ki, n in zip(k, noise)]
    w = RegimeWindow(capacity=5)
    for ki, yi in zip(k, y):
        g = w.observe(ki, yi)
    assert abs(-g - closed_form(k, y)) <= 1e-10


def test_sign_convention():
    down, up = RegimeWindow(capacity=4), RegimeWindow(capacity=4)
    for i, k in enumerate((10, 20, 30, 40)):
        gd = down.observe(k, 1.0 / (1 + i))
        gu = up.observe(k, float(i * i))
    assert gd > 0 and gu < 0


def test_ols_slope_against_polyfit():
    rng = np.random.default_rng(5)
    k = np.sort(rng.choice(10_000, 7, replace=False)).astype(float)
    y = rng.normal(size=7)
    assert ols_slope(k, y) == pytest.approx(np.polyfit(k, y, 1)[0], rel=1e-9)
