import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from burgulence.poly_basis import construct_basis
from burgulence.torus import (PhysicalField, SpectralField, TorusGrid, derivative, directional_norm,
                              field_from_record, fractional_increment_norm, from_function, gn_admissible,
                              gn_ratio, gradient, inverse_transform, lp_norm, read_snapshot_binary, shift,
                              snapshot_record, spectral_sobolev_norm, transform, wmp_norm,
                              write_snapshot_binary)

TWO_PI = 2 * np.pi


def naive_dft_1d(values):
    n = len(values)
    j = np.arange(n)
    return np.array([np.sum(values * np.exp(-2j * np.pi * k * j / n)) / n for k in range(n // 2 + 1)])


def band_field(grid, rng, cut=None, batch=()):
    shape = tuple(batch) + grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = grid.dealias_mask & ~grid.nyquist
    if cut is not None:
        keep &= grid.kabs <= cut
    c = np.where(keep, c, 0.0)
    return transform(PhysicalField(grid, inverse_transform(SpectralField(grid, c)).values), mean_zero=True)


def test_grid_validation():
    with pytest.raises(ValueError, match="dealias_fraction"):
        TorusGrid(1, 64, 1.5)
    with pytest.raises(ValueError):
        TorusGrid(4, 16)
    with pytest.raises(ValueError):
        TorusGrid(1, 12)


def test_constant_field():
    g = TorusGrid(2, 16)
    f = transform(PhysicalField(g, np.ones(g.shape)))
    expected = np.zeros(g.spectral_shape, complex)
    expected[0, 0] = 1
    assert np.allclose(f.coeffs, expected, atol=1e-15)


def test_single_cosine():
    g = TorusGrid(2, 16)
    f = from_function(g, lambda x, y: np.cos(TWO_PI * x))
    full = f.full_coeffs()
    assert full[1, 0] == pytest.approx(0.5)
    assert full[-1, 0] == pytest.approx(0.5)
    assert np.sum(np.abs(full) > 1e-12) == 2


def test_transform_matches_direct_dft():
    rng = np.random.default_rng(1)
    g = TorusGrid(1, 16)
    x = rng.standard_normal(16)
    c = transform(PhysicalField(g, x)).coeffs
    assert np.abs(c - naive_dft_1d(x)).max() < 1e-14
    assert np.abs(inverse_transform(SpectralField(g, c, mean_zero=False)).values - x).max() < 1e-12


@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_parseval_and_roundtrip(d, seed):
    g = TorusGrid(d, {1: 64, 2: 16, 3: 8}[d])
    x = np.random.default_rng(seed).standard_normal(g.shape)
    f = transform(PhysicalField(g, x))
    assert np.abs(inverse_transform(f).values - x).max() < 1e-12
    assert np.sum(g.weights * np.abs(f.coeffs) ** 2) == pytest.approx(np.mean(x**2), rel=1e-12)


def test_gradient_of_sine():
    g = TorusGrid(2, 32)
    psi = from_function(g, lambda x, y: np.sin(TWO_PI * x) / TWO_PI)
    u1, u2 = gradient(psi)
    x, _ = g.points()
    assert np.abs(u1.values() - np.cos(TWO_PI * x)).max() < 1e-12
    assert np.abs(u2.values()).max() < 1e-13


def test_gradient_of_constant_vanishes():
    g = TorusGrid(2, 16)
    psi = transform(PhysicalField(g, np.full(g.shape, 3.0)), mean_zero=True)
    assert all(np.abs(c.values()).max() == 0 for c in gradient(psi))


@given(st.integers(0, 2**32 - 1))
def test_gradients_are_curl_free(seed):
    g = TorusGrid(2, 32)
    psi = band_field(g, np.random.default_rng(seed))
    u1, u2 = gradient(psi)
    curl = derivative(u1, (0, 1)).values() - derivative(u2, (1, 0)).values()
    assert np.abs(curl).max() < 1e-12 * max(1.0, np.abs(u1.values()).max() * 32)


def test_lebesgue_and_sobolev_of_sine():
    g = TorusGrid(2, 32)
    v = from_function(g, lambda x, y: np.sin(TWO_PI * x))
    assert wmp_norm(v, 0, 2) == pytest.approx(1 / np.sqrt(2), rel=1e-12)
    assert wmp_norm(v, 1, 2) == pytest.approx(TWO_PI / np.sqrt(2), rel=1e-12)
    assert wmp_norm(v.scaled(0.0), 2, 3) == 0


def test_lp_norm_infinity_and_oversampling():
    g = TorusGrid(1, 16)
    v = from_function(g, lambda x: np.cos(TWO_PI * 3 * x + 0.3))
    assert lp_norm(v, np.inf) <= 1 + 1e-12
    assert lp_norm(v, np.inf, oversample=8) == pytest.approx(1.0, abs=2e-3)


def test_spectral_norm_single_mode():
    g = TorusGrid(1, 64)
    v = from_function(g, lambda x: np.cos(TWO_PI * x))
    for s in (0.0, 0.25, 0.5, 1.0, 2.0):
        assert spectral_sobolev_norm(v, s) == pytest.approx(TWO_PI**s / np.sqrt(2), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_spectral_norm_s0_is_l2(seed):
    g = TorusGrid(2, 16)
    v = band_field(g, np.random.default_rng(seed))
    assert spectral_sobolev_norm(v, 0.0) == pytest.approx(lp_norm(v, 2), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_spectral_and_integer_norms_equivalent(seed):
    # |v|_{1,2} = sum_i ||d_i v|| lies between the l2 combination and sqrt(d) times it
    g = TorusGrid(2, 32)
    v = band_field(g, np.random.default_rng(seed))
    r = wmp_norm(v, 1, 2) / spectral_sobolev_norm(v, 1.0)
    assert 1 - 1e-12 <= r <= np.sqrt(2) + 1e-12


def test_fractional_norm_single_mode():
    g = TorusGrid(1, 128)
    v = from_function(g, lambda x: np.cos(TWO_PI * x))
    a = fractional_increment_norm(v, 0.5)
    b = spectral_sobolev_norm(v, 0.5)
    assert np.isfinite(a) and 1 / 3 <= a / b <= 3
    assert fractional_increment_norm(v.scaled(2.0), 0.5) == pytest.approx(2 * a, rel=1e-12)
    assert fractional_increment_norm(v.scaled(0.0), 0.5) == 0


def test_directional_norm_of_sine():
    g = TorusGrid(2, 32)
    v = from_function(g, lambda x, y: np.sin(TWO_PI * x))
    b = construct_basis(1, 2)
    assert directional_norm(v, b, 1, 2) == pytest.approx(2 * TWO_PI / np.sqrt(2), rel=1e-12)
    assert directional_norm(v.scaled(0), b, 1, 2) == 0


# seeds 0..199 of band_field(cut=6) on the 32^2 grid gave ratios in [1.086, 3.018];
# frozen with headroom as a regression bound
DIRECTIONAL_RATIO_BOUND = 4.0


@given(st.integers(0, 2**32 - 1))
def test_directional_norm_equivalent_to_sobolev(seed):
    g = TorusGrid(2, 32)
    v = band_field(g, np.random.default_rng(seed), cut=6)
    for m in (1, 2):
        r = directional_norm(v, construct_basis(m, 2), m, 2) / wmp_norm(v, m, 2)
        assert 1 / DIRECTIONAL_RATIO_BOUND <= r <= DIRECTIONAL_RATIO_BOUND


def test_shift_translates_exactly():
    g = TorusGrid(1, 64)
    v = from_function(g, lambda x: np.sin(TWO_PI * 3 * x))
    w = shift(v, [0.1])
    x = g.points()[0]
    assert np.abs(w.values() - np.sin(TWO_PI * 3 * (x + 0.1))).max() < 1e-12


def test_gn_ratio_basics():
    g = TorusGrid(1, 64)
    assert gn_admissible(1, 1, 2, 2, 2, 2, 0.5)
    assert not gn_admissible(1, 1, 2, 2, 2, 2, 0.3)
    v = from_function(g, lambda x: np.sin(TWO_PI * x))
    r = gn_ratio(v, 1, 2, 2, 2, 2, 0.5)
    assert np.isfinite(r) and r > 0
    assert gn_ratio(v.scaled(0), 1, 2, 2, 2, 2, 0.5) == 0
    with pytest.raises(ValueError):
        gn_ratio(v, 1, 2, 2, 2, 2, 0.3)


def test_gn_ratio_stable_across_resolution():
    rng = np.random.default_rng(3)
    worst = {}
    for n in (64, 128):
        g = TorusGrid(1, n)
        vals = []
        for _ in range(100):
            c = np.zeros(g.spectral_shape, complex)
            c[1:9] = rng.standard_normal(8) + 1j * rng.standard_normal(8)
            vals.append(gn_ratio(SpectralField(g, c), 1, 2, 2, 2, 2, 0.5))
        worst[n] = max(vals)
    assert np.isfinite(worst[64]) and worst[128] == pytest.approx(worst[64], rel=0.05)


def test_snapshot_records_round_trip(tmp_path):
    g = TorusGrid(2, 16)
    v = band_field(g, np.random.default_rng(5))
    rec = json.loads(json.dumps(snapshot_record(v, t=0.5)))
    assert rec["t"] == 0.5
    assert np.array_equal(field_from_record(rec).coeffs, v.coeffs)
    p = tmp_path / "snap.bin"
    write_snapshot_binary(p, v, t=1.0)
    w, meta = read_snapshot_binary(p)
    assert meta["t"] == 1.0 and np.array_equal(w.coeffs, v.coeffs)
