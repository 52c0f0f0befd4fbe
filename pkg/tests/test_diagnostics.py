import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from burgulence.diagnostics import (DiagnosticsPlan, RangeSpec, column_manifest, compute_records,
                                    directional_increment, energy_spectrum, flatness, full_increment_moments,
                                    kruzhkov_max, longitudinal_increment, restriction_norms,
                                    sphere_averaged_increment, spectrum_curve, spectrum_layer,
                                    structure_functions, wiener_khinchin_residual, write_csv, young_constant,
                                    young_inequality_residual)
from burgulence.torus import SpectralField, TorusGrid, from_function, gradient, rfft_coeffs, irfft_values, wmp_norm

TWO_PI = 2 * np.pi


def band_limited(grid, seed, cut=8, batch=()):
    rng = np.random.default_rng(seed)
    shape = tuple(batch) + grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = np.where((grid.kabs <= cut) & (grid.kabs > 0), c, 0.0)
    return SpectralField(grid, rfft_coeffs(grid, irfft_values(grid, c)))


def cos1(grid):
    return from_function(grid, lambda *x: np.cos(TWO_PI * x[0]))


# -- ranges ---------------------------------------------------------------------

def test_range_layout():
    r = RangeSpec(1e-3)
    assert r.J1 == (0.0, 4e-3) and r.J2 == (4e-3, 0.25) and r.J3 == (0.25, 1.0)
    assert r.which(1e-3) == 1 and r.which(0.1) == 2 and r.which(0.5) == 3
    lo, hi = r.inertial_window()
    assert lo == pytest.approx(4.8e-3) and hi == pytest.approx(0.2)


@pytest.mark.parametrize("kw", [dict(nu=0.1), dict(nu=1e-3, M=1.5), dict(nu=1e-3, C1=10.0)])
def test_range_rejects_empty_layouts(kw):
    with pytest.raises(ValueError):
        RangeSpec(**kw)


# -- increments -----------------------------------------------------------------

def test_zero_offset_gives_zero():
    g = TorusGrid(1, 64)
    assert directional_increment(band_limited(g, 0), [0.0], 2.0) == 0


@pytest.mark.parametrize("ell", [0.01, 0.1, 0.237, 0.5])
def test_single_mode_increment(ell):
    g = TorusGrid(2, 32)
    v = cos1(g)
    assert directional_increment(v, [ell, 0.0], 2.0) == pytest.approx(2 * np.sin(np.pi * ell) ** 2, abs=1e-13)
    sq = directional_increment(v, [ell, 0.0], 2.0, alpha=2.0)
    assert sq == pytest.approx(directional_increment(v, [ell, 0.0], 2.0) ** 2, rel=1e-13)


def test_negative_exponent_rejected():
    g = TorusGrid(1, 16)
    with pytest.raises(ValueError):
        directional_increment(cos1(g), [0.1], -1.0)
    with pytest.raises(ValueError):
        longitudinal_increment([cos1(g)], [0.0], 2.0)


def test_longitudinal_transverse_offset_vanishes():
    g = TorusGrid(2, 32)
    u = gradient(from_function(g, lambda x, y: np.sin(TWO_PI * x) / TWO_PI))
    assert longitudinal_increment(u, [0.0, 0.3], 2.0) < 1e-28
    assert longitudinal_increment(u, [0.3, 0.0], 2.0) > 0.1


def test_longitudinal_matches_directional_in_1d():
    g = TorusGrid(1, 64)
    v = band_limited(g, 3)
    for r in (0.05, -0.2):
        assert longitudinal_increment([v], [r], 1.5) == pytest.approx(directional_increment(v, [r], 1.5), rel=1e-13)


def test_sphere_average_1d_is_mean_of_both_directions():
    g = TorusGrid(1, 64)
    v = band_limited(g, 5)
    avg = sphere_averaged_increment([v], 0.1, 3.0)
    both = (directional_increment(v, [0.1], 3.0) + directional_increment(v, [-0.1], 3.0)) / 2
    assert avg == pytest.approx(both, rel=1e-13)


@pytest.mark.parametrize("ell", [0.05, 0.2, 0.45])
def test_sphere_average_matches_dense_angular_quadrature(ell):
    g = TorusGrid(2, 32)
    u = [cos1(g), SpectralField(g, np.zeros(g.spectral_shape, complex))]
    th = np.linspace(0, TWO_PI, 20001)[:-1]
    oracle = np.mean(2 * np.sin(np.pi * ell * np.cos(th)) ** 2)
    assert sphere_averaged_increment(u, ell, 2.0, n_dirs=16) == pytest.approx(oracle, rel=1e-2)


@given(st.floats(0.1, 10.0), st.floats(0.5, 4.0), st.floats(0.5, 2.0))
def test_sphere_average_amplitude_homogeneity(c, p, alpha):
    g = TorusGrid(2, 16)
    u = gradient(band_limited(g, 11, cut=4))
    base = sphere_averaged_increment(u, 0.2, p, alpha, n_dirs=8)
    scaled = sphere_averaged_increment([x.scaled(c) for x in u], 0.2, p, alpha, n_dirs=8)
    assert scaled == pytest.approx(c ** (alpha * p) * base, rel=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_full_increment_symmetric_in_offset(seed, a, b):
    # even integer moments of a band-limited field are integrated exactly,
    # so the symmetry holds to rounding; odd powers only to quadrature error
    g = TorusGrid(2, 64)
    u = gradient(band_limited(g, seed, cut=5))
    plus = full_increment_moments(u, [a, b], [1.0, 2.0, 4.0])
    minus = full_increment_moments(u, [-a, -b], [1.0, 2.0, 4.0])
    for p, tol in ((1.0, 1e-3), (2.0, 1e-11), (4.0, 1e-11)):
        assert plus[p] == pytest.approx(minus[p], rel=tol, abs=1e-14)


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 2.0), st.floats(0.0, 2.0))
def test_increment_moments_holder_monotone(seed, p, extra):
    g = TorusGrid(1, 64)
    q = p + extra
    mom = full_increment_moments([band_limited(g, seed)], [0.13], [p, q])
    assert mom[p] <= mom[q] ** (p / q) * (1 + 1e-10)


def test_structure_functions_agree_with_sphere_average():
    g = TorusGrid(2, 32)
    u = gradient(band_limited(g, 2, cut=6))
    sf = structure_functions(u, [0.1, 0.3], [0.5, 2.0], [1.0, 2.0], n_dirs=8)
    for (p, a, ell), v in sf.items():
        assert v == pytest.approx(sphere_averaged_increment(u, ell, p, a, n_dirs=8), rel=1e-12)


# -- spectrum -----------------------------------------------------------------

def test_single_mode_spectrum():
    g = TorusGrid(2, 32)
    u = [cos1(g), SpectralField(g, np.zeros(g.spectral_shape, complex))]
    assert energy_spectrum(u, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert energy_spectrum(u, 8.0) < 1e-30


def test_zero_field_spectrum():
    g = TorusGrid(1, 32)
    assert energy_spectrum([SpectralField(g, np.zeros(g.spectral_shape, complex))], 2.0) == 0


def test_k_below_one_rejected():
    g = TorusGrid(1, 32)
    with pytest.raises(ValueError):
        energy_spectrum([cos1(g)], 0.5)


@pytest.mark.parametrize("d,n", [(1, 64), (2, 32), (3, 16)])
def test_layer_sum_matches_direct_full_lattice_sum(d, n):
    g = TorusGrid(d, n)
    u = gradient(band_limited(g, 7, cut=n // 3))
    full = [np.fft.fftn(c.values()) / n**d for c in u]
    n_axes = np.meshgrid(*[np.fft.fftfreq(n, 1 / n)] * d, indexing="ij")
    kabs = np.sqrt(sum(a * a for a in n_axes))
    for k in (1.0, 2.5, 4.0, 7.3):
        sel = (kabs >= k / 2) & (kabs <= 2 * k)
        direct = sum(np.sum(np.abs(f[sel]) ** 2) for f in full) / k
        got, count = spectrum_layer(u, k)
        assert got == pytest.approx(direct, rel=1e-11)
        assert count == int(sel.sum())


def test_disjoint_layers_recover_energy():
    g = TorusGrid(2, 32)
    u = gradient(band_limited(g, 1, cut=10))
    # layers [k/2, 2k] with k = 4^j tile (0, inf) up to the shared boundary shells
    ks = [1.0, 4.0, 16.0]
    total = sum(k * energy_spectrum(u, k) for k in ks)
    boundary = sum(k * (spectrum_layer(u, k, 1.0)[0]) for k in (2.0, 8.0))
    energy = sum(np.mean(c.values() ** 2) for c in u)
    assert total - boundary == pytest.approx(energy, rel=1e-11)


@given(st.floats(1.0, 20.0), st.floats(2.0, 6.0))
def test_wider_layers_hold_more_energy(k, M):
    g = TorusGrid(2, 32)
    u = gradient(band_limited(g, 4, cut=14))
    assert energy_spectrum(u, k, 2 * M) * (1 + 1e-12) >= energy_spectrum(u, k, M)


def test_spectrum_curve_matches_pointwise():
    g = TorusGrid(2, 32)
    u = gradient(band_limited(g, 9, cut=10, batch=(3,)))
    ks = [1.0, 1.7, 3.0, 5.5, 9.0]
    curve = spectrum_curve(u, ks)
    for j, k in enumerate(ks):
        assert np.allclose(curve[:, j], energy_spectrum(u, k), rtol=1e-12, atol=0)


# -- flatness -----------------------------------------------------------------

@pytest.mark.parametrize("ell", [0.01, 0.1, 0.3])
@pytest.mark.parametrize("amp", [1e-3, 1.0, 50.0])
def test_monochromatic_flatness(ell, amp):
    g = TorusGrid(1, 64)
    v = cos1(g).scaled(amp)
    mom = full_increment_moments([v], [ell], [2.0, 4.0])
    assert flatness(mom[2.0], mom[4.0]) == pytest.approx(1.5, rel=1e-12)


def test_gaussian_field_flatness_near_three():
    g = TorusGrid(1, 4096)
    rng = np.random.default_rng(0)
    s2 = s4 = 0.0
    for _ in range(20):
        c = (rng.standard_normal(g.spectral_shape) + 1j * rng.standard_normal(g.spectral_shape))
        c = np.where((g.kabs > 0) & (g.kabs < 1000), c, 0)
        mom = full_increment_moments([SpectralField(g, c)], [0.05], [2.0, 4.0])
        s2, s4 = s2 + mom[2.0], s4 + mom[4.0]
    # ensemble of 20 x ~1000 modes: sampling spread below 0.05
    assert flatness(s2 / 20, s4 / 20) == pytest.approx(3.0, abs=0.15)


def test_flatness_undefined_when_second_moment_vanishes():
    assert np.isnan(flatness(0.0, 1.0))
    assert np.all(np.isnan(flatness([0.0, 0.0], [0.0, 2.0])))


# -- second derivatives ----------------------------------------------------------

def test_kruzhkov_of_scaled_cosine():
    g = TorusGrid(2, 32)
    psi = from_function(g, lambda x, y: np.cos(TWO_PI * x) / TWO_PI**2)
    kv = kruzhkov_max(psi)
    assert kv.value == pytest.approx(1.0, abs=1e-13)
    assert kv.per_axis[1] == pytest.approx(0.0, abs=1e-13)


def test_kruzhkov_axes_equal_for_symmetric_product():
    g = TorusGrid(3, 16)
    psi = from_function(g, lambda x, y, z: np.cos(TWO_PI * x) * np.cos(TWO_PI * y) * np.cos(TWO_PI * z))
    kv = kruzhkov_max(psi)
    assert kv.per_axis[0] == pytest.approx(kv.per_axis[1], rel=1e-12)
    assert kv.per_axis[1] == pytest.approx(kv.per_axis[2], rel=1e-12)
    assert len(kv.directional) == len(kv.forms) == 6


# -- Wiener-Khinchin ---------------------------------------------------------------

def test_wk_single_mode_half_period():
    g = TorusGrid(2, 16)
    v = cos1(g)
    assert wiener_khinchin_residual(v, [0.5, 0.0]) < 1e-12
    assert wiener_khinchin_residual(v, [0.0, 0.0]) == 0


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_wk_random_band_limited(seed, y):
    g = TorusGrid(2, 32)
    assert wiener_khinchin_residual(band_limited(g, seed, cut=12), y) < 1e-10


# -- restrictions -------------------------------------------------------------------

def test_restriction_of_field_constant_along_axis():
    g = TorusGrid(2, 32)
    v = from_function(g, lambda x, y: np.sin(TWO_PI * y))
    assert restriction_norms(v, 0, 1) < 1e-12
    assert restriction_norms(v, 1, 1) == pytest.approx(TWO_PI, rel=1e-12)


def test_restriction_in_1d_is_global_norm():
    g = TorusGrid(1, 64)
    v = band_limited(g, 8)
    for m in (0, 1, 3):
        assert restriction_norms(v, 0, m) == pytest.approx(wmp_norm(v, m, np.inf), rel=1e-13)


def test_restriction_of_separable_field():
    g = TorusGrid(2, 64)
    v = from_function(g, lambda x, y: np.sin(TWO_PI * x) * (2 + np.cos(TWO_PI * y)))
    assert restriction_norms(v, 0, 1, "mean") == pytest.approx(TWO_PI * 2, rel=1e-12)
    assert restriction_norms(v, 0, 1, "max") == pytest.approx(TWO_PI * 3, rel=1e-12)
    with pytest.raises(ValueError):
        restriction_norms(v, 0, 1, "median")


# -- Young ---------------------------------------------------------------------------

def test_young_zero_second_argument():
    assert young_inequality_residual([1.0, -2.0], [0.0, 0.0], 3.0, 0.1) == 0


@given(st.floats(0.05, 1.0), st.floats(1e-3, 10.0))
def test_young_constant_one_for_small_p(p, delta):
    assert young_constant(p, delta) == 1.0


@pytest.mark.parametrize("p,delta", [(0.5, 0.01), (3.0, 0.1), (1.5, 1.0)])
def test_young_randomized_audit(p, delta):
    rng = np.random.default_rng(12)
    A = rng.standard_normal((100_000, 3)) * rng.lognormal(0, 2, (100_000, 1))
    B = rng.standard_normal((100_000, 3)) * rng.lognormal(0, 2, (100_000, 1))
    assert np.max(young_inequality_residual(A, B, p, delta)) == 0


def test_young_constant_is_attained():
    # equality at B = A (1 - zeta) / zeta for collinear vectors
    p, delta = 3.0, 0.1
    zeta = (1 + delta) ** (-1 / (p - 1))
    A = np.array([1.0])
    B = A * (1 - zeta) / zeta
    lhs = abs(A + B)[0] ** p
    rhs = (1 + delta) + young_constant(p, delta) * abs(B)[0] ** p
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- records ---------------------------------------------------------------------------

def _records():
    g = TorusGrid(2, 32)
    psi = band_limited(g, 13, cut=6, batch=(2,)).scaled(0.05)
    plan = DiagnosticsPlan.for_grid(g, n_ells=5, n_ks=4)
    return compute_records(psi, plan, 0.5, [4, 9])


def test_records_finite_and_nonnegative():
    recs = _records()
    assert [r.trajectory for r in recs] == [4, 9]
    for r in recs:
        for k, v in r.flat().items():
            assert np.isfinite(v), k
            assert v >= 0, k
        assert len(r.flatness) == 5 and len(r.spectrum) == 4


def test_ndjson_and_csv_share_columns():
    recs = _records()
    man = column_manifest(recs)
    rows = list(csv.reader(io.StringIO(write_csv(recs))))
    assert rows[0] == man["columns"]
    assert len(rows) == 3
    for r, line in zip(recs, rows[1:]):
        parsed = json.loads(r.to_ndjson())
        assert list(parsed) == man["columns"]
        assert [float(x) for x in line] == pytest.approx([float(parsed[c]) for c in man["columns"]], rel=0)
