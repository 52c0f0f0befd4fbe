from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from burgulence.checks import deterministic_order, energy_balance, noisy_order
from burgulence.dynamics import (CFLViolation, DtPolicy, FluxSpec, OUIncrement, PotentialState, SimConfig,
                                 aggregate_pieces, contraction_gap, curl_residual, energy_balance_residual,
                                 heat_identity_error, integrate, load_checkpoint, nonlinearity,
                                 save_checkpoint, step, sup_gap)
from burgulence.ensemble import initial_potential
from burgulence.forcing import NoiseSpec, NoiseState, draw_ou_increment
from burgulence.torus import SpectralField, TorusGrid, from_function, gradient, irfft_values, rfft_coeffs

TWO_PI = 2 * np.pi


def smooth_random(grid, seed, batch=(), cut=6):
    rng = np.random.default_rng(seed)
    shape = tuple(batch) + grid.spectral_shape
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.exp(-grid.kabs / 2)
    c = np.where(grid.kabs <= cut, c, 0.0)
    return SpectralField(grid, rfft_coeffs(grid, irfft_values(grid, c)))


def noisy_cfg(n=128, nu=0.05, **kw):
    g = TorusGrid(1, n)
    return SimConfig(nu, g, NoiseSpec.decay(1, seed=1), FluxSpec.quadratic(), **kw)


# -- nonlinear term -------------------------------------------------------------

def test_nonlinearity_of_zero_potential():
    g = TorusGrid(1, 32)
    out = nonlinearity(SpectralField(g, np.zeros(g.spectral_shape)), FluxSpec.quadratic())
    assert np.all(out.coeffs == 0)


def test_quadratic_flux_of_single_sine():
    g = TorusGrid(1, 32)
    psi = from_function(g, lambda x: np.sin(TWO_PI * x) / TWO_PI)
    c = nonlinearity(psi, FluxSpec.quadratic()).coeffs
    assert c[2] == pytest.approx(1 / 8, abs=1e-15)
    c[2] = 0
    assert np.abs(c).max() < 1e-15


@given(st.integers(0, 2**32 - 1))
def test_nonlinearity_is_dealiased(seed):
    g = TorusGrid(2, 32)
    psi = smooth_random(g, seed, cut=12)
    for flux in (FluxSpec.quadratic(), FluxSpec.logcosh()):
        c = nonlinearity(psi, flux).coeffs
        assert np.all(c[~g.dealias_mask] == 0)


@given(st.integers(0, 2**32 - 1))
def test_quadratic_flux_matches_exact_product(seed):
    # f = u^2/2 of a band-limited field is band-limited at twice the band
    g = TorusGrid(1, 64)
    psi = smooth_random(g, seed, cut=10)
    u = gradient(psi)[0]
    big = TorusGrid(1, 256, 1.0)
    cu = np.zeros(big.spectral_shape, complex)
    cu[:33] = u.coeffs[:33]
    exact = rfft_coeffs(big, 0.5 * irfft_values(big, cu) ** 2)[:33]
    got = nonlinearity(psi, FluxSpec.quadratic()).coeffs[:33]
    exact[0] = 0
    keep = g.dealias_mask[:33]
    assert np.abs(got - np.where(keep, exact, 0)).max() < 1e-13


def test_padded_general_flux_close_to_oversampled_oracle():
    g = TorusGrid(1, 64)
    psi = smooth_random(g, 4, cut=5).scaled(0.1)
    big = TorusGrid(1, 1024, 1.0)
    cu = np.zeros(big.spectral_shape, complex)
    cu[:33] = gradient(psi)[0].coeffs[:33]
    ref = rfft_coeffs(big, FluxSpec.logcosh().value([irfft_values(big, cu)]))[:33]
    ref = np.where(g.dealias_mask, ref, 0)
    ref[0] = 0
    errs = [np.abs(nonlinearity(psi, FluxSpec.logcosh(), padding=p).coeffs - ref).max() for p in (1.5, 3.0)]
    assert errs[0] < 1e-5 * np.abs(ref).max()
    assert errs[1] < errs[0] / 10


def test_user_flux_convexity_check():
    ok = FluxSpec.custom("quartic", lambda v: sum(x**4 / 12 + x * x / 2 for x in v),
                         lambda v: [x**3 / 3 + x for x in v],
                         lambda p: np.einsum("...i,ij->...ij", 1 + p**2, np.eye(p.shape[-1])), 1.0, 2)
    assert ok.sigma == 1.0
    with pytest.raises(ValueError, match="convexity"):
        FluxSpec.custom("concave", lambda v: -sum(x * x for x in v), lambda v: [-2 * x for x in v],
                        lambda p: np.broadcast_to(-2 * np.eye(p.shape[-1]), p.shape + p.shape[-1:]), 1.0, 1)


# -- stepping -------------------------------------------------------------------

def test_heat_flow_is_exact_per_step():
    g = TorusGrid(1, 64)
    nu, dt = 0.05, 1e-2
    cfg = SimConfig(nu, g, None, FluxSpec.zero(), DtPolicy.fixed(dt))
    st_ = PotentialState.initial(cfg, from_function(g, lambda x: np.cos(TWO_PI * x)))
    c0 = st_.psi.coeffs[0, 1]
    for k in range(1, 11):
        st_, _ = step(st_, cfg)
        assert abs(st_.psi.coeffs[0, 1] - c0 * np.exp(-4 * np.pi**2 * nu * k * dt)) < 1e-12


def test_deterministic_self_convergence():
    order, errs = deterministic_order()
    assert order >= 2
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_noisy_self_convergence():
    order, _ = noisy_order()
    assert order >= 0.9


def test_zero_length_integration():
    cfg = noisy_cfg(t_end=0.0)
    s0 = PotentialState.initial(cfg, initial_potential(cfg.grid, "sines"), (0,))
    summ = integrate(s0, cfg)
    assert summ.steps.tolist() == [0]
    assert np.array_equal(summ.state.psi.coeffs, s0.psi.coeffs)


def test_repeat_runs_identical_and_batch_independent():
    cfg = noisy_cfg(t_end=0.05, snapshot_every=0.01)
    psi0 = initial_potential(cfg.grid, "sines")
    snaps = []
    for traj in ((0, 1, 2), (0, 1, 2), (1,)):
        got = []
        integrate(PotentialState.initial(cfg, psi0, traj), cfg, [lambda s: got.append(s.psi.coeffs.copy())])
        snaps.append(got)
    assert all(np.array_equal(a, b) for a, b in zip(snaps[0], snaps[1]))
    assert all(np.array_equal(a[1], b[0]) for a, b in zip(snaps[0], snaps[2]))
    assert len(snaps[0]) == 6


def test_snapshots_land_on_cadence():
    cfg = noisy_cfg(t_end=0.03, snapshot_every=0.01)
    times = []
    integrate(PotentialState.initial(cfg, None, (0, 1)), cfg, [lambda s: times.append(s.t)])
    assert times == pytest.approx([0.0, 0.01, 0.02, 0.03])


def test_checkpoint_resume_is_bit_exact(tmp_path):
    cfg = noisy_cfg(t_end=0.04, snapshot_every=0.02)
    s0 = PotentialState.initial(cfg, initial_potential(cfg.grid, "random", 0.5), (0, 3))
    straight = integrate(s0, cfg).state
    half = integrate(s0, cfg, t_end=0.02).state
    p = tmp_path / "ck.npz"
    save_checkpoint(p, half, {"note": "mid"})
    resumed, meta = load_checkpoint(p)
    assert meta == {"note": "mid"}
    final = integrate(resumed, cfg).state
    assert np.array_equal(final.psi.coeffs, straight.psi.coeffs)
    assert np.array_equal(final.noise.w, straight.noise.w)


def test_checkpoint_bytes_are_reproducible(tmp_path):
    cfg = noisy_cfg()
    s0 = PotentialState.initial(cfg, initial_potential(cfg.grid, "sines"), (0,))
    save_checkpoint(tmp_path / "a.npz", s0)
    save_checkpoint(tmp_path / "b.npz", s0)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_fixed_step_beyond_courant_limit_raises():
    cfg = replace(noisy_cfg(), dt_policy=DtPolicy.fixed(0.1))
    s0 = PotentialState.initial(cfg, initial_potential(cfg.grid, "sines"), (0,))
    with pytest.raises(CFLViolation):
        step(s0, cfg)


def test_cfl_step_respects_courant_number():
    cfg = noisy_cfg()
    s0 = PotentialState.initial(cfg, initial_potential(cfg.grid, "sines", 3.0), (0,))
    _, info = step(s0, cfg)
    assert info.dt[0] * info.speed[0] / cfg.grid.dx <= 0.5 + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        noisy_cfg(nu=0.0)
    with pytest.raises(ValueError):
        SimConfig(0.1, TorusGrid(2, 64), NoiseSpec.decay(1))


# -- increments --------------------------------------------------------------------

def test_aggregated_halves_match_full_step_integral():
    spec = NoiseSpec.decay(1)
    ns = NoiseState(spec, (0, 1))
    inc = draw_ou_increment(ns, 0.01, 0.02)
    x, b = aggregate_pieces(np.array([inc.x1, inc.x2]), np.array([inc.b1, inc.b2]), inc.lam, 0.01)
    assert np.allclose(x, inc.x_full, rtol=1e-14, atol=0)
    assert np.allclose(b, inc.b_full, rtol=1e-14, atol=0)
    assert isinstance(inc, OUIncrement)


# -- audits -------------------------------------------------------------------------

def test_balance_residual_is_heat_identity_error_without_forcing():
    g = TorusGrid(1, 64)
    nu, dt = 0.05, 1e-3
    cfg = SimConfig(nu, g, None, FluxSpec.zero(), DtPolicy.fixed(dt))
    s0 = PotentialState.initial(cfg, smooth_random(g, 2, (3,)).coeffs, (0, 1, 2))
    s1, _ = step(s0, cfg)
    for m in (0, 1):
        r = energy_balance_residual(s0, s1, m, cfg, None, dt)
        e = heat_identity_error(s0, m, nu, dt)
        assert np.all(np.abs(r - e) <= 1e-10 * np.abs(e))


def test_balance_residual_deterministic_part_is_second_order():
    g = TorusGrid(1, 128)
    cfg = SimConfig(0.05, g, None, FluxSpec.quadratic(), DtPolicy.fixed(1e-3))
    s0 = PotentialState.initial(cfg, initial_potential(g, "sines"), (0,))
    res = []
    for dt in (1e-3, 2e-3):
        s1, _ = step(s0, cfg, dt)
        res.append(energy_balance_residual(s0, s1, 0, cfg, None, dt)[0])
    assert 3.5 < res[1] / res[0] < 4.5


def test_balance_residual_unbiased_with_noise():
    out = energy_balance(n_steps=1000)
    assert abs(out["z"]) <= 3


def test_gap_of_identical_data_is_zero():
    cfg = replace(noisy_cfg(t_end=0.05), dt_policy=DtPolicy.fixed(5e-4))
    psi0 = initial_potential(cfg.grid, "sines")
    s = PotentialState.initial(cfg, np.stack([psi0.coeffs, psi0.coeffs]), (0, 0))
    out = integrate(s, cfg).state
    assert contraction_gap(out.psi[:1], out.psi[1:])[0] == 0
    assert sup_gap(out.row(0), out.row(1))[0] == 0


def test_gap_non_increasing_per_step():
    cfg = replace(noisy_cfg(t_end=0.25), dt_policy=DtPolicy.fixed(5e-4))
    a = initial_potential(cfg.grid, "sines")
    b = initial_potential(cfg.grid, "random", 1.0, seed=2)
    s = PotentialState.initial(cfg, np.stack([a.coeffs, a.coeffs, b.coeffs, b.coeffs]), (0, 1, 0, 1))
    prev = [contraction_gap(s.psi[:2], s.psi[2:])]
    worst = [0.0]

    def hook(before, after, info):
        g = contraction_gap(after.psi[:2], after.psi[2:])
        worst[0] = max(worst[0], float(np.max((g - prev[0]) / prev[0])))
        prev[0] = g

    integrate(s, cfg, step_hook=hook)
    assert worst[0] <= 1e-8


@given(st.integers(0, 2**32 - 1))
def test_gradient_fields_have_no_curl(seed):
    g = TorusGrid(2, 32)
    assert curl_residual(smooth_random(g, seed, cut=10)) < 1e-10
