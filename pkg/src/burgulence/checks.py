"""Acceptance checks, shared by the test suite and ``burgulence selftest``.

Every check returns a :class:`CheckResult` carrying the measured numbers, so
a failing threshold is reported with its evidence rather than hidden.
"""
from __future__ import annotations

import hashlib
import json
import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats

from .diagnostics import flatness, sphere_averaged_increment, wiener_khinchin_residual, young_constant
from .dynamics import (DtPolicy, FluxSpec, PotentialState, SimConfig, energy_balance_residual, fine_path,
                       integrate, integrate_on_path, step)
from .ensemble import (ExperimentConfig, coupling_experiment, fractional_norm_experiment, independence_probe,
                       initial_potential, kruzhkov_experiment, run_campaign, sobolev_scaling_experiment,
                       spectrum_experiment, structure_function_experiment, write_manifest)
from .forcing import NoiseSpec
from .poly_basis import construct_basis, expand_monomial, monomials, recombine, verify_spanning
from .torus import SpectralField, TorusGrid, irfft_values, rfft_coeffs


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    title: str
    passed: bool
    details: dict
    elapsed: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"criterion {self.criterion:2d} [{status}] {self.title} ({self.elapsed:.0f}s): {parts}"


def _short(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return str(v)


@dataclass(frozen=True)
class SuiteScale:
    """Sizes of the statistical runs.  Thresholds never depend on the scale."""

    name: str = "full"
    n1d: int = 4096
    nus: tuple = (4e-3, 2e-3, 1e-3, 5e-4)
    structure_nu: float = 1e-3
    ensemble: int = 8
    t_start: float = 1.0
    T0: float = 1.0
    n2d: int = 256
    nu2d: float = 5e-3
    ensemble2d: int = 4
    t_start2d: float = 1.0
    T0_2d: float = 1.0
    coupling_n: int = 128
    coupling_nu: float = 0.02
    coupling_trace0: float = 0.01
    coupling_amplitude: float = 0.1
    coupling_dt: float = 2e-3
    coupling_t_end: float = 20.0
    coupling_ensemble: int = 8
    seed: int = 0

    @classmethod
    def reduced(cls) -> "SuiteScale":
        return cls(name="reduced", n1d=2048, nus=(8e-3, 4e-3, 2e-3, 1e-3), structure_nu=2e-3,
                   ensemble=4, t_start=0.5, T0=0.5, n2d=128, nu2d=2e-2, ensemble2d=2,
                   t_start2d=0.5, T0_2d=0.5)

    def experiment_1d(self, **kw) -> ExperimentConfig:
        return ExperimentConfig(d=1, n=self.n1d, nu_grid=self.nus, ensemble_size=self.ensemble,
                                t_start=self.t_start, T0=self.T0, seed=self.seed, **kw)

    def experiment_2d(self, **kw) -> ExperimentConfig:
        return ExperimentConfig(d=2, n=self.n2d, nu_grid=(self.nu2d,), ensemble_size=self.ensemble2d,
                                t_start=self.t_start2d, T0=self.T0_2d, seed=self.seed, **kw)


# -- criterion 1: exact properties ----------------------------------------------

def _random_band_field(grid: TorusGrid, rng, batch=()) -> SpectralField:
    shape = tuple(batch) + grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = np.where(grid.dealias_mask & ~grid.nyquist, c, 0.0)
    # project onto real fields
    v = irfft_values(grid, c)
    return SpectralField(grid, rfft_coeffs(grid, v))


def exact_suite(seed: int = 0, n_young: int = 100_000) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    det: dict = {}

    wk = 0.0
    for d, n in ((1, 64), (2, 32), (3, 16)):
        g = TorusGrid(d, n)
        for _ in range(8):
            v = _random_band_field(g, rng)
            y = rng.uniform(-1, 1, d)
            wk = max(wk, float(np.max(wiener_khinchin_residual(v, y))))
    det["wk_residual"] = wk

    rt = pars = 0.0
    for d, n in ((1, 128), (2, 32), (3, 16)):
        g = TorusGrid(d, n)
        x = rng.standard_normal((4,) + g.shape)
        c = rfft_coeffs(g, x)
        rt = max(rt, float(np.abs(irfft_values(g, c) - x).max()))
        lhs = np.mean(x**2, axis=g.axes)
        rhs = np.sum(g.weights * np.abs(c) ** 2, axis=g.axes)
        pars = max(pars, float(np.max(np.abs(lhs - rhs) / lhs)))
    det["roundtrip"] = rt
    det["parseval_rel"] = pars

    span = expand = True
    for d in (1, 2, 3):
        for m in range(1, 7):
            basis = construct_basis(m, d)
            span &= verify_spanning(basis)
            for j, alpha in enumerate(monomials(m, d)):
                unit = [Fraction(int(i == j)) for i in range(basis.dim)]
                expand &= recombine(basis, expand_monomial(basis, alpha)) == unit
    det["spanning"] = span
    det["expansion_exact"] = expand

    worst = 0.0
    ps = rng.uniform(0.05, 8.0, n_young)
    deltas = rng.uniform(1e-3, 4.0, n_young)
    A = rng.standard_normal((n_young, 3)) * rng.lognormal(0, 2, (n_young, 1))
    B = rng.standard_normal((n_young, 3)) * rng.lognormal(0, 2, (n_young, 1))
    K = np.array([young_constant(p, dl) for p, dl in zip(ps, deltas)])
    lhs = np.linalg.norm(A + B, axis=1) ** ps
    rhs = (1 + deltas) * np.linalg.norm(A, axis=1) ** ps + K * np.linalg.norm(B, axis=1) ** ps
    worst = float(np.max(np.maximum(0.0, lhs - rhs)))
    det["young_residual"] = worst

    g = TorusGrid(1, 64)
    u = SpectralField(g, rfft_coeffs(g, np.cos(2 * np.pi * 3 * g.points()[0])))
    fl = 0.0
    for ell in (0.01, 0.05, 0.1, 0.123):
        S2 = sphere_averaged_increment([u], ell, 2.0)
        S4 = sphere_averaged_increment([u], ell, 4.0)
        fl = max(fl, float(np.max(np.abs(flatness(S2, S4) - 1.5))))
    det["flatness_dev"] = fl

    ok = wk < 1e-10 and rt < 1e-12 and pars < 1e-12 and span and expand and worst == 0.0 and fl < 1e-10
    return CheckResult(1, "exact property suite", ok, det, time.perf_counter() - t0)


# -- criterion 2: scheme validation -----------------------------------------------

def heat_exactness(seed: int = 0) -> float:
    g = TorusGrid(1, 128)
    nu, dt, n_steps = 0.05, 1e-3, 200
    cfg = SimConfig(nu, g, None, FluxSpec.zero(), DtPolicy.fixed(dt), t_end=dt * n_steps)
    psi0 = _random_band_field(g, np.random.default_rng(seed), (2,))
    st = PotentialState.initial(cfg, psi0.coeffs, (0, 1))
    out = integrate(st, cfg).state
    lam = nu * (2 * np.pi) ** 2 * g.k2
    exact = st.psi.coeffs * np.exp(-lam * dt * n_steps)
    return float(np.abs(out.psi.coeffs - exact).max() / np.abs(st.psi.coeffs).max())


def deterministic_order(n: int = 128, nu: float = 0.05, t_end: float = 0.25, dts=None) -> tuple[float, list]:
    g = TorusGrid(1, n)
    dts = dts or [2e-3 / 2**k for k in range(5)]
    psi0 = initial_potential(g, "cos", 1.0)
    sols = []
    for dt in dts:
        cfg = SimConfig(nu, g, None, FluxSpec.quadratic(), DtPolicy.fixed(dt), t_end=t_end)
        sols.append(integrate(PotentialState.initial(cfg, psi0), cfg).state.psi.coeffs)
    errs = [float(np.sqrt(np.sum(g.weights * np.abs(a - b) ** 2))) for a, b in zip(sols[:-1], sols[1:])]
    slope = stats.linregress(np.log(dts[:-1]), np.log(errs)).slope
    return float(slope), errs


def noisy_order(n: int = 128, nu: float = 0.05, t_end: float = 0.25, dt_fine: float = 1e-4,
                levels=(1, 2, 3, 4, 5), trajectories=tuple(range(32)), seed: int = 0) -> tuple[float, list]:
    """Strong error against the finest path, every level driven by the same Brownian increments."""
    g = TorusGrid(1, n)
    noise = NoiseSpec.decay(1, seed=seed)
    cfg = SimConfig(nu, g, noise, FluxSpec.quadratic(), DtPolicy.fixed(dt_fine))
    # every level must cover the same interval
    blk = 2 ** max(levels)
    n_fine = blk * math.ceil(t_end / dt_fine / blk)
    path = fine_path(cfg, trajectories, dt_fine, n_fine)
    st = PotentialState.initial(cfg, initial_potential(g, "sines", 1.0), trajectories)
    ref = integrate_on_path(st, cfg, path, dt_fine, 0).psi.coeffs
    errs = []
    for lv in levels:
        c = integrate_on_path(st, cfg, path, dt_fine, lv).psi.coeffs
        errs.append(float(np.sqrt(np.mean(np.sum(g.weights * np.abs(c - ref) ** 2, axis=-1)))))
    dts = [dt_fine * 2**lv for lv in levels]
    return float(stats.linregress(np.log(dts), np.log(errs)).slope), errs


def energy_balance(n: int = 256, nu: float = 0.02, dt: float = 1e-4, n_steps: int = 1000,
                   trajectories=tuple(range(8)), warmup: float = 0.1, seed: int = 0) -> dict:
    """Mean of the one-step ``m = 0`` balance residual over ``n_steps`` steps and the ensemble."""
    g = TorusGrid(1, n)
    cfg = SimConfig(nu, g, NoiseSpec.decay(1, seed=seed), FluxSpec.quadratic(), DtPolicy.fixed(dt),
                    t_end=warmup)
    st = integrate(PotentialState.initial(cfg, None, trajectories), cfg).state
    res = []
    for _ in range(n_steps):
        nxt, info = step(st, cfg, dt)
        res.append(energy_balance_residual(st, nxt, 0, cfg, info.increment, dt))
        st = nxt
    r = np.array(res).ravel()
    mean = float(r.mean())
    sigma = float(r.std(ddof=1) / math.sqrt(r.size))
    return {"mean": mean, "sigma": sigma, "z": mean / sigma if sigma > 0 else math.inf}


def scheme_suite() -> CheckResult:
    t0 = time.perf_counter()
    heat = heat_exactness()
    det_order, _ = deterministic_order()
    noisy, _ = noisy_order()
    eb = energy_balance()
    d = {"heat_error": heat, "deterministic_order": det_order, "noisy_order": noisy,
         "balance_z": eb["z"]}
    ok = heat < 1e-12 and det_order >= 2 and noisy >= 0.9 and abs(eb["z"]) <= 3
    return CheckResult(2, "scheme validation", ok, d, time.perf_counter() - t0)


# -- statistical criteria ---------------------------------------------------------

@dataclass
class AcceptanceSuite:
    scale: SuiteScale = field(default_factory=SuiteScale)
    _camps1: dict | None = None
    _camps2: dict | None = None
    _t1: float = 0.0
    _t2: float = 0.0

    @property
    def cfg1(self) -> ExperimentConfig:
        return self.scale.experiment_1d()

    @property
    def cfg2(self) -> ExperimentConfig:
        return self.scale.experiment_2d()

    def campaigns_1d(self) -> dict:
        if self._camps1 is None:
            t0 = time.perf_counter()
            self._camps1 = {nu: run_campaign(self.cfg1, nu) for nu in self.cfg1.nu_grid}
            self._t1 = time.perf_counter() - t0
        return self._camps1

    def campaigns_2d(self) -> dict:
        """Zero initial data and a random smooth potential, on the same noise paths."""
        if self._camps2 is None:
            t0 = time.perf_counter()
            nu = self.scale.nu2d
            self._camps2 = {"zero": run_campaign(self.cfg2, nu, "zero"),
                            "random": run_campaign(self.cfg2, nu, "random")}
            self._t2 = time.perf_counter() - t0
        return self._camps2

    def _blowups(self) -> int:
        return sum(len(c.failures) for c in self.campaigns_1d().values())

    def sobolev(self) -> CheckResult:
        camps = self.campaigns_1d()
        t0 = time.perf_counter()
        fit = sobolev_scaling_experiment(self.cfg1, 1, 2.0, 2.0, 1.0, camps)
        d = {"slope": fit.slope, "slope_se": fit.slope_se, "blowups": self._blowups()}
        return CheckResult(3, "Sobolev scaling of |u|_1^2", fit.within(-1.25, -0.75), d,
                           self._t1 + time.perf_counter() - t0)

    def _structure(self):
        nu = self.scale.structure_nu
        camp = self.campaigns_1d()[nu]
        s2 = structure_function_experiment(self.cfg1, 2.0, 1.0, nu, camp)
        s12 = structure_function_experiment(self.cfg1, 0.5, 1.0, nu, camp)
        return s2, s12

    def structure(self) -> CheckResult:
        t0 = time.perf_counter()
        s2, s12 = self._structure()
        d = {"S2_J2": s2.j2.slope, "S1/2_J2": s12.j2.slope, "S2_J1": s2.j1.slope}
        ok = s2.j2.within(0.75, 1.25) and s12.j2.within(0.35, 0.65) and s2.j1.within(1.6, 2.4)
        return CheckResult(4, "structure functions", ok, d, time.perf_counter() - t0)

    def flatness(self) -> CheckResult:
        t0 = time.perf_counter()
        s2, _ = self._structure()
        f = s2.flatness_j2
        ok = f is not None and f.within(-1.35, -0.65)
        return CheckResult(5, "flatness growth", ok, {"F_J2": f.slope if f else math.nan},
                           time.perf_counter() - t0)

    def spectrum(self) -> CheckResult:
        t0 = time.perf_counter()
        nu = self.scale.structure_nu
        rep = spectrum_experiment(self.cfg1, nu, self.campaigns_1d()[nu])
        d = {"slope": rep.fit.slope, "tail_slopes": list(rep.tail_slopes), "tail_monotone": rep.tail_monotone}
        ok = rep.fit.within(-2.5, -1.5) and rep.tail_monotone
        return CheckResult(6, "energy spectrum", ok, d, time.perf_counter() - t0)

    def fractional(self) -> CheckResult:
        t0 = time.perf_counter()
        camps = self.campaigns_1d()
        q = fractional_norm_experiment(self.cfg1, 0.25, camps)
        h = fractional_norm_experiment(self.cfg1, 0.5, camps)
        t = fractional_norm_experiment(self.cfg1, 0.75, camps)
        d = {"slope_1/4": q.fit.slope, "slope_3/4": t.fit.slope, "rss_log_1/2": h.log_fit_rss,
             "rss_power_1/2": h.power_fit_rss}
        ok = q.fit.within(-0.2, 0.2) and t.fit.within(-0.75, -0.25) and bool(h.log_beats_power)
        return CheckResult(7, "fractional norms", ok, d, time.perf_counter() - t0)

    def kruzhkov(self) -> CheckResult:
        t0 = time.perf_counter()
        kz = kruzhkov_experiment(self.cfg1, self.campaigns_1d())
        d = {"ratio": kz["ratio"], "means": [v[0] for v in kz["brackets"].values()]}
        return CheckResult(8, "second-derivative bound", kz["ratio"] < 2, d, time.perf_counter() - t0)

    def two_d(self) -> CheckResult:
        camps = self.campaigns_2d()
        t0 = time.perf_counter()
        nu = self.scale.nu2d
        a, b = camps["zero"], camps["random"]
        rep = spectrum_experiment(self.cfg2, nu, a)
        s2 = structure_function_experiment(self.cfg2, 2.0, 1.0, nu, a)
        curl = max(a.curl_max, b.curl_max)
        probe = independence_probe(a, b, lambda r: r.norms[(1, 2.0)] ** 2)
        d = {"spectrum": rep.fit.slope, "S2_J2": s2.j2.slope, "curl": curl,
             "norm_zero": probe["a"].mean, "norm_random": probe["b"].mean,
             "sigma": math.hypot(probe["a"].se, probe["b"].se),
             "blowups": len(a.failures) + len(b.failures)}
        ok = rep.fit.within(-2.6, -1.4) and s2.j2.within(0.6, 1.4) and curl < 1e-10 and probe["agree"]
        return CheckResult(9, "two-dimensional smoke test", ok, d, self._t2 + time.perf_counter() - t0)

    def coupling(self) -> CheckResult:
        t0 = time.perf_counter()
        s = self.scale
        cfg = ExperimentConfig(d=1, n=s.coupling_n, nu_grid=(s.coupling_nu,), ensemble_size=s.coupling_ensemble,
                               noise_trace0=s.coupling_trace0, seed=s.seed, T0=1.0, t_start=1.0)
        g = cfg.grid()
        a = initial_potential(g, "sines", s.coupling_amplitude)
        b = initial_potential(g, "random", s.coupling_amplitude, seed=1)
        rep = coupling_experiment(cfg, a, b, s.coupling_nu, s.coupling_t_end, s.coupling_dt)
        g2, g20 = rep.gap_at(2.0), rep.gap_at(s.coupling_t_end)
        d = {"steps": rep.steps, "violations": rep.violations, "max_rel_increase": rep.max_relative_increase,
             "gap_t2": g2, "gap_end": g20}
        ok = rep.violations == 0 and rep.steps >= 10_000 and g20 < g2
        return CheckResult(10, "coupling contraction", ok, d, time.perf_counter() - t0)


# -- criterion 11: determinism -------------------------------------------------

def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def determinism_runs(runs: list[dict] | None = None) -> CheckResult:
    """Two executions of each CLI configuration into the same directory must agree byte for byte."""
    from .cli import config_from_dict, run
    t0 = time.perf_counter()
    base = {"experiment": {"n": 256, "ensemble_size": 2, "T0": 0.1, "t_start": 0.1, "snapshot_every": 0.05,
                           "nu_grid": [4e-3], "threads": 1}}
    runs = runs or [dict(base, kind="simulate", formats=["ndjson", "csv"]),
                    dict(base, kind="structure", formats=["ndjson"])]
    same = True
    n_files = 0
    tmp = Path(tempfile.mkdtemp(prefix="burgulence-det-"))
    try:
        for i, spec in enumerate(runs):
            out = tmp / f"run{i}"
            digests = []
            for _ in range(2):
                if out.exists():
                    shutil.rmtree(out)
                rc = config_from_dict(dict(spec, out=str(out), verbosity=0))
                run(rc)
                digests.append(_digest(out))
            same &= digests[0] == digests[1]
            n_files += len(digests[0])
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return CheckResult(11, "determinism", same, {"files_compared": n_files, "identical": same},
                       time.perf_counter() - t0)


# -- driver -----------------------------------------------------------------------

def run_suite(scale: SuiteScale | None = None, criteria=None, report=print) -> list[CheckResult]:
    suite = AcceptanceSuite(scale or SuiteScale())
    table = {1: exact_suite, 2: scheme_suite, 3: suite.sobolev, 4: suite.structure, 5: suite.flatness,
             6: suite.spectrum, 7: suite.fractional, 8: suite.kruzhkov, 9: suite.two_d, 10: suite.coupling,
             11: determinism_runs}
    out = []
    for c in criteria or sorted(table):
        res = table[c]()
        if report:
            report(res.line())
        out.append(res)
    return out


def run_selftest(rc) -> int:
    """Reduced-scale suite; exit status 1 if any criterion fails."""
    results = run_suite(SuiteScale.reduced(), report=print if rc.verbosity else None)
    failed = [r.criterion for r in results if not r.passed]
    if rc.verbosity:
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
              + (f"; failing: {failed}" if failed else ""))
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "selftest.ndjson").write_text("".join(
        json.dumps({"criterion": r.criterion, "title": r.title, "passed": r.passed, "details": r.details},
                   sort_keys=True, default=float) + "\n" for r in results))
    write_manifest(out, rc.to_dict(), ["selftest.ndjson"], {"failed": failed})
    return 1 if failed else 0
