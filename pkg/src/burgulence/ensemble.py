"""Ensemble campaigns, the time/ensemble bracket and log-log scaling fits."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import curve_fit

from .diagnostics import DiagnosticsPlan, DiagnosticsRecord, RangeSpec, compute_records
from .dynamics import (DtPolicy, FluxSpec, PotentialState, SimConfig, contraction_gap, curl_residual,
                       integrate)
from .forcing import NoiseSpec, embed, embedding, half_lattice, load_profile
from .torus import TWO_PI, SpectralField, TorusGrid, from_function


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Plain-data description of a campaign; every field has a default."""

    d: int = 1
    n: int = 1024
    nu_grid: tuple = (1e-3,)
    flux: str = "quadratic"
    dealias_fraction: float = 2.0 / 3.0
    padding: float = 1.5
    noise_radius: float = 32.0
    noise_rate: float = 0.5
    noise_trace0: float = 1.0
    noise_profile: str | None = None
    seed: int = 0
    first_trajectory: int = 0
    ensemble_size: int = 8
    T0: float = 5.0
    t_start: float = 10.0
    n_windows: int = 1
    snapshot_every: float = 0.05
    dt_kind: str = "cfl"
    dt_safety: float = 0.5
    dt_max: float = 1e-3
    dt_fixed: float | None = None
    initial: str = "zero"
    initial_amplitude: float = 1.0
    initial_seed: int = 0
    C1: float = 4.0
    C2: float = 0.25
    nu0: float = 0.05
    M: float = 2.0
    n_ells: int = 48
    n_ks: int = 40
    n_dirs: int = 8
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "nu_grid", tuple(float(x) for x in self.nu_grid))
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.T0 <= 0:
            raise ValueError("T0 must be positive")
        if self.t_start < self.T0:
            raise ValueError("t_start must leave a warm-up of at least T0")
        if self.n_windows < 1:
            raise ValueError("n_windows must be >= 1")
        if not self.nu_grid:
            raise ValueError("nu_grid must not be empty")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        # build once to surface validation errors early
        self.grid()
        if self.noise_profile is None:
            self.noise_spec()

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_windows * self.T0

    @property
    def trajectories(self) -> tuple[int, ...]:
        return tuple(range(self.first_trajectory, self.first_trajectory + self.ensemble_size))

    def grid(self) -> TorusGrid:
        return TorusGrid(self.d, self.n, self.dealias_fraction)

    def noise_spec(self) -> NoiseSpec:
        if self.noise_profile is not None:
            return load_profile(self.noise_profile, seed=self.seed)
        return NoiseSpec.decay(self.d, self.noise_radius, self.noise_rate, trace0=self.noise_trace0,
                               seed=self.seed)

    def dt_policy(self) -> DtPolicy:
        if self.dt_kind == "fixed":
            return DtPolicy.fixed(self.dt_fixed)
        return DtPolicy(self.dt_kind, self.dt_safety, self.dt_max)

    def sim_config(self, nu: float) -> SimConfig:
        return SimConfig(nu, self.grid(), self.noise_spec(), FluxSpec.by_name(self.flux), self.dt_policy(),
                         self.t_end, self.snapshot_every, self.t_start, self.padding, threads=1)

    def ranges(self, nu: float) -> RangeSpec:
        return RangeSpec(nu, self.C1, self.C2, self.nu0, self.M)

    def plan(self) -> DiagnosticsPlan:
        return DiagnosticsPlan.for_grid(self.grid(), self.n_ells, self.n_ks, n_dirs=self.n_dirs, M=self.M)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(data) - known)
        if bad:
            raise ValueError(f"unknown experiment keys: {', '.join(bad)}")
        return cls(**dict(data))


def initial_potential(grid: TorusGrid, kind: str = "zero", amplitude: float = 1.0, seed: int = 0) -> SpectralField:
    """Smooth initial potentials.

    ``zero``; ``cos``: ``A cos(2 pi x_1) / (2 pi)``; ``sines``: a sum of
    low sines in every axis; ``random``: Gaussian coefficients on
    ``|n| <= 4`` with ``exp(-|n|)`` decay, seeded.
    """
    if kind == "zero":
        return SpectralField(grid, np.zeros(grid.spectral_shape, dtype=complex))
    if kind == "cos":
        return from_function(grid, lambda *x: amplitude * np.cos(TWO_PI * x[0]) / TWO_PI)
    if kind == "sines":
        return from_function(grid, lambda *x: amplitude * sum(
            np.sin(TWO_PI * xi + 0.3 * (i + 1)) + 0.5 * np.sin(2 * TWO_PI * xi) for i, xi in enumerate(x)) / TWO_PI)
    if kind == "random":
        rng = np.random.default_rng(seed)
        modes = half_lattice(grid.d, 4)
        decay = np.exp(-np.sqrt((np.array(modes) ** 2).sum(axis=1)))
        spec = NoiseSpec(grid.d, modes, decay, decay)
        a, b = rng.standard_normal((2, len(modes))) * decay
        c = embed(embedding(grid, spec), a, b)
        peak = np.abs(SpectralField(grid, c).values()).max()
        return SpectralField(grid, amplitude * c / peak)
    raise ValueError(f"unknown initial condition {kind!r}")


# -- bracket and fits ---------------------------------------------------------

@dataclass(frozen=True)
class BracketValue:
    mean: float
    se: float
    n_trajectories: int
    n_snapshots: int
    per_trajectory: tuple = ()


def bracket(samples: Mapping[int, Sequence[tuple[float, float]]], window: tuple[float, float]) -> BracketValue:
    """Average over snapshot times in ``window = (lo, hi]`` and over trajectories.

    ``samples`` maps trajectory id to ``(t, value)`` pairs.  The standard
    error is the between-trajectory standard deviation over ``sqrt(n)``.
    Sums are exact-rounded and ordered by trajectory id, so the result does
    not depend on how the samples were produced or merged.
    """
    lo, hi = window
    tol = 1e-9 * max(1.0, abs(hi))
    per = []
    n_snap = 0
    for traj in sorted(samples):
        vals = sorted((t, v) for t, v in samples[traj] if lo + tol < t <= hi + tol)
        if vals:
            per.append(math.fsum(v for _, v in vals) / len(vals))
            n_snap += len(vals)
    if not per:
        raise ValueError(f"no snapshots in window {window}")
    n = len(per)
    mean = math.fsum(per) / n
    se = math.sqrt(math.fsum((x - mean) ** 2 for x in per) / (n - 1) / n) if n > 1 else 0.0
    return BracketValue(mean, se, n, n_snap, tuple(per))


def bracket_records(records: Sequence[DiagnosticsRecord], getter: Callable[[DiagnosticsRecord], float],
                    window: tuple[float, float]) -> BracketValue:
    samples: dict[int, list] = {}
    for r in records:
        samples.setdefault(r.trajectory, []).append((r.t, float(getter(r))))
    return bracket(samples, window)


@dataclass(frozen=True)
class ScalingFit:
    abscissa: str
    slope: float
    slope_se: float
    intercept: float
    window: tuple
    predicted: float | None = None
    predicted_source: str = ""
    n_points: int = 0
    label: str = ""

    def within(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fit_scaling(points: Sequence[tuple[float, float]], window: tuple[float, float] | None = None,
                abscissa: str = "x", predicted: float | None = None, source: str = "",
                label: str = "") -> ScalingFit:
    """Least-squares slope of ``log y`` against ``log x`` over points with ``x`` in ``window``."""
    pts = [(float(x), float(y)) for x, y in points]
    if window is not None:
        lo, hi = window
        pts = [(x, y) for x, y in pts if lo <= x <= hi]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points in the fit window, got {len(pts)}")
    if any(x <= 0 or y <= 0 or not math.isfinite(y) for x, y in pts):
        raise ValueError("log-log fits need positive finite values")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    res = stats.linregress(lx, ly)
    se = float(res.stderr) if len(pts) > 2 else float("inf")
    if window is None:
        window = (min(x for x, _ in pts), max(x for x, _ in pts))
    return ScalingFit(abscissa, float(res.slope), se, float(res.intercept), tuple(window), predicted,
                      source, len(pts), label)


def sobolev_exponent(m: float, p: float) -> float:
    """``gamma = max(0, m - 1/p)``."""
    return max(0.0, m - (0.0 if p == math.inf else 1.0 / p))


# -- campaigns ----------------------------------------------------------------

@dataclass
class CampaignResult:
    nu: float
    records: list
    steps: list
    dt_min: list
    dt_max: list
    blown: list
    failures: list
    t_start: float
    T0: float
    n_windows: int
    curl_max: float = 0.0

    def windows(self) -> list[tuple[float, float]]:
        return [(self.t_start + i * self.T0, self.t_start + (i + 1) * self.T0) for i in range(self.n_windows)]

    @property
    def full_window(self) -> tuple[float, float]:
        return (self.t_start, self.t_start + self.n_windows * self.T0)

    def bracket(self, getter, window=None) -> BracketValue:
        return bracket_records(self.records, getter, window or self.full_window)


def _run_job(cfg: ExperimentConfig, nu: float, trajectories: tuple, psi0_kind: str | None) -> dict:
    sim = cfg.sim_config(nu)
    grid = sim.grid
    psi0 = initial_potential(grid, psi0_kind or cfg.initial, cfg.initial_amplitude, cfg.initial_seed)
    state = PotentialState.initial(sim, psi0, trajectories)
    plan = cfg.plan()
    records: list[DiagnosticsRecord] = []
    curl = [0.0]

    def observe(snap):
        if snap.t >= cfg.t_start - 1e-12:
            curl[0] = max(curl[0], curl_residual(snap.psi))
            alive = [i for i in range(len(snap.trajectories)) if snap.alive[i]]
            if alive:
                recs = compute_records(snap.psi[alive], plan, snap.t, [snap.trajectories[i] for i in alive])
                records.extend(recs)

    summary = integrate(state, sim, [observe], on_blowup="flag")
    return {"records": records, "steps": summary.steps.tolist(), "dt_min": summary.dt_min.tolist(),
            "dt_max": summary.dt_max.tolist(), "blown": summary.blown.tolist(),
            "failures": summary.failures, "curl": curl[0]}


def _partition(traj: tuple, threads: int) -> list[tuple]:
    k = max(1, min(threads, len(traj)))
    size = math.ceil(len(traj) / k)
    return [traj[i:i + size] for i in range(0, len(traj), size)]


def run_campaign(cfg: ExperimentConfig, nu: float, initial: str | None = None) -> CampaignResult:
    """Simulate the ensemble at one ``nu`` and collect diagnostics over the averaging windows.

    With ``threads > 1`` the trajectories are split statically over worker
    processes; each trajectory's output is independent of the split.
    """
    parts = _partition(cfg.trajectories, cfg.threads)
    if cfg.threads > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            outs = list(ex.map(_run_job, [cfg] * len(parts), [nu] * len(parts), parts,
                               [initial] * len(parts)))
    else:
        outs = [_run_job(cfg, nu, p, initial) for p in parts]
    recs = [r for o in outs for r in o["records"]]
    recs.sort(key=lambda r: (r.t, r.trajectory))
    cat = lambda key: [x for o in outs for x in o[key]]  # noqa: E731
    return CampaignResult(nu, recs, cat("steps"), cat("dt_min"), cat("dt_max"), cat("blown"),
                          cat("failures"), cfg.t_start, cfg.T0, cfg.n_windows,
                          max(o["curl"] for o in outs))


def run_campaigns(cfg: ExperimentConfig) -> dict[float, CampaignResult]:
    return {nu: run_campaign(cfg, nu) for nu in cfg.nu_grid}


# -- experiments --------------------------------------------------------------

def _campaigns(cfg, campaigns):
    return campaigns if campaigns is not None else run_campaigns(cfg)


def sobolev_scaling_experiment(cfg: ExperimentConfig, m: int, p: float, alpha: float = 1.0,
                               power: float | None = None,
                               campaigns: Mapping[float, CampaignResult] | None = None) -> ScalingFit:
    """Fit ``{|u|_{m,p}^alpha}^power`` against ``nu`` (``power`` defaults to ``1/alpha``)."""
    if len(cfg.nu_grid) < 3:
        raise ValueError("a viscosity fit needs at least 3 values of nu")
    if any(nu > cfg.nu0 for nu in cfg.nu_grid):
        raise ValueError("every nu must be <= nu0")
    power = 1.0 / alpha if power is None else power
    camps = _campaigns(cfg, campaigns)
    pts = []
    for nu in cfg.nu_grid:
        b = camps[nu].bracket(lambda r: r.norms[(m, p)] ** alpha)
        pts.append((nu, b.mean ** power))
    gamma = sobolev_exponent(m, p)
    return fit_scaling(pts, abscissa="nu", predicted=-gamma * alpha * power,
                       source=f"norm scaling, gamma = max(0, m - 1/p) = {gamma:g}",
                       label=f"|u|_{{{m},{p:g}}}^{alpha:g}")


@dataclass(frozen=True)
class StructureFits:
    j1: ScalingFit
    j2: ScalingFit
    flatness_j2: ScalingFit | None
    curve: tuple  # (ell, S) pairs

    def to_dicts(self) -> list[dict]:
        return [f.to_dict() for f in (self.j1, self.j2, self.flatness_j2) if f is not None]


def structure_curve(camp: CampaignResult, p: float, alpha: float) -> list[tuple[float, float]]:
    ells = sorted({k[2] for k in camp.records[0].structure if k[0] == p and k[1] == alpha})
    return [(ell, camp.bracket(lambda r, e=ell: r.structure[(p, alpha, e)]).mean) for ell in ells]


def structure_function_experiment(cfg: ExperimentConfig, p: float, alpha: float = 1.0, nu: float | None = None,
                                  campaign: CampaignResult | None = None, margin: float = 0.2,
                                  j1_factors: tuple[float, float] = (1 / 400, 1 / 16)) -> StructureFits:
    """Separate log-log fits of ``S_{p,alpha}(ell)`` in the dissipative and inertial ranges."""
    nu = cfg.nu_grid[0] if nu is None else nu
    camp = campaign or run_campaign(cfg, nu)
    rs = cfg.ranges(nu)
    curve = structure_curve(camp, p, alpha)
    pred_j2 = alpha * p if p <= 1 else alpha
    j2 = fit_scaling(curve, rs.inertial_window(margin), "ell", pred_j2,
                     "inertial structure function exponent", f"S_{p:g},{alpha:g} J2")
    j1 = fit_scaling(curve, rs.dissipative_window(*j1_factors), "ell", alpha * p,
                     "dissipative structure function exponent", f"S_{p:g},{alpha:g} J1")
    flat = None
    if camp.records[0].flatness:
        ells = sorted(camp.records[0].flatness)
        fl = [(e, camp.bracket(lambda r, e=e: r.structure[(4.0, 1.0, e)]).mean
               / camp.bracket(lambda r, e=e: r.structure[(2.0, 1.0, e)]).mean ** 2) for e in ells]
        flat = fit_scaling(fl, rs.inertial_window(margin), "ell", -1.0, "flatness growth", "F J2")
    return StructureFits(j1, j2, flat, tuple(curve))


@dataclass(frozen=True)
class SpectrumReport:
    fit: ScalingFit
    tail_slopes: tuple
    tail_monotone: bool
    curve: tuple

    def to_dicts(self) -> list[dict]:
        d = self.fit.to_dict()
        d["tail_slopes"] = list(self.tail_slopes)
        d["tail_monotone"] = self.tail_monotone
        return [d]


def spectrum_curve_bracket(camp: CampaignResult) -> list[tuple[float, float]]:
    ks = sorted(camp.records[0].spectrum)
    return [(k, camp.bracket(lambda r, k=k: r.spectrum[k]).mean) for k in ks]


def tail_slopes(camp: CampaignResult, k0: float, n_octaves: int = 3) -> list[float]:
    """Local log-log slopes of ``{E(k)}`` over successive octaves starting at ``k0``.

    Octave edges snap to the nearest sampled wavenumber.
    """
    ks = sorted(camp.records[0].spectrum)
    edges = [min(ks, key=lambda x: abs(math.log(x / (k0 * 2**i)))) for i in range(n_octaves + 1)]
    vals = []
    for a, b in zip(edges[:-1], edges[1:]):
        lo = camp.bracket(lambda r: r.spectrum[a]).mean
        hi = camp.bracket(lambda r: r.spectrum[b]).mean
        vals.append(math.log(hi / lo) / math.log(b / a) if lo > 0 and hi > 0 else -math.inf)
    return vals


def spectrum_experiment(cfg: ExperimentConfig, nu: float | None = None, campaign: CampaignResult | None = None,
                        margin: float = 0.2) -> SpectrumReport:
    """Inertial fit of ``E(k)`` for ``1/k`` in ``J2`` and the local slopes of the dissipative tail."""
    nu = cfg.nu_grid[0] if nu is None else nu
    camp = campaign or run_campaign(cfg, nu)
    rs = cfg.ranges(nu)
    lo, hi = rs.inertial_window(margin)
    curve = spectrum_curve_bracket(camp)
    fit = fit_scaling(curve, (1 / hi, 1 / lo), "k", -2.0, "inertial energy spectrum", "E(k)")
    kmax = max(k for k, _ in curve)
    k0 = min(1 / (cfg.C1 * nu), kmax / 8)
    slopes = tail_slopes(camp, k0)
    mono = all(b < a for a, b in zip(slopes[:-1], slopes[1:]))
    return SpectrumReport(fit, tuple(slopes), mono, tuple(curve))


@dataclass(frozen=True)
class FractionalReport:
    s: float
    fit: ScalingFit
    log_fit_rss: float | None = None
    power_fit_rss: float | None = None

    @property
    def log_beats_power(self) -> bool | None:
        if self.log_fit_rss is None:
            return None
        return self.log_fit_rss < self.power_fit_rss

    def to_dict(self) -> dict:
        d = self.fit.to_dict()
        d.update(s=self.s, log_fit_rss=self.log_fit_rss, power_fit_rss=self.power_fit_rss)
        return d


def fractional_norm_experiment(cfg: ExperimentConfig, s: float,
                               campaigns: Mapping[float, CampaignResult] | None = None) -> FractionalReport:
    """``{(||u||'_s)^2}`` against ``nu``: power fit, plus a ``a + b log(1/nu)`` comparison.

    Both models have two parameters and are fitted by least squares on the
    values themselves, so their residual sums are directly comparable.
    """
    camps = _campaigns(cfg, campaigns)
    pts = [(nu, camps[nu].bracket(lambda r: r.sobolev[s] ** 2).mean) for nu in cfg.nu_grid]
    pred = 0.0 if s < 0.5 else (None if s == 0.5 else -(2 * s - 1))
    fit = fit_scaling(pts, abscissa="nu", predicted=pred, source="fractional norm scaling",
                      label=f"||u||'_{s:g}^2")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    # best single power in the same least-squares sense, seeded by the log-log fit
    try:
        (c, beta), _ = curve_fit(lambda v, c, beta: c * v**beta, x, y,
                                 p0=(math.exp(fit.intercept), fit.slope), maxfev=20000)
    except RuntimeError:
        c, beta = math.exp(fit.intercept), fit.slope
    power = c * x**beta
    A = np.stack([np.ones_like(x), np.log(1 / x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    logm = A @ coef
    return FractionalReport(s, fit, float(np.sum((y - logm) ** 2)), float(np.sum((y - power) ** 2)))


def kruzhkov_experiment(cfg: ExperimentConfig, campaigns=None) -> dict:
    camps = _campaigns(cfg, campaigns)
    vals = {nu: camps[nu].bracket(lambda r: r.kruzhkov_max) for nu in cfg.nu_grid}
    means = [v.mean for v in vals.values()]
    return {"brackets": {nu: (v.mean, v.se) for nu, v in vals.items()},
            "ratio": max(means) / min(means) if min(means) > 0 else math.inf}


def stationarity_probe(camp: CampaignResult, getter, n_sigma: float = 3.0) -> dict:
    """Compare brackets over consecutive windows."""
    ws = camp.windows()
    if len(ws) < 2:
        raise ValueError("the probe needs at least two averaging windows")
    a, b = camp.bracket(getter, ws[0]), camp.bracket(getter, ws[1])
    comb = math.hypot(a.se, b.se)
    return {"first": a, "second": b, "agree": abs(a.mean - b.mean) <= n_sigma * comb}


def independence_probe(camp_a: CampaignResult, camp_b: CampaignResult, getter, n_sigma: float = 3.0) -> dict:
    a, b = camp_a.bracket(getter), camp_b.bracket(getter)
    comb = math.hypot(a.se, b.se)
    return {"a": a, "b": b, "agree": abs(a.mean - b.mean) <= n_sigma * comb}


# -- coupling -----------------------------------------------------------------

@dataclass(frozen=True)
class CouplingReport:
    times: tuple
    median_gap: tuple
    gaps: tuple             # (n_times, ensemble)
    violations: int
    max_relative_increase: float
    decay_fit: ScalingFit | None
    steps: int

    def gap_at(self, t: float) -> float:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.median_gap[i]

    def to_dict(self) -> dict:
        return {"violations": self.violations, "max_relative_increase": self.max_relative_increase,
                "steps": self.steps, "times": list(self.times), "median_gap": list(self.median_gap),
                "decay_fit": None if self.decay_fit is None else self.decay_fit.to_dict()}


def coupling_experiment(cfg: ExperimentConfig, psi0_a: SpectralField, psi0_b: SpectralField,
                        nu: float | None = None, t_end: float = 20.0, dt: float = 2e-3,
                        sample_every: float = 0.5, slack: float = 1e-8,
                        fit_from: float = 2.0, round_floor: float = 1e3) -> CouplingReport:
    """Evolve two initial potentials on the same noise paths with a common fixed step.

    The gap ``inf_c |psi_a - psi_b - c|_inf`` is audited after every step.
    A violation is an increase beyond ``slack`` times the previous gap plus
    a rounding allowance of ``round_floor * eps * (|psi_a|_inf + |psi_b|_inf)``;
    once the copies agree to machine precision the gap only carries
    round-off.  ``max_relative_increase`` is taken over gaps above that
    allowance.
    """
    nu = cfg.nu_grid[0] if nu is None else nu
    sim = replace(cfg.sim_config(nu), dt_policy=DtPolicy.fixed(dt), t_end=t_end,
                  snapshot_every=sample_every, snapshot_start=0.0)
    traj = cfg.trajectories
    e = len(traj)
    c0 = np.concatenate([np.broadcast_to(psi0_a.coeffs, (e,) + psi0_a.coeffs.shape[-sim.grid.d:]),
                         np.broadcast_to(psi0_b.coeffs, (e,) + psi0_b.coeffs.shape[-sim.grid.d:])])
    state = PotentialState.initial(sim, c0, traj + traj)
    prev = [contraction_gap(state.psi[:e], state.psi[e:])]
    viol = [0]
    worst = [0.0]

    eps = np.finfo(float).eps

    def hook(before, after, info):
        g = contraction_gap(after.psi[:e], after.psi[e:])
        p = prev[0]
        vals = np.abs(after.psi.values())
        scale = vals[:e].max(axis=sim.grid.axes) + vals[e:].max(axis=sim.grid.axes)
        floor = round_floor * eps * scale
        rise = g - p
        viol[0] += int(np.sum(rise > slack * p + floor))
        above = p > floor
        if above.any():
            worst[0] = max(worst[0], float((rise[above] / p[above]).max()))
        prev[0] = g

    times, gaps = [], []

    def observe(snap):
        times.append(snap.t)
        gaps.append(contraction_gap(snap.psi[:e], snap.psi[e:]))

    summ = integrate(state, sim, [observe], step_hook=hook)
    gaps_arr = np.array(gaps)
    med = np.median(gaps_arr, axis=1)
    fit = None
    pts = [(t, m) for t, m in zip(times, med) if t >= fit_from and m > 0]
    if len(pts) >= 3:
        fit = fit_scaling(pts, abscissa="t", source="algebraic decay probe (no predicted value)",
                          label="median coupling gap")
    return CouplingReport(tuple(times), tuple(float(x) for x in med), tuple(map(tuple, gaps_arr)),
                          viol[0], worst[0], fit, int(summ.steps.max()))


# -- outputs ------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    """Content hash in the format git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable).encode()


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_manifest(out: Path, config: dict, files: Sequence[str], extra: dict | None = None) -> Path:
    """``manifest.json``: config, seeds, content hash of the config and the emitted files."""
    spec_bytes = canonical_json(config)
    man = {"config": config, "config_hash": git_blob_hash(spec_bytes), "files": sorted(files)}
    if extra:
        man.update(extra)
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(man, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return path


def write_fits(path: Path, fits: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for f in fits:
            fh.write(json.dumps(f, sort_keys=True, default=_jsonable) + "\n")


def write_records(path: Path, records: Sequence[DiagnosticsRecord], fmt: str = "ndjson") -> list[Path]:
    """Diagnostics as NDJSON, or CSV plus its column manifest."""
    from .diagnostics import column_manifest, write_csv
    path = Path(path)
    if fmt == "ndjson":
        path.write_text("".join(r.to_ndjson() + "\n" for r in records))
        return [path]
    if fmt == "csv":
        path.write_text(write_csv(records))
        cols = path.with_suffix(".columns.json")
        cols.write_text(json.dumps(column_manifest(records), indent=2) + "\n")
        return [path, cols]
    raise ValueError(f"unknown format {fmt!r}")
