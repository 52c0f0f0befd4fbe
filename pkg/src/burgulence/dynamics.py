"""Exponential-integrator solver for ``psi_t + f(grad psi) - nu Lap psi = dw/dt``.

The potential is advanced in spectral space.  One step of size ``h`` is

    psi* = S(h/2) psi - phi1(h/2) F(psi)  + X1
    psi' = S(h)   psi - phi1(h)   F(psi*) + S(h/2) X1 + X2

with ``S(h) = exp(-lam h)``, ``phi1(h) = (1 - exp(-lam h)) / lam``,
``lam = nu (2 pi |n|)^2``, ``F = P f(grad psi)`` (dealiased) and ``X1``,
``X2`` the stochastic convolutions over the two half steps, drawn jointly
with the Brownian increments.  The mean mode is discarded every step.

States are batched: row ``j`` of ``psi`` belongs to trajectory id
``trajectories[j]``, carries its own time and step counter, and its own
CFL time step.  A row's evolution never depends on the other rows.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .forcing import (NoiseSpec, NoiseState, OUIncrement, draw_ou_increment, embed,
                      embedding, mode_rates, scale_modes, trace_I)
from .torus import TWO_PI, SpectralField, TorusGrid, gradient, irfft_values


class SimulationError(RuntimeError):
    """A trajectory failed; carries its id and time of failure."""

    def __init__(self, msg: str, trajectory: int | None = None, t: float | None = None):
        super().__init__(msg if t is None else f"{msg} (trajectory {trajectory}, t={t:.6g})")
        self.trajectory = trajectory
        self.t = t


class BlowUpError(SimulationError):
    pass


class CFLViolation(SimulationError):
    pass


# -- fluxes -------------------------------------------------------------------

Vec = Sequence[np.ndarray]


@dataclass(frozen=True)
class FluxSpec:
    """A strongly convex flux ``f`` with its gradient.

    ``value(v)`` and ``grad(v)`` take the list of velocity components as
    arrays.  ``quadratic_exact`` marks fluxes for which the 2/3 mask alone
    removes all aliasing.  ``growth`` maps derivative order ``m`` to the
    exponent ``h(m)`` in ``|d^m f(v)| <= C (1 + |v|)^{h(m)}``.
    """

    name: str
    value: Callable[[Vec], np.ndarray]
    grad: Callable[[Vec], list[np.ndarray]]
    sigma: float
    growth: dict = field(default_factory=dict)
    quadratic_exact: bool = False
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def quadratic(cls) -> "FluxSpec":
        return cls("quadratic", lambda v: 0.5 * sum(x * x for x in v), lambda v: list(v),
                   1.0, {1: 1, 2: 0}, True,
                   lambda pts: np.broadcast_to(np.eye(pts.shape[-1]), pts.shape + pts.shape[-1:]))

    @classmethod
    def logcosh(cls) -> "FluxSpec":
        """``|v|^2/2 + sum_i log cosh v_i``: convex with ``sigma = 1``, not polynomial."""
        def value(v):
            return sum(0.5 * x * x + np.logaddexp(x, -x) - math.log(2.0) for x in v)

        def hess(pts):
            h = np.zeros(pts.shape + pts.shape[-1:])
            idx = np.arange(pts.shape[-1])
            h[..., idx, idx] = 1.0 + 1.0 / np.cosh(pts) ** 2
            return h

        return cls("logcosh", value, lambda v: [x + np.tanh(x) for x in v], 1.0, {1: 1, 2: 0},
                   False, hess)

    @classmethod
    def zero(cls) -> "FluxSpec":
        """``f = 0``: a test hook that reduces the equation to forced heat flow."""
        return cls("zero", lambda v: np.zeros_like(v[0]), lambda v: [np.zeros_like(x) for x in v],
                   0.0, {}, True, None)

    @classmethod
    def custom(cls, name: str, value, grad, hessian, sigma: float, d: int,
               growth: dict | None = None, probe_radius: float = 10.0, n_probe: int = 4096,
               seed: int = 0) -> "FluxSpec":
        """User flux, accepted only if ``D^2 f >= sigma`` at sampled points of a probe box."""
        if sigma <= 0:
            raise ValueError("sigma must be positive for a user flux")
        flux = cls(name, value, grad, sigma, dict(growth or {}), False, hessian)
        if not check_hessian(flux, d, probe_radius, n_probe, seed):
            raise ValueError(f"flux {name!r} fails the convexity check with sigma={sigma}")
        return flux

    @classmethod
    def by_name(cls, name: str) -> "FluxSpec":
        try:
            return {"quadratic": cls.quadratic, "logcosh": cls.logcosh, "zero": cls.zero}[name]()
        except KeyError:
            raise ValueError(f"unknown flux {name!r}") from None


def check_hessian(flux: FluxSpec, d: int, radius: float = 10.0, n_probe: int = 4096,
                  seed: int = 0, tol: float = 1e-12) -> bool:
    """Minimum Hessian eigenvalue over random points of ``[-radius, radius]^d`` is ``>= sigma``."""
    if flux.hessian is None:
        raise ValueError(f"flux {flux.name!r} has no Hessian to check")
    pts = np.random.default_rng(seed).uniform(-radius, radius, size=(n_probe, d))
    eig = np.linalg.eigvalsh(np.asarray(flux.hessian(pts)))
    return bool(eig.min() >= flux.sigma - tol)


# -- configuration and state --------------------------------------------------

@dataclass(frozen=True)
class DtPolicy:
    """``kind="cfl"``: ``dt = safety * dx / max|grad f(u)|``, capped by ``dt_max``.

    ``kind="fixed"``: constant ``dt``; a step whose Courant number exceeds
    ``cfl_limit`` raises :class:`CFLViolation`.
    """

    kind: str = "cfl"
    safety: float = 0.5
    dt_max: float = 1e-3
    dt: float | None = None
    cfl_limit: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cfl", "fixed"):
            raise ValueError(f"dt_policy.kind must be 'cfl' or 'fixed', got {self.kind!r}")
        if self.kind == "fixed" and not (self.dt and self.dt > 0):
            raise ValueError("fixed dt policy needs dt > 0")
        if not 0 < self.safety <= 1:
            raise ValueError("dt_policy.safety must lie in (0, 1]")
        if self.dt_max <= 0:
            raise ValueError("dt_policy.dt_max must be positive")

    @classmethod
    def fixed(cls, dt: float, cfl_limit: float = 1.0) -> "DtPolicy":
        return cls("fixed", dt=dt, dt_max=dt, cfl_limit=cfl_limit)


@dataclass(frozen=True)
class SimConfig:
    nu: float
    grid: TorusGrid
    noise: NoiseSpec | None
    flux: FluxSpec = field(default_factory=FluxSpec.quadratic)
    dt_policy: DtPolicy = field(default_factory=DtPolicy)
    t_end: float = 1.0
    snapshot_every: float | None = None
    snapshot_start: float = 0.0
    padding: float = 1.5
    blowup_speed: float = 1e6
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if self.noise is not None and self.noise.d != self.grid.d:
            raise ValueError("noise and grid dimensions differ")
        if self.snapshot_every is not None and self.snapshot_every <= 0:
            raise ValueError("snapshot_every must be positive")
        if self.padding < 1:
            raise ValueError("padding factor must be >= 1")


@dataclass
class PotentialState:
    """Batched potential: ``psi.coeffs`` has shape ``(batch, *spectral_shape)``."""

    psi: SpectralField
    t: np.ndarray
    noise: NoiseState | None
    trajectories: tuple[int, ...]

    @classmethod
    def initial(cls, cfg: SimConfig, psi0: SpectralField | np.ndarray | None,
                trajectories: Iterable[int] = (0,), t0: float = 0.0) -> "PotentialState":
        traj = tuple(int(j) for j in trajectories)
        g = cfg.grid
        if psi0 is None:
            c = np.zeros((len(traj),) + g.spectral_shape, dtype=complex)
        else:
            c0 = psi0.coeffs if isinstance(psi0, SpectralField) else np.asarray(psi0)
            c = np.broadcast_to(c0, (len(traj),) + g.spectral_shape).astype(complex)
        c = np.where(g.dealias_mask, c, 0.0)
        noise = NoiseState(cfg.noise, traj) if cfg.noise is not None else None
        if noise is not None:
            noise.t[:] = t0
        return cls(SpectralField(g, c), np.full(len(traj), float(t0)), noise, traj)

    @property
    def batch(self) -> int:
        return len(self.trajectories)

    def velocity(self) -> list[SpectralField]:
        return gradient(self.psi)

    def row(self, i: int) -> "PotentialState":
        ns = None
        if self.noise is not None:
            ns = NoiseState(self.noise.spec, (self.trajectories[i],), self.noise.steps[i:i + 1].copy(),
                            self.noise.t[i:i + 1].copy(), self.noise.w[i:i + 1].copy())
        return PotentialState(self.psi[i:i + 1], self.t[i:i + 1].copy(), ns, (self.trajectories[i],))

    def copy(self) -> "PotentialState":
        return PotentialState(SpectralField(self.psi.grid, self.psi.coeffs.copy()), self.t.copy(),
                              None if self.noise is None else self.noise.copy(), self.trajectories)


# -- nonlinear term -----------------------------------------------------------

def _padded_shape(grid: TorusGrid, factor: float) -> tuple[int, ...]:
    m = int(math.ceil(grid.n * factor / 2)) * 2
    return (m,) * grid.d


def _pad(grid: TorusGrid, coeffs: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    n, m = grid.n, shape[0]
    out = np.zeros(coeffs.shape[:coeffs.ndim - grid.d] + shape[:-1] + (m // 2 + 1,), dtype=complex)
    rows = np.r_[0:n // 2, m - n // 2:m]
    idx = np.ix_(*([rows] * (grid.d - 1) + [np.arange(n // 2 + 1)]))
    out[(Ellipsis,) + idx] = coeffs
    return out


def _truncate(grid: TorusGrid, coeffs: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    n, m = grid.n, shape[0]
    rows = np.r_[0:n // 2, m - n // 2:m]
    idx = np.ix_(*([rows] * (grid.d - 1) + [np.arange(n // 2 + 1)]))
    return coeffs[(Ellipsis,) + idx]


class NonlinearOp:
    """Dealiased ``f(grad psi)`` with every symbol precomputed.

    ``op(coeffs)`` returns the coefficients (mean removed) and the per-row
    transport speed ``max_x sum_i |d_i f(u)|``.
    """

    def __init__(self, grid: TorusGrid, flux: FluxSpec, padding: float = 1.5, workers: int = 1):
        self.grid, self.flux, self.workers = grid, flux, workers
        self.padded = not (flux.quadratic_exact or padding == 1)
        self.shape = _padded_shape(grid, padding) if self.padded else grid.shape
        size = math.prod(self.shape)
        self.axes = grid.axes
        self.ik_scaled = [1j * TWO_PI * k * size for k in grid.deriv_wavenumbers]
        mask = grid.dealias_mask.astype(float) / size
        mask[(0,) * grid.d] = 0.0
        self.mask = mask

    def __call__(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, axes, w = self.grid, self.axes, self.workers
        if self.flux.name == "zero":
            return np.zeros_like(coeffs), np.zeros(coeffs.shape[:coeffs.ndim - g.d])
        u = []
        for ik in self.ik_scaled:
            c = coeffs * ik
            if self.padded:
                c = _pad(g, c, self.shape)
            u.append(sfft.irfftn(c, s=self.shape, axes=axes, workers=w))
        with np.errstate(over="ignore", invalid="ignore"):
            fv = self.flux.value(u)
            grads = self.flux.grad(u)
            speed = np.abs(grads[0])
            for gi in grads[1:]:
                speed = speed + np.abs(gi)
        out = sfft.rfftn(fv, axes=axes, workers=w)
        if self.padded:
            out = _truncate(g, out, self.shape)
        out *= self.mask
        return out, speed.max(axis=axes)


def _nonlinear(grid, flux, coeffs, padding, workers=1):
    return NonlinearOp(grid, flux, padding, workers)(coeffs)


def nonlinearity(psi: SpectralField, flux: FluxSpec, padding: float = 1.5) -> SpectralField:
    """Dealiased spectral coefficients of ``f(grad psi)`` with the mean removed.

    Raises :class:`BlowUpError` if the flux overflows.
    """
    out, speed = _nonlinear(psi.grid, flux, psi.coeffs, padding)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("flux evaluation overflowed")
    return SpectralField(psi.grid, out)


# -- stepping -----------------------------------------------------------------

@dataclass
class StepInfo:
    """What one step used: per-row ``dt``, active rows and the realised noise."""

    dt: np.ndarray
    active: np.ndarray
    speed: np.ndarray
    increment: OUIncrement | None


class Stepper:
    """Precomputed operators for one :class:`SimConfig`."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        g = cfg.grid
        self.grid = g
        self.lam = cfg.nu * (TWO_PI**2) * g.k2
        # the mean mode is discarded, so any positive placeholder rate will do
        self.inv_lam = 1.0 / np.where(self.lam > 0, self.lam, 1.0)
        self._nl = NonlinearOp(g, cfg.flux, cfg.padding, cfg.threads)
        self.emb = embedding(g, cfg.noise) if cfg.noise is not None else None
        self.mode_lam = mode_rates(cfg.noise, cfg.nu) if cfg.noise is not None else None

    def heat(self, h: np.ndarray):
        """``(S(h/2), phi1(h/2), S(h), phi1(h))`` from a single ``expm1``.

        Uses ``e^{-x} - 1 = (e^{-x/2} - 1)(e^{-x/2} + 1)``.
        """
        hb = h.reshape(h.shape + (1,) * self.grid.d)
        em_half = np.expm1(-0.5 * hb * self.lam)
        em_full = em_half * (2.0 + em_half)
        return 1.0 + em_half, -em_half * self.inv_lam, 1.0 + em_full, -em_full * self.inv_lam

    def noise_field(self, comps: np.ndarray) -> np.ndarray:
        return embed(self.emb, *scale_modes(self.cfg.noise, comps))

    def nonlinear(self, coeffs: np.ndarray):
        return self._nl(coeffs)

    def speed(self, coeffs: np.ndarray) -> np.ndarray:
        return self.nonlinear(coeffs)[1]

    def choose_dt(self, speed: np.ndarray) -> np.ndarray:
        pol = self.cfg.dt_policy
        dx = self.grid.dx
        if pol.kind == "fixed":
            return np.full(speed.shape, pol.dt)
        with np.errstate(divide="ignore"):
            dt = np.where(speed > 0, pol.safety * dx / np.where(speed > 0, speed, 1.0), np.inf)
        return np.minimum(dt, pol.dt_max)

    def advance(self, coeffs: np.ndarray, dt: np.ndarray, inc: OUIncrement | None,
                f0: np.ndarray | None = None) -> np.ndarray:
        """One midpoint exponential step with given noise; rows with ``dt = 0`` are unchanged."""
        if f0 is None:
            f0, _ = self.nonlinear(coeffs)
        e_half, p_half, e_full, p_full = self.heat(dt)
        pred = e_half * coeffs - p_half * f0
        if inc is not None:
            pred = pred + self.noise_field(inc.x1)
        f1, _ = self.nonlinear(pred)
        new = e_full * coeffs - p_full * f1
        if inc is not None:
            new = new + self.noise_field(inc.x_full)
        new[(Ellipsis,) + (0,) * self.grid.d] = 0.0
        still = dt == 0
        if still.any():
            new[still] = coeffs[still]
        return new


def _check_rows(state: PotentialState, cfg: SimConfig, coeffs: np.ndarray, speed: np.ndarray,
                active: np.ndarray) -> np.ndarray:
    """Rows that are non-finite or exceed the blow-up speed."""
    axes = tuple(range(1, coeffs.ndim))
    bad = ~np.all(np.isfinite(coeffs), axis=axes) | ~np.isfinite(speed) | (speed > cfg.blowup_speed)
    return bad & active


def step(state: PotentialState, cfg: SimConfig, dt: float | np.ndarray | None = None,
         active: np.ndarray | None = None, stepper: Stepper | None = None,
         ) -> tuple[PotentialState, StepInfo]:
    """Advance every active row by its own ``dt`` (chosen by the policy if omitted).

    Returns the new state and the realised step data.  Raises
    :class:`CFLViolation` for a fixed step beyond the Courant limit and
    :class:`BlowUpError` if a row becomes non-finite.
    """
    st = stepper or Stepper(cfg)
    b = state.batch
    active = np.ones(b, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    f0, speed = st.nonlinear(state.psi.coeffs)
    if dt is None:
        dt = st.choose_dt(speed)
    dt = np.where(active, np.broadcast_to(np.asarray(dt, float), (b,)), 0.0)
    if np.any(dt[active] <= 0):
        raise ValueError("dt must be positive")
    return _step_prepared(state, cfg, st, dt, active, f0, speed, "raise")


# -- integration --------------------------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    """Read-only view handed to observers."""

    t: float
    psi: SpectralField
    trajectories: tuple[int, ...]
    steps: np.ndarray
    alive: np.ndarray


@dataclass
class Summary:
    state: PotentialState
    steps: np.ndarray
    dt_min: np.ndarray
    dt_max: np.ndarray
    blown: np.ndarray
    failures: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)

    @property
    def blow_up(self) -> bool:
        return bool(self.blown.any())


def snapshot_times(t0: float, t_end: float, every: float | None, start: float = 0.0) -> list[float]:
    """Cadence times in ``(t0, t_end]`` (``t0`` itself included if it is on cadence)."""
    if every is None:
        return []
    k0 = max(0, math.ceil((max(t0, start) - start) / every - 1e-9))
    out = []
    k = k0
    while True:
        t = start + k * every
        if t > t_end + 1e-12 * max(1.0, abs(t_end)):
            break
        if t >= t0 - 1e-12:
            out.append(t)
        k += 1
    return out


def integrate(state: PotentialState, cfg: SimConfig, observers: Sequence[Callable[[Snapshot], None]] = (),
              t_end: float | None = None, on_blowup: str = "raise",
              step_hook: Callable[[PotentialState, PotentialState, StepInfo], None] | None = None,
              ) -> Summary:
    """Advance to ``t_end`` landing exactly on every snapshot time.

    Rows advance independently; each stops at the next landing time until
    all rows have reached it, then observers run.  With
    ``on_blowup="flag"`` a failing row is frozen and reported instead of
    aborting the batch.  ``step_hook(before, after, info)`` sees every step.
    """
    if on_blowup not in ("raise", "flag"):
        raise ValueError("on_blowup must be 'raise' or 'flag'")
    t_end = cfg.t_end if t_end is None else t_end
    t0 = float(state.t.min())
    if t_end < float(state.t.max()) - 1e-12:
        raise ValueError("t_end lies before the current time")
    st = Stepper(cfg)
    b = state.batch
    steps = np.zeros(b, dtype=np.int64)
    dt_lo = np.full(b, np.inf)
    dt_hi = np.zeros(b)
    blown = np.zeros(b, dtype=bool)
    failures = []
    landings = [t for t in snapshot_times(t0, t_end, cfg.snapshot_every, cfg.snapshot_start)]
    marks = sorted(set(landings + [t_end]))
    done_snaps = []
    cur = state.copy()

    def notify(t):
        snap_c = cur.psi.coeffs.copy()
        snap_c.flags.writeable = False
        snap = Snapshot(t, SpectralField(cfg.grid, snap_c), cur.trajectories, steps.copy(), ~blown)
        for obs in observers:
            obs(snap)
        done_snaps.append(t)

    for target in marks:
        if target in landings and abs(target - t0) < 1e-12 and not done_snaps:
            notify(target)
            continue
        while True:
            remaining = target - cur.t
            active = (remaining > 1e-12 * max(1.0, abs(target))) & ~blown
            if not active.any():
                break
            f0, speed = st.nonlinear(cur.psi.coeffs)
            dt = st.choose_dt(speed)
            last = dt >= remaining * (1 - 1e-9)
            dt = np.where(active, np.where(last, remaining, dt), 0.0)
            nxt, info = _step_prepared(cur, cfg, st, dt, active, f0, speed, on_blowup)
            newly = info.active & ~np.isfinite(nxt.t)
            if newly.any():
                for i in np.nonzero(newly)[0]:
                    failures.append({"trajectory": cur.trajectories[i], "t": float(cur.t[i])})
                blown |= newly
                nxt.t[newly] = cur.t[newly]
            ran = info.active & ~newly
            steps += ran
            dt_lo = np.where(ran, np.minimum(dt_lo, dt), dt_lo)
            dt_hi = np.where(ran, np.maximum(dt_hi, dt), dt_hi)
            nxt.t[ran & last] = target
            if step_hook is not None:
                step_hook(cur, nxt, info)
            cur = nxt
        if target in landings:
            notify(target)
    dt_lo[np.isinf(dt_lo)] = 0.0
    return Summary(cur, steps, dt_lo, dt_hi, blown, failures, done_snaps)


def _step_prepared(cur, cfg, st, dt, active, f0, speed, on_blowup):
    if cfg.dt_policy.kind == "fixed":
        courant = dt * speed / cfg.grid.dx
        over = active & (courant > cfg.dt_policy.cfl_limit)
        if over.any():
            i = int(np.argmax(over))
            raise CFLViolation(f"Courant number {courant[i]:.3g} exceeds {cfg.dt_policy.cfl_limit}",
                               cur.trajectories[i], float(cur.t[i]))
    noise = cur.noise.copy() if cur.noise is not None else None
    inc = draw_ou_increment(noise, cfg.nu, dt, active) if noise is not None else None
    with np.errstate(over="ignore", invalid="ignore"):
        new = st.advance(cur.psi.coeffs, dt, inc, f0)
    bad = _check_rows(cur, cfg, new, speed, active)
    t_new = cur.t + dt
    if bad.any():
        if on_blowup == "raise":
            i = int(np.argmax(bad))
            raise BlowUpError("non-finite or runaway solution", cur.trajectories[i], float(cur.t[i]))
        new[bad] = cur.psi.coeffs[bad]
        t_new[bad] = np.inf
    nxt = PotentialState(SpectralField(cfg.grid, new), t_new, noise, cur.trajectories)
    return nxt, StepInfo(dt, active, speed, inc)


# -- driving-path refinement --------------------------------------------------

def aggregate_pieces(x: np.ndarray, b: np.ndarray, lam: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Combine consecutive OU pieces of equal ``width`` into one interval, exactly.

    ``x``, ``b`` have the piece index as their first axis.  The OU integral
    over the union is ``sum_j exp(-lam width (J-1-j)) x_j``.
    """
    n = x.shape[0]
    decay = np.exp(-lam * width * np.arange(n - 1, -1, -1)[:, None, None, None])
    return (decay * x).sum(axis=0), b.sum(axis=0)


def fine_path(cfg: SimConfig, trajectories: Sequence[int], dt_fine: float, n_fine: int) -> tuple[np.ndarray, np.ndarray]:
    """Half-step OU pieces ``(x, b)`` of shape ``(2 n_fine, batch, 2, n_modes)`` on the finest grid."""
    ns = NoiseState(cfg.noise, tuple(trajectories))
    xs, bs = [], []
    for _ in range(n_fine):
        inc = draw_ou_increment(ns, cfg.nu, dt_fine)
        xs += [inc.x1, inc.x2]
        bs += [inc.b1, inc.b2]
    return np.array(xs), np.array(bs)


def integrate_on_path(state: PotentialState, cfg: SimConfig, path: tuple[np.ndarray, np.ndarray],
                      dt_fine: float, level: int) -> PotentialState:
    """Fixed-step run with ``dt = dt_fine * 2**level`` driven by an aggregated fine path."""
    st = Stepper(cfg)
    x, b = path
    per_half = 2**level
    width = dt_fine / 2
    lam = st.mode_lam[None, None, :]
    dt = dt_fine * per_half
    coeffs = state.psi.coeffs.copy()
    n_steps = x.shape[0] // (2 * per_half)
    dts = np.full(state.batch, dt)
    for s in range(n_steps):
        base = 2 * per_half * s
        halves = []
        for h in range(2):
            sl = slice(base + h * per_half, base + (h + 1) * per_half)
            halves.append(aggregate_pieces(x[sl], b[sl], lam, width))
        inc = OUIncrement(halves[0][0], halves[0][1], halves[1][0], halves[1][1], dts, lam)
        coeffs = st.advance(coeffs, dts, inc)
    return PotentialState(SpectralField(cfg.grid, coeffs), state.t + n_steps * dt, None, state.trajectories)


# -- audits -------------------------------------------------------------------

def _inner(g: TorusGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.mean(a * b, axis=g.axes)


def energy_balance_residual(before: PotentialState, after: PotentialState, m: int, cfg: SimConfig,
                            increment: OUIncrement | None, dt: np.ndarray | float) -> np.ndarray:
    """Residual of the discrete Ito balance for ``||u||'_m^2`` over one step.

    ``change - (-2 nu ||u||_{m+1}^2 dt - <L^m u, B(u)> dt + 2 <L^m u, grad dw> + I_{m+1} dt)``
    with every term taken at the left end point.  ``B(u) = 2 sum_i f_i(u) d_i u``
    is evaluated in physical space.
    """
    g = cfg.grid
    dt = np.broadcast_to(np.asarray(dt, float), (before.batch,))
    lam_sym = (TWO_PI**2) * g.k2

    def sq_norm(c, s):
        return np.sum(g.weights * lam_sym**s * np.abs(c) ** 2, axis=g.axes)

    cb = before.psi.coeffs
    ca = after.psi.coeffs
    # ||u||_m^2 = ||psi||_{m+1}^2 in primed norms
    change = sq_norm(ca, m + 1) - sq_norm(cb, m + 1)
    diss = -2 * cfg.nu * sq_norm(cb, m + 2) * dt
    u = [irfft_values(g, cb * (1j * TWO_PI * k)) for k in g.deriv_wavenumbers]
    lmu = [irfft_values(g, cb * (1j * TWO_PI * k) * lam_sym**m) for k in g.deriv_wavenumbers]
    fi = cfg.flux.grad(u)
    bu = []
    for j in range(g.d):
        # d_i u_j computed spectrally from psi
        acc = 0.0
        for i in range(g.d):
            dij = irfft_values(g, cb * (1j * TWO_PI * g.deriv_wavenumbers[i])
                               * (1j * TWO_PI * g.deriv_wavenumbers[j]))
            acc = acc + fi[i] * dij
        bu.append(2 * acc)
    adv = -sum(_inner(g, lmu[j], bu[j]) for j in range(g.d)) * dt
    mart = 0.0
    ito = 0.0
    if increment is not None and cfg.noise is not None:
        emb = embedding(g, cfg.noise)
        dw = embed(emb, *scale_modes(cfg.noise, increment.b_full))
        mart = 2 * np.sum(g.weights * lam_sym ** (m + 1) * np.real(np.conj(cb) * dw), axis=g.axes)
        ito = trace_I(cfg.noise, m + 1) * dt
    return change - (diss + adv + mart + ito)


def heat_identity_error(before: PotentialState, m: int, nu: float, dt: float) -> np.ndarray:
    """Residual of :func:`energy_balance_residual` predicted analytically for pure heat flow."""
    g = before.psi.grid
    lam_sym = (TWO_PI**2) * g.k2
    e2 = np.abs(before.psi.coeffs) ** 2 * g.weights * lam_sym ** (m + 1)
    x = nu * lam_sym * dt
    return np.sum(e2 * (np.expm1(-2 * x) + 2 * x), axis=g.axes)


def contraction_gap(a: PotentialState | SpectralField, b: PotentialState | SpectralField) -> np.ndarray:
    """``inf_c |psi_a - psi_b - c|_inf`` on the grid, i.e. half the oscillation of the difference.

    This is the sup distance between the two equivalence classes of potentials.
    """
    pa = a.psi if isinstance(a, PotentialState) else a
    pb = b.psi if isinstance(b, PotentialState) else b
    if pa.grid != pb.grid:
        raise ValueError("potentials live on different grids")
    diff = irfft_values(pa.grid, pa.coeffs - pb.coeffs)
    ax = pa.grid.axes
    return 0.5 * (diff.max(axis=ax) - diff.min(axis=ax))


def sup_gap(a: PotentialState, b: PotentialState) -> np.ndarray:
    """``|psi_a - psi_b|_inf`` with both means pinned to zero."""
    diff = irfft_values(a.psi.grid, a.psi.coeffs - b.psi.coeffs)
    return np.abs(diff).max(axis=a.psi.grid.axes)


def curl_residual(psi: SpectralField) -> float:
    """Largest ``|d_j u_i - d_i u_j|`` on the grid (0 in 1d)."""
    g = psi.grid
    if g.d == 1:
        return 0.0
    u = gradient(psi)
    worst = 0.0
    for i in range(g.d):
        for j in range(i + 1, g.d):
            a = u[i].coeffs * (1j * TWO_PI * g.deriv_wavenumbers[j])
            b = u[j].coeffs * (1j * TWO_PI * g.deriv_wavenumbers[i])
            worst = max(worst, float(np.abs(irfft_values(g, a - b)).max()))
    return worst


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path: str | Path, state: PotentialState, meta: dict | None = None) -> None:
    """Full state plus noise counters; reloading resumes bit-exactly."""
    g = state.psi.grid
    arrays = {"coeffs": state.psi.coeffs, "t": state.t,
              "trajectories": np.array(state.trajectories, dtype=np.int64)}
    nmeta = None
    if state.noise is not None:
        arrays.update(steps=state.noise.steps, noise_t=state.noise.t, w=state.noise.w)
        nmeta = state.noise.spec.to_dict()
    header = {"d": g.d, "n": g.n, "dealias_fraction": g.dealias_fraction, "noise": nmeta,
              "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    # np.savez stamps members with the wall clock; a fixed date keeps the file reproducible
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path: str | Path, noise: NoiseSpec | None = None) -> tuple[PotentialState, dict]:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        g = TorusGrid(header["d"], header["n"], header["dealias_fraction"])
        traj = tuple(int(j) for j in z["trajectories"])
        ns = None
        if "steps" in z.files:
            spec = noise if noise is not None else NoiseSpec.from_dict(header["noise"])
            ns = NoiseState(spec, traj, z["steps"].copy(), z["noise_t"].copy(), z["w"].copy())
        st = PotentialState(SpectralField(g, z["coeffs"].copy()), z["t"].copy(), ns, traj)
    return st, header["meta"]
