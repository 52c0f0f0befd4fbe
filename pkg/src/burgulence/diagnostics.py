"""Small-scale observables: increments, structure functions, spectra, flatness.

All functions accept batched fields (leading trajectory axis) and return
one value per row.  Increments use exact spectral shifts, so separations
need not be multiples of the grid spacing.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly_basis import construct_basis
from .torus import (SpectralField, TorusGrid, _components, derivative, directional_derivative,
                    gradient, shift, sphere_directions, spectral_sobolev_norm, wmp_norm)


# -- ranges -------------------------------------------------------------------

@dataclass(frozen=True)
class RangeSpec:
    """Dissipation range ``J1 = (0, C1 nu]``, inertial ``J2 = (C1 nu, C2]``, energy ``J3 = (C2, 1]``."""

    nu: float
    C1: float = 4.0
    C2: float = 0.25
    nu0: float = 0.05
    M: float = 2.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if not 0 < self.C2 <= 1:
            raise ValueError("C2 must lie in (0, 1]")
        if self.C1 <= 0 or self.C1 * self.nu0 >= self.C2:
            raise ValueError("need 0 < C1 nu0 < C2 so the ranges are non-empty for nu <= nu0")
        if not 0 < self.nu <= self.nu0:
            raise ValueError(f"nu = {self.nu} is outside (0, nu0 = {self.nu0}]")

    @property
    def J1(self) -> tuple[float, float]:
        return (0.0, self.C1 * self.nu)

    @property
    def J2(self) -> tuple[float, float]:
        return (self.C1 * self.nu, self.C2)

    @property
    def J3(self) -> tuple[float, float]:
        return (self.C2, 1.0)

    def inertial_window(self, margin: float = 0.2) -> tuple[float, float]:
        """``J2`` shrunk by ``margin`` at both ends (multiplicatively)."""
        lo, hi = self.J2
        return (lo * (1 + margin), hi * (1 - margin))

    def dissipative_window(self, lo_factor: float = 1 / 400, hi_factor: float = 1 / 16) -> tuple[float, float]:
        """Sub-window of ``J1``: ``[lo_factor, hi_factor] * C1 nu``."""
        top = self.C1 * self.nu
        return (lo_factor * top, hi_factor * top)

    def which(self, ell: float) -> int:
        if ell <= self.J1[1]:
            return 1
        return 2 if ell <= self.C2 else 3


# -- increments ---------------------------------------------------------------

def _moment(a: np.ndarray, p: float, d: int) -> np.ndarray:
    ax = tuple(range(-d, 0))
    return np.mean(a ** p, axis=ax)


def directional_increment(psi_i: SpectralField, r: Sequence[float], p: float, alpha: float = 1.0) -> np.ndarray:
    """``(int |v(x+r) - v(x)|^p dx)^alpha`` for a scalar field ``v``."""
    if p < 0:
        raise ValueError(f"p must be nonnegative, got {p}")
    diff = (shift(psi_i, r) - psi_i).values()
    return _moment(np.abs(diff), p, psi_i.grid.d) ** alpha


def longitudinal_increment(u: Sequence[SpectralField], r: Sequence[float], p: float,
                           alpha: float = 1.0) -> np.ndarray:
    """``(int |(u(x+r) - u(x)) . r/|r||^p dx)^alpha``."""
    r = np.asarray(r, float)
    norm = float(np.linalg.norm(r))
    if norm == 0:
        raise ValueError("longitudinal increments need r != 0")
    if p < 0:
        raise ValueError(f"p must be nonnegative, got {p}")
    comps = _components(u)
    e = r / norm
    acc = sum(ei * (shift(c, r) - c).values() for c, ei in zip(comps, e))
    return _moment(np.abs(acc), p, comps[0].grid.d) ** alpha


def full_increment_moments(u: Sequence[SpectralField], r: Sequence[float], ps: Sequence[float]) -> dict:
    """``{p: int |u(x+r) - u(x)|^p dx}`` for several ``p`` from one shift."""
    comps = _components(u)
    d = comps[0].grid.d
    diffs = [(shift(c, r) - c).values() for c in comps]
    mag = np.abs(diffs[0]) if len(diffs) == 1 else np.sqrt(sum(x * x for x in diffs))
    return {p: _moment(mag, p, d) for p in ps}


def sphere_averaged_increment(u: Sequence[SpectralField], ell: float, p: float, alpha: float = 1.0,
                              n_dirs: int = 16) -> np.ndarray:
    """Mean of ``(int |u(x+r) - u(x)|^p)^alpha`` over ``r`` on the sphere of radius ``ell``."""
    if not 0 < ell <= 1:
        raise ValueError(f"ell must lie in (0, 1], got {ell}")
    comps = _components(u)
    dirs = sphere_directions(comps[0].grid.d, n_dirs)
    vals = [full_increment_moments(comps, ell * e, [p])[p] ** alpha for e in dirs]
    return sum(vals) / len(vals)


def structure_functions(u: Sequence[SpectralField], ells: Sequence[float], ps: Sequence[float],
                        alphas: Sequence[float] = (1.0,), n_dirs: int = 16) -> dict:
    """``{(p, alpha, ell): S_{p,alpha}(ell)}`` sharing one shift per (ell, direction)."""
    comps = _components(u)
    dirs = sphere_directions(comps[0].grid.d, n_dirs)
    out = {}
    for ell in ells:
        acc = {(p, a): 0.0 for p in ps for a in alphas}
        for e in dirs:
            mom = full_increment_moments(comps, ell * e, ps)
            for p in ps:
                for a in alphas:
                    acc[(p, a)] = acc[(p, a)] + mom[p] ** a
        for (p, a), v in acc.items():
            out[(p, a, float(ell))] = v / len(dirs)
    return out


# -- spectrum -----------------------------------------------------------------

def _shell_data(u: Sequence[SpectralField]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted ``|n|`` and the matching full-lattice ``sum_i |u_i(n)|^2`` (batch last)."""
    comps = _components(u)
    g = comps[0].grid
    pw = sum(np.abs(c.coeffs) ** 2 for c in comps) * g.weights
    batch = pw.shape[:pw.ndim - g.d]
    flat = pw.reshape(batch + (-1,))
    order = np.argsort(g.kabs.ravel(), kind="stable")
    return g.kabs.ravel()[order], flat[..., order]


def spectrum_layer(u: Sequence[SpectralField], k: float, M: float = 2.0) -> tuple[np.ndarray, int]:
    """``(k^{-1} sum_{k/M <= |n| <= k M} |u(n)|^2, number of lattice points in the layer)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    kabs, pw = _shell_data(u)
    sel = (kabs >= k / M) & (kabs <= k * M)
    comps = _components(u)
    w = comps[0].grid.weights.ravel()[np.argsort(comps[0].grid.kabs.ravel(), kind="stable")]
    count = int(w[sel].sum())
    return pw[..., sel].sum(axis=-1) / k, count


def energy_spectrum(u: Sequence[SpectralField], k: float, M: float = 2.0) -> np.ndarray:
    """Layer-averaged spectrum; an empty layer gives 0 (see :func:`spectrum_layer` for the count)."""
    return spectrum_layer(u, k, M)[0]


def spectrum_curve(u: Sequence[SpectralField], ks: Sequence[float], M: float = 2.0) -> np.ndarray:
    """:func:`energy_spectrum` at many ``k`` via cumulative shell sums; shape ``(*batch, len(ks))``."""
    kabs, pw = _shell_data(u)
    cum = np.concatenate([np.zeros(pw.shape[:-1] + (1,)), np.cumsum(pw, axis=-1)], axis=-1)
    ks = np.asarray(ks, float)
    lo = np.searchsorted(kabs, ks / M, side="left")
    hi = np.searchsorted(kabs, ks * M, side="right")
    return (cum[..., hi] - cum[..., lo]) / ks


def flatness(S2, S4):
    """``S4 / S2^2``; ``nan`` where ``S2 = 0``."""
    S2 = np.asarray(S2, float)
    S4 = np.asarray(S4, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(S2 > 0, S4 / np.where(S2 > 0, S2, 1.0) ** 2, np.nan)
    return float(out) if out.ndim == 0 else out


# -- second derivatives -------------------------------------------------------

@dataclass(frozen=True)
class KruzhkovValue:
    value: np.ndarray            # max_i max_x psi_ii
    per_axis: list               # max_x psi_ii for each i
    directional: list            # max_x (k . grad)^2 psi for each degree-2 form k
    forms: tuple


def kruzhkov_max(psi: SpectralField) -> KruzhkovValue:
    """Grid maxima of the pure second derivatives of the potential."""
    g = psi.grid
    axes = g.axes
    per_axis = []
    for i in range(g.d):
        alpha = [0] * g.d
        alpha[i] = 2
        per_axis.append(derivative(psi, alpha).values().max(axis=axes))
    basis = construct_basis(2, g.d)
    directional = [directional_derivative(psi, f.coeffs, 2).values().max(axis=axes) for f in basis.forms]
    value = np.max(np.stack(per_axis), axis=0)
    return KruzhkovValue(value, per_axis, directional, basis.vectors())


def wiener_khinchin_residual(v: SpectralField, y: Sequence[float]) -> np.ndarray:
    """``| int |v(x+y)-v(x)|^2 dx - 4 sum_n sin^2(pi n.y) |v(n)|^2 |``.

    The left side uses the spectral shift.  Content on the Nyquist planes
    cannot be translated by a non-grid offset, so fields carrying it give a
    nonzero residual by construction.
    """
    g = v.grid
    lhs = np.mean((shift(v, y) - v).values() ** 2, axis=g.axes)
    ny = sum(yy * k for yy, k in zip(y, g.wavenumbers))
    rhs = np.sum(4 * np.sin(np.pi * ny) ** 2 * np.abs(v.coeffs) ** 2 * g.weights, axis=g.axes)
    return np.abs(lhs - rhs)


def restriction_norms(psi_i: SpectralField, axis: int, m: int, statistic: str = "mean") -> np.ndarray:
    """Aggregate over transverse slices of the 1d ``W^{m,inf}`` norm along ``axis``.

    For ``m >= 1`` the 1d norm is ``max |d^m v / dx_axis^m|`` on the line;
    ``m = 0`` gives ``max |v|``.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if statistic not in ("mean", "max"):
        raise ValueError("statistic must be 'mean' or 'max'")
    g = psi_i.grid
    alpha = [0] * g.d
    alpha[axis] = m
    vals = derivative(psi_i, alpha).values() if m else psi_i.values()
    ax = g.axes[axis]
    line = np.abs(vals).max(axis=ax)
    rest = tuple(range(-(g.d - 1), 0))
    if g.d == 1:
        return line
    return line.mean(axis=rest) if statistic == "mean" else line.max(axis=rest)


def _norm(v):
    v = np.asarray(v, float)
    return np.abs(v) if v.ndim == 0 else np.linalg.norm(v, axis=-1)


def young_constant(p: float, delta: float) -> float:
    """``K(p, delta)`` in ``|A+B|^p <= (1+delta)|A|^p + K |B|^p``."""
    if p <= 0 or delta <= 0:
        raise ValueError("need p > 0 and delta > 0")
    if p <= 1:
        return 1.0
    zeta = (1 + delta) ** (-1.0 / (p - 1))
    return (1 - zeta) ** (-(p - 1))


def young_inequality_residual(A, B, p: float, delta: float):
    """``max(0, |A+B|^p - (1+delta)|A|^p - K(p,delta)|B|^p)``; vectors along the last axis."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    K = young_constant(p, delta)
    lhs = _norm(A + B) ** p
    rhs = (1 + delta) * _norm(A) ** p + K * _norm(B) ** p
    out = np.maximum(0.0, lhs - rhs)
    return float(out) if np.ndim(out) == 0 else out


# -- records ------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsPlan:
    """Which observables a snapshot produces."""

    norms: tuple = ((0, 2.0), (1, 1.0), (1, 2.0), (2, 2.0))
    sobolev: tuple = (0.25, 0.5, 0.75, 1.0)
    ells: tuple = ()
    ps: tuple = (0.5, 1.0, 2.0, 4.0)
    alphas: tuple = (1.0,)
    ks: tuple = ()
    M: float = 2.0
    n_dirs: int = 16
    kruzhkov: bool = True
    restriction_m: tuple = (1,)

    @classmethod
    def for_grid(cls, grid: TorusGrid, n_ells: int = 48, n_ks: int = 40, **kw) -> "DiagnosticsPlan":
        ells = np.geomspace(0.1 / grid.n, 0.5, n_ells)
        kmax = grid.dealias_fraction * grid.n / 2
        ks = np.geomspace(1.0, kmax, n_ks)
        n_dirs = kw.pop("n_dirs", 8)
        if grid.d == 1:
            n_dirs = 2
        return cls(ells=tuple(float(x) for x in ells), ks=tuple(float(x) for x in ks),
                   n_dirs=n_dirs, **kw)


@dataclass
class DiagnosticsRecord:
    t: float
    trajectory: int
    norms: dict = field(default_factory=dict)        # (m, p) -> |u|_{m,p}
    sobolev: dict = field(default_factory=dict)      # s -> ||u||'_s
    structure: dict = field(default_factory=dict)    # (p, alpha, ell) -> S
    spectrum: dict = field(default_factory=dict)     # k -> E(k)
    flatness: dict = field(default_factory=dict)     # ell -> F(ell)
    kruzhkov_max: float = float("nan")
    kruzhkov_axes: list = field(default_factory=list)
    kruzhkov_directional: list = field(default_factory=list)
    restriction: dict = field(default_factory=dict)  # (axis, m) -> mean slice norm

    def flat(self) -> dict:
        """Ordered ``column -> value`` mapping shared by NDJSON and CSV."""
        row = {"t": self.t, "trajectory": self.trajectory}
        for (m, p), v in self.norms.items():
            row[f"norm_m{m}_p{_fmt(p)}"] = v
        for s, v in self.sobolev.items():
            row[f"sobolev_s{_fmt(s)}"] = v
        for (p, a, ell), v in self.structure.items():
            row[f"S_p{_fmt(p)}_a{_fmt(a)}_l{ell:.6e}"] = v
        for k, v in self.spectrum.items():
            row[f"E_k{k:.6e}"] = v
        for ell, v in self.flatness.items():
            row[f"F_l{ell:.6e}"] = v
        row["kruzhkov_max"] = self.kruzhkov_max
        for i, v in enumerate(self.kruzhkov_axes):
            row[f"kruzhkov_axis{i}"] = v
        for i, v in enumerate(self.kruzhkov_directional):
            row[f"kruzhkov_form{i}"] = v
        for (i, m), v in self.restriction.items():
            row[f"restriction_axis{i}_m{m}"] = v
        return row

    def to_ndjson(self) -> str:
        return json.dumps(self.flat(), allow_nan=True)


def _fmt(x: float) -> str:
    return repr(float(x)).replace(".", "_")


CSV_SCHEMA_VERSION = 1


def column_manifest(records: Sequence[DiagnosticsRecord]) -> dict:
    cols = list(records[0].flat().keys()) if records else []
    return {"schema_version": CSV_SCHEMA_VERSION, "columns": cols,
            "notes": {"norm_m*_p*": "homogeneous W^{m,p} norm of u",
                      "sobolev_s*": "spectral norm ||u||'_s",
                      "S_p*_a*_l*": "sphere-averaged structure function S_{p,alpha}(ell)",
                      "E_k*": "layer-averaged energy spectrum E(k)",
                      "F_l*": "flatness S_4 / S_2^2",
                      "kruzhkov_*": "grid max of second derivatives of psi",
                      "restriction_axis*_m*": "mean over slices of 1d W^{m,inf} norm of u_i"}}


def write_csv(records: Sequence[DiagnosticsRecord]) -> str:
    man = column_manifest(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(man["columns"])
    for r in records:
        flat = r.flat()
        w.writerow([repr(float(flat[c])) if c not in ("trajectory",) else flat[c] for c in man["columns"]])
    return buf.getvalue()


def compute_records(psi: SpectralField, plan: DiagnosticsPlan, t: float,
                    trajectories: Sequence[int]) -> list[DiagnosticsRecord]:
    """One record per batch row of ``psi``."""
    u = gradient(psi)
    g = psi.grid
    b = len(trajectories)

    def rows(x):
        return np.broadcast_to(np.asarray(x, float), (b,))

    recs = [DiagnosticsRecord(float(t), int(j)) for j in trajectories]
    for (m, p) in plan.norms:
        vals = rows(wmp_norm(u, m, p))
        for r, v in zip(recs, vals):
            r.norms[(m, p)] = float(v)
    for s in plan.sobolev:
        vals = rows(spectral_sobolev_norm(u, s))
        for r, v in zip(recs, vals):
            r.sobolev[s] = float(v)
    if plan.ells:
        sf = structure_functions(u, plan.ells, plan.ps, plan.alphas, plan.n_dirs)
        for key, vals in sf.items():
            for r, v in zip(recs, rows(vals)):
                r.structure[key] = float(v)
        if 2.0 in plan.ps and 4.0 in plan.ps and 1.0 in plan.alphas:
            for ell in plan.ells:
                fl = flatness(sf[(2.0, 1.0, float(ell))], sf[(4.0, 1.0, float(ell))])
                for r, v in zip(recs, rows(fl)):
                    r.flatness[float(ell)] = float(v)
    if plan.ks:
        curve = spectrum_curve(u, plan.ks, plan.M).reshape(b, -1)
        for r, vals in zip(recs, curve):
            r.spectrum = {float(k): float(v) for k, v in zip(plan.ks, vals)}
    if plan.kruzhkov:
        kv = kruzhkov_max(psi)
        for i, r in enumerate(recs):
            r.kruzhkov_max = float(rows(kv.value)[i])
            r.kruzhkov_axes = [float(rows(a)[i]) for a in kv.per_axis]
            r.kruzhkov_directional = [float(rows(a)[i]) for a in kv.directional]
    for m in plan.restriction_m:
        for axis in range(g.d):
            vals = rows(restriction_norms(u[axis], axis, m))
            for r, v in zip(recs, vals):
                r.restriction[(axis, m)] = float(v)
    return recs
