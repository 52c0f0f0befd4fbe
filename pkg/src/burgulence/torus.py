"""Fields on the unit torus, Fourier transforms and Sobolev/Lebesgue norms.

Conventions
-----------
* Physical points are ``x_j = j / n`` on ``[0, 1)^d``; wavevectors are
  integers and every factor ``2 pi`` lives in the derivative symbol.
* Spectral coefficients are stored in the real-FFT half layout (last axis
  holds ``0 <= n_d <= n/2``) and normalised so that they *are* the Fourier
  coefficients: ``coeffs = rfftn(values) / n**d``.  Parseval then reads
  ``sum_{n in Z^d} |v(n)|^2 = mean(v(x)^2)``, where the full-lattice sum is
  taken with :attr:`TorusGrid.weights` (2 for interior half-layout columns,
  1 for the ``n_d = 0`` and Nyquist columns).
* Fields may carry leading batch axes (one row per trajectory); norms then
  return one value per row.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from math import factorial, prod
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .poly_basis import DirectionBasis, monomials

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    def points(self) -> list[np.ndarray]:
        x = np.arange(self.n) / self.n
        return list(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavevector components, each broadcast to ``spectral_shape``."""
        n = self.n
        full = np.rint(np.fft.fftfreq(n, 1.0 / n)).astype(np.int64)
        half = np.arange(n // 2 + 1, dtype=np.int64)
        ks = [full] * (self.d - 1) + [half]
        return tuple(np.broadcast_to(k, self.spectral_shape).copy()
                     for k in np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def deriv_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavevector components with the Nyquist entry zeroed (odd-derivative symbol)."""
        out = []
        for k in self.wavenumbers:
            k = k.astype(float)
            k[np.abs(k) == self.n // 2] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k.astype(float) ** 2 for k in self.wavenumbers)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-layout entry in the full lattice."""
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return w

    @cached_property
    def nyquist(self) -> np.ndarray:
        nyq = np.zeros(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            nyq |= np.abs(k) == self.n // 2
        return nyq

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.n / 2
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) <= cut
            mask &= np.abs(k) < self.n // 2
        if self.dealias_fraction == 1.0:
            mask[:] = True
        return mask


@dataclass
class PhysicalField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[self.values.ndim - self.grid.d:] != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")


@dataclass
class SpectralField:
    """Fourier coefficients of a real field (half layout, see module doc)."""

    grid: TorusGrid
    coeffs: np.ndarray
    mean_zero: bool = True

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[self.coeffs.ndim - self.grid.d:] != self.grid.spectral_shape:
            raise ValueError(
                f"coefficients of shape {self.coeffs.shape} do not match {self.grid.spectral_shape}")
        zero = (...,) + (0,) * self.grid.d
        if self.mean_zero and np.any(self.coeffs[zero] != 0):
            self.coeffs = self.coeffs.copy()
            self.coeffs[zero] = 0.0

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[: self.coeffs.ndim - self.grid.d]

    def __getitem__(self, idx) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs[idx], self.mean_zero)

    def scaled(self, c: float) -> "SpectralField":
        return SpectralField(self.grid, c * self.coeffs, self.mean_zero)

    def __add__(self, other):
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.mean_zero and other.mean_zero)

    def __sub__(self, other):
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.mean_zero and other.mean_zero)

    def full_coeffs(self) -> np.ndarray:
        """Coefficients on the full ``n^d`` lattice (numpy ``fftn`` layout)."""
        g = self.grid
        vals = irfft_values(g, self.coeffs)
        return sfft.fftn(vals, axes=g.axes) / g.size

    def values(self) -> np.ndarray:
        return irfft_values(self.grid, self.coeffs)


FieldLike = SpectralField | Sequence[SpectralField]


def rfft_coeffs(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, axes=grid.axes) / grid.size


def irfft_values(grid: TorusGrid, coeffs: np.ndarray) -> np.ndarray:
    return sfft.irfftn(coeffs * grid.size, s=grid.shape, axes=grid.axes)


def transform(f: PhysicalField, mean_zero: bool = False) -> SpectralField:
    return SpectralField(f.grid, rfft_coeffs(f.grid, f.values), mean_zero=mean_zero)


def inverse_transform(f: SpectralField) -> PhysicalField:
    return PhysicalField(f.grid, irfft_values(f.grid, f.coeffs))


def from_function(grid: TorusGrid, func, mean_zero: bool = True) -> SpectralField:
    """Sample ``func(*coords)`` on the grid and transform."""
    return transform(PhysicalField(grid, func(*grid.points())), mean_zero=mean_zero)


def _components(v: FieldLike) -> list[SpectralField]:
    return [v] if isinstance(v, SpectralField) else list(v)


def derivative_symbol(grid: TorusGrid, alpha: Sequence[int]) -> np.ndarray:
    sym = np.ones(grid.spectral_shape, dtype=complex)
    for k_full, k_odd, a in zip(grid.wavenumbers, grid.deriv_wavenumbers, alpha):
        if a:
            k = k_odd if a % 2 else k_full.astype(float)
            sym = sym * (1j * TWO_PI * k) ** a
    return sym


def derivative(v: SpectralField, alpha: Sequence[int]) -> SpectralField:
    return SpectralField(v.grid, v.coeffs * derivative_symbol(v.grid, alpha), mean_zero=True)


def gradient(psi: SpectralField) -> list[SpectralField]:
    """``u = grad psi``; component ``i`` has coefficients ``2 pi i n_i psi(n)``."""
    g = psi.grid
    return [SpectralField(g, psi.coeffs * (1j * TWO_PI * k), mean_zero=True)
            for k in g.deriv_wavenumbers]


def directional_derivative(v: SpectralField, direction: Sequence[int], m: int) -> SpectralField:
    """``(k . grad)^m v`` with symbol ``(2 pi i k.n)^m``."""
    g = v.grid
    kn = sum(c * (kk if m % 2 else kf.astype(float))
             for c, kk, kf in zip(direction, g.deriv_wavenumbers, g.wavenumbers))
    return SpectralField(g, v.coeffs * (1j * TWO_PI * kn) ** m, mean_zero=True)


def shift(v: SpectralField, r: Sequence[float]) -> SpectralField:
    """Exact translate ``x -> v(x + r)`` via phase multiplication."""
    g = v.grid
    phase = sum(rr * k for rr, k in zip(r, g.deriv_wavenumbers))
    out = v.coeffs * np.exp(1j * TWO_PI * phase)
    # Nyquist entries cannot be shifted by a non-grid offset while staying
    # real; keep the real part of their phase factor.
    nyq = g.nyquist
    if nyq.any():
        full_phase = sum(rr * k for rr, k in zip(r, g.wavenumbers))
        out[..., nyq] = v.coeffs[..., nyq] * np.cos(TWO_PI * full_phase[nyq])
    return SpectralField(g, out, v.mean_zero)


def _oversampled_values(v: SpectralField, factor: int) -> np.ndarray:
    g = v.grid
    n, big_n = g.n, g.n * factor
    big = TorusGrid(g.d, big_n, 1.0)
    c = np.zeros(v.batch_shape + big.spectral_shape, dtype=complex)
    rows = np.r_[0:n // 2, big_n - n // 2:big_n]
    idx = np.ix_(*([rows] * (g.d - 1) + [np.arange(n // 2 + 1)]))
    c[(Ellipsis,) + idx] = v.coeffs
    return irfft_values(big, c)


def _pointwise_abs(comps: list[SpectralField], oversample: int = 1) -> np.ndarray:
    if oversample > 1:
        vals = [_oversampled_values(c, oversample) for c in comps]
    else:
        vals = [c.values() for c in comps]
    if len(vals) == 1:
        return np.abs(vals[0])
    return np.sqrt(sum(x * x for x in vals))


def lp_norm_values(a: np.ndarray, p: float, d: int) -> np.ndarray:
    """``L_p`` norm of nonnegative samples over the trailing ``d`` axes."""
    ax = tuple(range(-d, 0))
    if p == np.inf:
        return np.max(a, axis=ax)
    return np.mean(a**p, axis=ax) ** (1.0 / p)


def lp_norm(v: FieldLike, p: float, oversample: int = 1) -> np.ndarray:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    comps = _components(v)
    return lp_norm_values(_pointwise_abs(comps, oversample), p, comps[0].grid.d)


def wmp_norm(v: FieldLike, m: int, p: float, oversample: int = 1) -> np.ndarray:
    """Homogeneous ``W^{m,p}`` norm: multinomially weighted sum over ``|alpha| = m``.

    Each term is the ``L_p`` norm of the tuple of ``alpha``-derivatives of
    the components.  ``p = inf`` is the grid maximum (``oversample=2``
    refines it by zero padding).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if m < 0:
        raise ValueError("m must be nonnegative")
    comps = _components(v)
    d = comps[0].grid.d
    total = 0.0
    for alpha in monomials(m, d) if m else [(0,) * d]:
        w = factorial(m) // prod(factorial(a) for a in alpha)
        ders = [derivative(c, alpha) for c in comps]
        total = total + w * lp_norm(ders, p, oversample)
    return total


def spectral_sobolev_norm(v: FieldLike, s: float) -> np.ndarray:
    """``(2 pi)^s (sum_n |n|^{2s} |v(n)|^2)^{1/2}``, summed over components."""
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    comps = _components(v)
    g = comps[0].grid
    wk = g.weights * g.k2**s
    wk[(0,) * g.d] = 0.0
    tot = sum(np.sum(wk * np.abs(c.coeffs) ** 2, axis=g.axes) for c in comps)
    return TWO_PI**s * np.sqrt(tot)


def sphere_directions(d: int, n_dirs: int) -> np.ndarray:
    """Unit vectors: ``+-1`` in 1d, uniform angles in 2d, Fibonacci sphere in 3d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = TWO_PI * (np.arange(n_dirs) + 0.5) / n_dirs
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    i = np.arange(n_dirs) + 0.5
    z = 1.0 - 2.0 * i / n_dirs
    rho = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


SPHERE_AREA = {1: 2.0, 2: TWO_PI, 3: 4.0 * np.pi}


def increment_moment(v: FieldLike, r: Sequence[float], p: float) -> np.ndarray:
    """``int |v(x+r) - v(x)|^p dx`` with the translate taken spectrally."""
    comps = _components(v)
    diffs = [shift(c, r) - c for c in comps]
    a = _pointwise_abs(diffs)
    ax = tuple(range(-comps[0].grid.d, 0))
    return np.mean(a**p, axis=ax)


def fractional_increment_norm(v: FieldLike, s: float, n_shells: int = 32, n_dirs: int = 16,
                              r_min: float | None = None) -> np.ndarray:
    """Quadrature of ``(int_{x, |r|<=1} |v(x+r)-v(x)|^2 / |r|^{2s+d})^{1/2}``.

    Radii are ``n_shells`` midpoints of a logarithmic partition of
    ``[r_min, 1]`` (default ``r_min = 1/(8n)``); below ``r_min`` the
    increment is treated as ``|r|^2`` times its value at ``r_min``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    comps = _components(v)
    g = comps[0].grid
    d = g.d
    if r_min is None:
        r_min = 1.0 / (8 * g.n)
    dirs = sphere_directions(d, n_dirs)
    edges = np.linspace(np.log(r_min), 0.0, n_shells + 1)
    taus = 0.5 * (edges[1:] + edges[:-1])
    dtau = edges[1] - edges[0]
    total = 0.0
    for tau in taus:
        rho = np.exp(tau)
        avg = sum(increment_moment(comps, rho * e, 2.0) for e in dirs) / len(dirs)
        # dr = rho^{d-1} drho dsigma; drho = rho dtau
        total = total + SPHERE_AREA[d] * avg * rho ** (-2.0 * s) * dtau
    avg0 = sum(increment_moment(comps, r_min * e, 2.0) for e in dirs) / len(dirs)
    # int_0^{r_min} rho^{1-2s} (avg0 / r_min^2) drho
    total = total + SPHERE_AREA[d] * avg0 / r_min**2 * r_min ** (2 - 2 * s) / (2 - 2 * s)
    return np.sqrt(total)


def directional_norm(v: FieldLike, basis: DirectionBasis, m: int, p: float) -> np.ndarray:
    """``sum_k (int |(k . grad)^m v|^p)^{1/p}`` over the forms of ``basis``."""
    if p == np.inf:
        raise ValueError("the directional norm has no W^{m,inf} analogue")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if basis.m != m:
        raise ValueError(f"basis has degree {basis.m}, need {m}")
    comps = _components(v)
    total = 0.0
    for form in basis.forms:
        ders = [directional_derivative(c, form.coeffs, m) for c in comps]
        total = total + lp_norm(ders, p)
    return total


def _lebesgue_or_sobolev(v, m, p):
    if m == 0:
        return lp_norm(v, p)
    if m != int(m):
        raise ValueError("non-integer smoothness is not supported for W^{m,p}")
    return wmp_norm(v, int(m), p)


def gn_admissible(d: int, beta: float, r: float, m: int, p: float, q: float, theta: float,
                  tol: float = 1e-12) -> bool:
    """Exponent relation of the Gagliardo-Nirenberg inequality on ``T^d``."""
    if not (m > beta >= 0):
        return False
    if min(p, q, r) < 1:
        return False
    inv = lambda x: 0.0 if x == np.inf else 1.0 / x
    gap = m - beta - d * inv(p)
    if gap >= 0 and abs(gap - round(gap)) < tol:
        if abs(theta - beta / m) > tol:
            return False
    elif not (beta / m - tol <= theta < 1):
        return False
    lhs = d * inv(r)
    rhs = beta - theta * (m - d * inv(p)) + (1 - theta) * d * inv(q)
    return abs(lhs - rhs) < 1e-9


def gn_ratio(v: SpectralField, beta: int, r: float, m: int, p: float, q: float,
             theta: float) -> np.ndarray:
    """``|v|_{beta,r} / (|v|_{m,p}^theta |v|_q^{1-theta})``; 0 for the zero field."""
    d = v.grid.d
    if not gn_admissible(d, beta, r, m, p, q, theta):
        raise ValueError(f"exponents (beta={beta}, r={r}, m={m}, p={p}, q={q}, theta={theta}) "
                         "violate the Gagliardo-Nirenberg relation")
    num = _lebesgue_or_sobolev(v, beta, r)
    den = _lebesgue_or_sobolev(v, m, p) ** theta * lp_norm(v, q) ** (1 - theta)
    num, den = np.asarray(num, float), np.asarray(den, float)
    out = np.zeros(np.broadcast(num, den).shape)
    nz = den > 0
    out[nz] = (num / np.where(nz, den, 1.0))[nz]
    return out if out.ndim else float(out)


# -- snapshot files -----------------------------------------------------------

def snapshot_record(f: SpectralField, **meta) -> dict:
    """NDJSON record: grid meta plus ``[re, im]`` pairs in row-major half layout."""
    g = f.grid
    c = np.asarray(f.coeffs)
    if c.ndim != g.d:
        raise ValueError("snapshot records hold a single (unbatched) field")
    flat = np.stack([c.real.ravel(), c.imag.ravel()], axis=1)
    rec = {"d": g.d, "n": g.n, "dealias_fraction": g.dealias_fraction, "layout": "rfft-half",
           "mean_zero": f.mean_zero}
    rec.update(meta)
    rec["coeffs"] = flat.ravel().tolist()
    return rec


def field_from_record(rec: dict) -> SpectralField:
    g = TorusGrid(rec["d"], rec["n"], rec["dealias_fraction"])
    pairs = np.asarray(rec["coeffs"], dtype=float).reshape(-1, 2)
    c = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(g.spectral_shape)
    return SpectralField(g, c, rec.get("mean_zero", True))


_MAGIC = b"BGSNAP01"


def write_snapshot_binary(path: str | Path, f: SpectralField, **meta) -> None:
    """Binary snapshot: magic, uint32 header length, JSON header, little-endian float64 pairs."""
    rec = snapshot_record(f, **meta)
    body = np.asarray(rec.pop("coeffs"), dtype="<f8").tobytes()
    head = json.dumps(rec, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(head)) + head + body)


def read_snapshot_binary(path: str | Path) -> tuple[SpectralField, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a snapshot file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    rec = json.loads(raw[12:12 + hlen])
    rec["coeffs"] = np.frombuffer(raw[12 + hlen:], dtype="<f8")
    return field_from_record(rec), rec
