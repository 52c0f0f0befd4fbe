"""Diagonal smooth-in-space Wiener forcing.

The forcing is ``w(t, x) = sum_n a_n w_n(t) cos(2 pi n.x) + b_n w~_n(t) sin(2 pi n.x)``
over the half lattice (first nonzero coordinate positive), with ``w_n``,
``w~_n`` standard unit Wiener processes.  With this convention
``E ||w(1)||'_m^2 = KAPPA0 * sum_n (a_n^2 + b_n^2) (2 pi |n|)^{2m}``.

Random numbers are counter based: the Gaussians used by trajectory ``j`` at
step ``s`` for mode number ``i`` are a pure function of
``(seed, j, s, i)`` (Philox keyed by ``(seed, j)``, counter word set to
``s``, fixed word offsets per mode, Box-Muller on the raw words).  Streams
therefore do not depend on batching or evaluation order.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .torus import TWO_PI, SpectralField, TorusGrid

KAPPA0 = 0.5
WORDS_PER_MODE = 8  # 2 components x 2 half steps x (OU, Brownian)
_U53 = 2.0**-53


def half_lattice(d: int, radius: float) -> list[tuple[int, ...]]:
    """Wavevectors with ``|n| <= radius`` whose first nonzero coordinate is positive.

    Lexicographic order.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    r = int(np.floor(radius))
    out = []
    for n in itertools.product(range(-r, r + 1), repeat=d):
        if sum(c * c for c in n) > radius * radius:
            continue
        first = next((c for c in n if c), 0)
        if first > 0:
            out.append(n)
    return out


@dataclass
class NoiseSpec:
    """Coefficients ``a_n, b_n`` over an ordered list of half-lattice modes."""

    d: int
    modes: np.ndarray
    a: np.ndarray
    b: np.ndarray
    seed: int = 0
    profile: dict = field(default_factory=lambda: {"kind": "explicit"})

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.int64).reshape(-1, self.d)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (len(self.modes) == len(self.a) == len(self.b)):
            raise ValueError("modes, a and b must have equal length")
        if (self.a < 0).any() or (self.b < 0).any():
            raise ValueError("noise coefficients must be nonnegative")
        if not (self.a > 0).any() and not (self.b > 0).any():
            raise ValueError("noise must be non-trivial: some a_n or b_n > 0")
        for n in self.modes:
            first = next((c for c in n if c), 0)
            if first <= 0:
                raise ValueError(f"mode {tuple(n)} is not in the half lattice")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def decay(cls, d: int, radius: float = 32, rate: float = 0.5, power: float = 1.0,
              trace0: float | None = 1.0, amplitude: float | None = None,
              seed: int = 0) -> "NoiseSpec":
        """``a_n = b_n = A exp(-rate |n|^power)`` for ``|n| <= radius``.

        ``A`` is fixed by ``trace0`` (the value of ``E ||w(1)||^2``) unless
        ``amplitude`` is given.
        """
        modes = np.array(half_lattice(d, radius), dtype=np.int64)
        kabs = np.sqrt((modes**2).sum(axis=1))
        prof = np.exp(-rate * kabs**power)
        if amplitude is None:
            if trace0 is None:
                raise ValueError("give either trace0 or amplitude")
            amplitude = np.sqrt(trace0 / (KAPPA0 * 2.0 * np.sum(prof**2)))
        a = amplitude * prof
        meta = {"kind": "decay", "radius": radius, "rate": rate, "power": power,
                "amplitude": float(amplitude)}
        return cls(d, modes, a, a.copy(), seed, meta)

    @classmethod
    def single_mode(cls, n: Sequence[int], a: float = 1.0, b: float = 0.0, seed: int = 0) -> "NoiseSpec":
        return cls(len(n), [tuple(n)], [a], [b], seed)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def kabs(self) -> np.ndarray:
        return np.sqrt((self.modes**2).sum(axis=1).astype(float))

    @property
    def radius(self) -> float:
        return float(self.kabs.max())

    def tail_decay_ok(self, power: float = 10.0) -> bool:
        """Whether ``a_n, b_n <= A |n|^{-power}`` for every listed mode beyond ``R/2``."""
        amp = self.profile.get("amplitude", max(self.a.max(), self.b.max()))
        r = self.profile.get("radius", self.radius)
        far = self.kabs > r / 2
        bound = amp * self.kabs[far] ** (-power)
        return bool((self.a[far] <= bound).all() and (self.b[far] <= bound).all())

    # -- (de)serialisation
    def to_dict(self) -> dict:
        out = {"d": self.d, "seed": self.seed, "profile": dict(self.profile)}
        if self.profile.get("kind") != "decay":
            out["modes"] = [{"n": [int(c) for c in n], "a": float(a), "b": float(b)}
                            for n, a, b in zip(self.modes, self.a, self.b)]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        prof = dict(data.get("profile", {"kind": "decay"}))
        kind = prof.pop("kind", "decay")
        seed = data.get("seed", 0)
        if kind == "decay":
            if "amplitude" in prof:
                prof["trace0"] = None
            return cls.decay(data["d"], seed=seed, **prof)
        recs = data["modes"] if "modes" in data else read_profile(prof["path"])
        return cls(data["d"], [r["n"] for r in recs], [r["a"] for r in recs],
                   [r["b"] for r in recs], seed, {"kind": "explicit", **prof})


def read_profile(path: str | Path) -> list[dict]:
    """Explicit profile file: NDJSON records ``{"n": [...], "a": x, "b": y}``."""
    recs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            recs.append(json.loads(line))
    return recs


def write_profile(path: str | Path, spec: NoiseSpec) -> None:
    with open(path, "w") as fh:
        for n, a, b in zip(spec.modes, spec.a, spec.b):
            fh.write(json.dumps({"n": [int(c) for c in n], "a": float(a), "b": float(b)}) + "\n")


def load_profile(path: str | Path, seed: int = 0) -> NoiseSpec:
    recs = read_profile(path)
    d = len(recs[0]["n"])
    return NoiseSpec(d, [r["n"] for r in recs], [r["a"] for r in recs], [r["b"] for r in recs], seed,
                     {"kind": "explicit", "path": str(path)})


def trace_I(spec: NoiseSpec, m: float) -> float:
    """``I_m = E ||w(1)||'_m^2`` in closed form."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    return float(KAPPA0 * np.sum((spec.a**2 + spec.b**2) * (TWO_PI * spec.kabs) ** (2 * m)))


# -- counter-based Gaussians ---------------------------------------------------

def _philox_key(seed: int, trajectory: int) -> np.ndarray:
    return np.array([seed & 0xFFFFFFFFFFFFFFFF, trajectory & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)


_BG = np.random.Philox(key=0)


def gaussian_blocks(seed: int, trajectory: int, step: int, count: int, n_modes: int,
                    per_mode: int = WORDS_PER_MODE) -> np.ndarray:
    """Standard normals of shape ``(count, n_modes, per_mode)`` for steps ``step .. step+count-1``.

    Trajectory ``j`` owns the Philox stream keyed by ``(seed, j)``; step
    ``s`` uses raw words ``[s W, (s+1) W)`` with ``W = n_modes * per_mode``,
    and mode ``i`` the slice ``[i per_mode, (i+1) per_mode)`` of that.
    Uniforms are ``((x >> 11) + 1/2) 2^-53``, paired by Box-Muller.
    """
    if per_mode % 2:
        raise ValueError("per_mode must be even (Box-Muller pairs)")
    width = n_modes * per_mode
    start = step * width
    # Philox4x64 emits 4 words per counter value
    ctr, skip = divmod(start, 4)
    _BG.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array([ctr & 0xFFFFFFFFFFFFFFFF, ctr >> 64, 0, 0], dtype=np.uint64),
                  "key": _philox_key(seed, trajectory)},
        "buffer": np.zeros(4, dtype=np.uint64), "buffer_pos": 4,
        "has_uint32": 0, "uinteger": 0,
    }
    raw = _BG.random_raw(skip + count * width)[skip:]
    raw = raw.reshape(count, n_modes, per_mode // 2, 2)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * _U53
    rad = np.sqrt(-2.0 * np.log(u[..., 0]))
    ang = TWO_PI * u[..., 1]
    z = np.empty(raw.shape)
    z[..., 0] = rad * np.cos(ang)
    z[..., 1] = rad * np.sin(ang)
    return z.reshape(count, n_modes, per_mode)


def gaussian_block(seed: int, trajectory: int, step: int, n_modes: int,
                   per_mode: int = WORDS_PER_MODE) -> np.ndarray:
    """Normals ``(n_modes, per_mode)`` of a single (trajectory, step)."""
    return gaussian_blocks(seed, trajectory, step, 1, n_modes, per_mode)[0]


# -- spectral embedding of mode amplitudes -------------------------------------

@dataclass(frozen=True)
class ModeEmbedding:
    """Scatter map from half-lattice modes to half-layout spectral entries."""

    grid: TorusGrid
    index: tuple[np.ndarray, ...]   # where the coefficient of +n (or -n) sits
    conj: np.ndarray                # True if the stored entry is for -n
    twin: tuple[np.ndarray, ...]    # second entry for modes on the n_d = 0 plane
    twin_modes: np.ndarray


def embedding(grid: TorusGrid, spec: NoiseSpec) -> ModeEmbedding:
    if spec.d != grid.d:
        raise ValueError("noise and grid dimensions differ")
    cut = grid.dealias_fraction * grid.n / 2
    if np.abs(spec.modes).max() > cut or np.abs(spec.modes).max() >= grid.n // 2:
        raise ValueError(f"forced modes reach |n_i| = {np.abs(spec.modes).max()}, beyond the "
                         f"resolved band of the {grid.n}-point grid")
    n = grid.n
    last = spec.modes[:, -1]
    conj = last < 0
    stored = np.where(conj[:, None], -spec.modes, spec.modes)
    index = tuple((stored[:, i] % n) if i < grid.d - 1 else stored[:, i] for i in range(grid.d))
    twin_modes = np.nonzero(stored[:, -1] == 0)[0]
    neg = -stored[twin_modes]
    twin = tuple((neg[:, i] % n) if i < grid.d - 1 else neg[:, i] for i in range(grid.d))
    return ModeEmbedding(grid, index, conj, twin, twin_modes)


def embed(emb: ModeEmbedding, cos_amp: np.ndarray, sin_amp: np.ndarray) -> np.ndarray:
    """Spectral coefficients of ``sum_n cos_amp_n cos(2 pi n.x) + sin_amp_n sin(2 pi n.x)``.

    Amplitude arrays have shape ``(*batch, n_modes)``.
    """
    c = 0.5 * (cos_amp - 1j * sin_amp)
    c = np.where(emb.conj, np.conj(c), c)
    out = np.zeros(c.shape[:-1] + emb.grid.spectral_shape, dtype=complex)
    out[(...,) + emb.index] = c
    if len(emb.twin_modes):
        out[(...,) + emb.twin] = np.conj(c[..., emb.twin_modes])
    return out


# -- per-trajectory noise state -----------------------------------------------

@dataclass
class NoiseState:
    """Wiener values and step counters for a batch of trajectories."""

    spec: NoiseSpec
    trajectories: tuple[int, ...]
    steps: np.ndarray = None
    t: np.ndarray = None
    w: np.ndarray = None  # (batch, 2, n_modes): w_n and w~_n

    def __post_init__(self):
        b = len(self.trajectories)
        if self.steps is None:
            self.steps = np.zeros(b, dtype=np.int64)
        if self.t is None:
            self.t = np.zeros(b)
        if self.w is None:
            self.w = np.zeros((b, 2, self.spec.n_modes))
        self._cache = {}

    def copy(self) -> "NoiseState":
        out = NoiseState(self.spec, self.trajectories, self.steps.copy(), self.t.copy(), self.w.copy())
        out._cache = self._cache
        return out

    def normals(self, active: np.ndarray | None = None) -> np.ndarray:
        """``(batch, n_modes, WORDS_PER_MODE)`` Gaussians for the current step; advances counters.

        Inactive rows get zeros and keep their counters.  Draws are
        generated ``BLOCK_STEPS`` steps at a time and cached; the values
        depend only on ``(seed, trajectory, step, mode)``.
        """
        b = len(self.trajectories)
        m = self.spec.n_modes
        z = np.zeros((b, m, WORDS_PER_MODE))
        for i, (traj, step) in enumerate(zip(self.trajectories, self.steps)):
            if active is None or active[i]:
                z[i] = self._lookup(traj, int(step))
        if active is None:
            self.steps += 1
        else:
            self.steps += active.astype(np.int64)
        return z

    def _lookup(self, traj: int, step: int) -> np.ndarray:
        hit = self._cache.get(traj)
        if hit is None or not hit[0] <= step < hit[0] + len(hit[1]):
            blk = gaussian_blocks(self.spec.seed, traj, step, BLOCK_STEPS, self.spec.n_modes)
            hit = (step, blk)
            self._cache[traj] = hit
        return hit[1][step - hit[0]]


BLOCK_STEPS = 64


def ou_moments(lam: np.ndarray, dt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact second moments of ``X = int e^{-lam(t+dt-s)} dB_s`` and ``B`` over ``[t, t+dt]``.

    Returns ``(var_X, var_B, cov)``, with the ``lam -> 0`` limits handled
    without cancellation.
    """
    lam = np.asarray(lam, float)
    dt = np.asarray(dt, float)
    x = lam * dt
    small = x < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        var_x = np.where(small, dt * (1 - x), -np.expm1(-2 * x) / (2 * np.where(small, 1, lam)))
        cov = np.where(small, dt * (1 - x / 2), -np.expm1(-x) / np.where(small, 1, lam))
    var_b = np.broadcast_to(dt, var_x.shape)
    return var_x, var_b, cov


def ou_pair(z1: np.ndarray, z2: np.ndarray, lam: np.ndarray, dt: np.ndarray):
    """Jointly Gaussian ``(X, dB)`` from independent standard normals."""
    var_x, var_b, cov = ou_moments(lam, dt)
    sx = np.sqrt(var_x)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_part = np.where(sx > 0, cov / np.where(sx > 0, sx, 1), 0.0)
    resid = np.sqrt(np.maximum(var_b - rho_part**2, 0.0))
    return sx * z1, rho_part * z1 + resid * z2


@dataclass
class OUIncrement:
    """Mode-space noise for one step split in two halves.

    Arrays have shape ``(batch, 2, n_modes)`` (cos/sin components, before
    multiplication by ``a_n``/``b_n``): ``x1``/``b1`` are the OU integral
    and Brownian increment over the first half step, ``x2``/``b2`` over the
    second.
    """

    x1: np.ndarray
    b1: np.ndarray
    x2: np.ndarray
    b2: np.ndarray
    dt: np.ndarray
    lam: np.ndarray

    @property
    def x_full(self) -> np.ndarray:
        """OU integral over the whole step."""
        return np.exp(-self.lam * self.dt[:, None, None] / 2) * self.x1 + self.x2

    @property
    def b_full(self) -> np.ndarray:
        return self.b1 + self.b2


def mode_rates(spec: NoiseSpec, nu: float) -> np.ndarray:
    """Heat decay rates ``nu (2 pi |n|)^2`` of the forced modes."""
    return nu * (TWO_PI * spec.kabs) ** 2


def draw_ou_increment(state: NoiseState, nu: float, dt: np.ndarray,
                      active: np.ndarray | None = None) -> OUIncrement:
    """Exact joint law of (OU integral, Brownian increment) on both half steps."""
    dt = np.broadcast_to(np.asarray(dt, float), (len(state.trajectories),)).copy()
    if active is not None:
        dt[~active] = 0.0
    z = state.normals(active)                   # (b, m, 8)
    z = z.reshape(z.shape[0], z.shape[1], 2, 2, 2)  # mode, component, half, pair
    z = np.moveaxis(z, 2, 1)                    # (b, comp, m, half, pair)
    lam = mode_rates(state.spec, nu)[None, None, :]
    h = (dt / 2)[:, None, None]
    x1, b1 = ou_pair(z[..., 0, 0], z[..., 0, 1], lam, h)
    x2, b2 = ou_pair(z[..., 1, 0], z[..., 1, 1], lam, h)
    inc = OUIncrement(x1, b1, x2, b2, dt, lam)
    state.w += inc.b_full
    state.t = state.t + dt
    return inc


def scale_modes(spec: NoiseSpec, comps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(a_n * comps[:, 0], b_n * comps[:, 1])``."""
    return spec.a * comps[..., 0, :], spec.b * comps[..., 1, :]


def sample_increment(state: NoiseState, grid: TorusGrid, dt: float) -> SpectralField:
    """Brownian increment ``dw`` over ``[t, t+dt]`` as a (batched) spectral field."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    inc = draw_ou_increment(state, 0.0, dt)
    ca, sa = scale_modes(state.spec, inc.b_full)
    return SpectralField(grid, embed(embedding(grid, state.spec), ca, sa))


def sample_ou_convolution_increment(state: NoiseState, grid: TorusGrid, nu: float,
                                    dt: float) -> tuple[SpectralField, SpectralField]:
    """``(X, dw)``: stochastic-convolution update and plain increment over one step.

    ``w_L(t+dt) = S_L(dt) w_L(t) + X`` with ``X`` and ``dw`` drawn from their
    exact joint Gaussian law.
    """
    if dt <= 0 or nu <= 0:
        raise ValueError("dt and nu must be positive")
    inc = draw_ou_increment(state, nu, dt)
    emb = embedding(grid, state.spec)
    x = SpectralField(grid, embed(emb, *scale_modes(state.spec, inc.x_full)))
    b = SpectralField(grid, embed(emb, *scale_modes(state.spec, inc.b_full)))
    return x, b


def sample_w(spec: NoiseSpec, grid: TorusGrid, t: float, trajectories: Iterable[int]) -> SpectralField:
    """Independent draws of ``w(t)`` (one per trajectory id)."""
    st = NoiseState(spec, tuple(trajectories))
    return sample_increment(st, grid, t)
