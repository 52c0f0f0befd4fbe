"""Command-line entry points: ``burgulence <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

from .diagnostics import compute_records
from .dynamics import PotentialState, integrate, save_checkpoint
from .ensemble import (ExperimentConfig, coupling_experiment, fractional_norm_experiment, initial_potential,
                       kruzhkov_experiment, run_campaign, sobolev_scaling_experiment, spectrum_experiment,
                       structure_function_experiment, write_fits, write_manifest, write_records)
from .poly_basis import construct_basis, format_basis
from .torus import snapshot_record

KINDS = ("simulate", "sobolev-scaling", "structure", "spectrum", "coupling", "selftest", "dump-basis")
FORMATS = ("ndjson", "csv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SobolevParams:
    m: int = 1
    p: float = 2.0
    alpha: float = 2.0
    power: float = 1.0


@dataclass(frozen=True)
class StructureParams:
    ps: tuple = (2.0, 0.5)
    alpha: float = 1.0
    margin: float = 0.2
    j1_lo: float = 1 / 400
    j1_hi: float = 1 / 16


@dataclass(frozen=True)
class CouplingParams:
    t_end: float = 20.0
    dt: float = 5e-4
    initial_a: str = "sines"
    initial_b: str = "random"
    sample_every: float = 0.5
    slack: float = 1e-8


@dataclass(frozen=True)
class BasisParams:
    m: int = 2
    d: int = 2


@dataclass(frozen=True)
class RunConfig:
    kind: str = "simulate"
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    out: str = "out"
    formats: tuple = ("ndjson",)
    verbosity: int = 1
    t_end: float | None = None
    checkpoint: bool = True
    sobolev: SobolevParams = field(default_factory=SobolevParams)
    structure: StructureParams = field(default_factory=StructureParams)
    coupling: CouplingParams = field(default_factory=CouplingParams)
    basis: BasisParams = field(default_factory=BasisParams)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {self.kind!r}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            raise ConfigError(f"formats: must be a non-empty subset of {FORMATS}, got {list(self.formats)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formats"] = list(self.formats)
        return d


_NESTED = {"experiment": ExperimentConfig, "sobolev": SobolevParams, "structure": StructureParams,
           "coupling": CouplingParams, "basis": BasisParams}


def _coerce(cls, name: str, value, path: str):
    hints = typing.get_type_hints(cls)
    hint = hints[name]
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    allow_none = type(None) in args
    if value is None:
        if allow_none:
            return None
        raise ConfigError(f"{path}: must not be null")
    base = hint if origin is None else next((a for a in args if a is not type(None)), hint)
    if origin is tuple or base is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def _build(cls, data: Mapping, path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or 'config'}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    kw = {}
    for k, v in data.items():
        p = f"{path}.{k}" if path else k
        if cls is RunConfig and k in _NESTED:
            kw[k] = _build(_NESTED[k], v, p)
        else:
            kw[k] = _coerce(cls, k, v, p)
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: Mapping) -> RunConfig:
    """Validated :class:`RunConfig`; unknown keys and bad values name their field path."""
    return _build(RunConfig, data, "")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="burgulence", description=__doc__)
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--nu", type=float, nargs="+", help="viscosity grid")
    ap.add_argument("--dim", type=int)
    ap.add_argument("--resolution", type=int, help="points per axis")
    ap.add_argument("--ensemble", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--t-end", type=float, dest="t_end")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--format", choices=FORMATS, action="append", dest="formats")
    ap.add_argument("--m", type=int, help="degree (dump-basis) or order (sobolev-scaling)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def parse_config(argv: Sequence[str] | None = None) -> RunConfig:
    """File values first, then flag overrides."""
    args = build_parser().parse_args(argv)
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text() or "{}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    data = dict(data)
    data["kind"] = args.kind
    exp = dict(data.get("experiment", {}))
    for flag, key in (("dim", "d"), ("resolution", "n"), ("ensemble", "ensemble_size"),
                      ("seed", "seed"), ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            exp[key] = v
    if args.nu is not None:
        exp["nu_grid"] = list(args.nu)
    if exp:
        data["experiment"] = exp
    if args.out is not None:
        data["out"] = args.out
    if args.formats:
        data["formats"] = list(dict.fromkeys(args.formats))
    if args.t_end is not None:
        data["t_end"] = args.t_end
    if args.m is not None:
        target = "basis" if args.kind == "dump-basis" else "sobolev"
        data[target] = {**data.get(target, {}), "m": args.m}
    if args.dim is not None and args.kind == "dump-basis":
        data["basis"] = {**data.get("basis", {}), "d": args.dim}
    if args.quiet:
        data["verbosity"] = 0
    elif args.verbose:
        data["verbosity"] = 1 + args.verbose
    return config_from_dict(data)


# -- running ------------------------------------------------------------------

def _experiment_window(rc: RunConfig) -> ExperimentConfig:
    e = rc.experiment
    if rc.t_end is None:
        return e
    if rc.t_end <= e.t_start:
        raise ConfigError(f"t_end: must exceed experiment.t_start = {e.t_start}")
    return replace(e, T0=(rc.t_end - e.t_start) / e.n_windows)


class _Emitter:
    def __init__(self, rc: RunConfig):
        self.rc = rc
        self.out = Path(rc.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, p: Path) -> None:
        self.files.append(str(p.relative_to(self.out)))

    def records(self, stem: str, records) -> None:
        for fmt in self.rc.formats:
            for p in write_records(self.path(f"{stem}.{fmt}"), records, fmt):
                self.add(p)

    def fits(self, fits) -> None:
        p = self.path("fits.ndjson")
        write_fits(p, fits)
        self.add(p)

    def manifest(self, extra: dict | None = None) -> None:
        write_manifest(self.out, self.rc.to_dict(), self.files, extra)

    def say(self, msg: str, level: int = 1) -> None:
        if self.rc.verbosity >= level:
            print(msg, flush=True)


def _nu_tag(nu: float) -> str:
    return f"nu{nu:.6g}"


def _simulate(rc: RunConfig, em: _Emitter) -> int:
    e = rc.experiment
    t_end = rc.t_end if rc.t_end is not None else e.t_end
    blown = {}
    for nu in e.nu_grid:
        sim = replace(e.sim_config(nu), t_end=t_end, snapshot_start=0.0)
        psi0 = initial_potential(sim.grid, e.initial, e.initial_amplitude, e.initial_seed)
        state = PotentialState.initial(sim, psi0, e.trajectories)
        plan = e.plan()
        recs = []
        tag = _nu_tag(nu)

        def observe(snap, tag=tag):
            p = em.path(f"snapshots/{tag}_t{snap.t:.6f}.ndjson")
            with open(p, "w") as fh:
                for i, traj in enumerate(snap.trajectories):
                    fh.write(json.dumps(snapshot_record(snap.psi[i], t=snap.t, trajectory=traj,
                                                        nu=nu)) + "\n")
            em.add(p)
            recs.extend(compute_records(snap.psi, plan, snap.t, snap.trajectories))

        summ = integrate(state, sim, [observe], on_blowup="flag")
        em.records(f"diagnostics_{tag}", recs)
        if rc.checkpoint:
            p = em.path(f"checkpoint_{tag}.npz")
            save_checkpoint(p, summ.state, {"nu": nu})
            em.add(p)
        blown[tag] = summ.failures
        em.say(f"{tag}: steps {summ.steps.tolist()}, blow-ups {len(summ.failures)}")
    em.manifest({"blow_ups": blown})
    return 0


def _campaigns(rc, em, e, nus):
    camps = {}
    for nu in nus:
        camps[nu] = run_campaign(e, nu)
        em.records(f"diagnostics_{_nu_tag(nu)}", camps[nu].records)
        em.say(f"{_nu_tag(nu)}: {len(camps[nu].records)} records, blow-ups {len(camps[nu].failures)}")
    return camps


def _blowups(camps):
    return {_nu_tag(nu): c.failures for nu, c in camps.items()}


def _run_experiment(rc: RunConfig, em: _Emitter) -> int:
    e = _experiment_window(rc)
    if rc.kind == "sobolev-scaling":
        camps = _campaigns(rc, em, e, e.nu_grid)
        s = rc.sobolev
        fit = sobolev_scaling_experiment(e, s.m, s.p, s.alpha, s.power, camps)
        em.fits([fit.to_dict()])
        em.say(f"slope {fit.slope:.4f} +- {fit.slope_se:.4f} (predicted {fit.predicted:g})")
        em.manifest({"blow_ups": _blowups(camps)})
    elif rc.kind == "structure":
        nu = e.nu_grid[0]
        camps = _campaigns(rc, em, e, [nu])
        st = rc.structure
        fits = []
        for p in st.ps:
            sf = structure_function_experiment(e, p, st.alpha, nu, camps[nu], st.margin, (st.j1_lo, st.j1_hi))
            fits += sf.to_dicts() if p == st.ps[0] else [sf.j1.to_dict(), sf.j2.to_dict()]
            em.say(f"p={p:g}: J1 {sf.j1.slope:.3f}, J2 {sf.j2.slope:.3f}")
        em.fits(fits)
        em.manifest({"blow_ups": _blowups(camps)})
    elif rc.kind == "spectrum":
        camps = _campaigns(rc, em, e, e.nu_grid)
        nu = e.nu_grid[0]
        rep = spectrum_experiment(e, nu, camps[nu])
        fits = rep.to_dicts()
        if len(e.nu_grid) >= 3:
            for s in (0.25, 0.5, 0.75):
                fits.append(fractional_norm_experiment(e, s, camps).to_dict())
            kz = kruzhkov_experiment(e, camps)
            fits.append({"label": "kruzhkov", "ratio": kz["ratio"],
                         "brackets": {str(k): list(v) for k, v in kz["brackets"].items()}})
        em.fits(fits)
        em.say(f"E(k) slope {rep.fit.slope:.3f}; tail slopes {[round(x, 2) for x in rep.tail_slopes]}")
        em.manifest({"blow_ups": _blowups(camps)})
    elif rc.kind == "coupling":
        c = rc.coupling
        g = e.grid()
        a = initial_potential(g, c.initial_a, e.initial_amplitude, e.initial_seed)
        b = initial_potential(g, c.initial_b, e.initial_amplitude, e.initial_seed + 1)
        rep = coupling_experiment(e, a, b, e.nu_grid[0], c.t_end, c.dt, c.sample_every, c.slack)
        em.fits([rep.to_dict()])
        em.say(f"violations {rep.violations}; median gap {rep.median_gap[0]:.3g} -> {rep.median_gap[-1]:.3g}")
        em.manifest()
    return 0


def run(rc: RunConfig) -> int:
    """Execute one run; returns the process exit status."""
    if rc.kind == "dump-basis":
        sys.stdout.write(format_basis(construct_basis(rc.basis.m, rc.basis.d)))
        return 0
    if rc.kind == "selftest":
        from .checks import run_selftest
        return run_selftest(rc)
    em = _Emitter(rc)
    if rc.kind == "simulate":
        return _simulate(rc, em)
    return _run_experiment(rc, em)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        rc = parse_config(argv)
        return run(rc)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
