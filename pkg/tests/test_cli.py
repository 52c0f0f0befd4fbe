import hashlib
import json
import subprocess
import sys
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from burgulence.cli import ConfigError, RunConfig, config_from_dict, main, parse_config
from burgulence.ensemble import ExperimentConfig
from burgulence.poly_basis import LinearForm, verify_spanning


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


TINY = {"experiment": {"n": 64, "noise_radius": 8.0, "nu_grid": [0.02], "ensemble_size": 2,
                       "T0": 0.01, "t_start": 0.01, "snapshot_every": 0.01, "n_ells": 6, "n_ks": 5}}


def test_empty_config_gives_defaults(tmp_path):
    rc = parse_config(["simulate", "--config", write_cfg(tmp_path, {})])
    e = rc.experiment
    assert (e.d, e.n, e.nu_grid, e.flux) == (1, 1024, (1e-3,), "quadratic")
    assert rc == RunConfig()


def test_flag_overrides_file(tmp_path):
    path = write_cfg(tmp_path, {"experiment": {"nu_grid": [2e-3], "n": 512}})
    rc = parse_config(["structure", "--config", path, "--nu", "5e-4", "--ensemble", "3", "--format", "csv"])
    assert rc.experiment.nu_grid == (5e-4,)
    assert rc.experiment.n == 512 and rc.experiment.ensemble_size == 3
    assert rc.kind == "structure" and rc.formats == ("csv",)


def test_bad_dealias_fraction_names_field(tmp_path):
    path = write_cfg(tmp_path, {"experiment": {"dealias_fraction": 1.5}})
    with pytest.raises(ConfigError, match="experiment.dealias_fraction|experiment: .*dealias_fraction"):
        parse_config(["simulate", "--config", path])


@pytest.mark.parametrize("data,where", [({"bogus": 1}, "bogus"),
                                        ({"experiment": {"nn": 3}}, "experiment.nn"),
                                        ({"experiment": {"n": "big"}}, "experiment.n"),
                                        ({"coupling": {"dt": [1]}}, "coupling.dt")])
def test_schema_errors_carry_field_path(tmp_path, data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        parse_config(["simulate", "--config", write_cfg(tmp_path, data)])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(["simulate", "--config", str(tmp_path / "nope.json")])


def test_main_reports_config_errors(tmp_path, capsys):
    assert main(["simulate", "--config", write_cfg(tmp_path, {"bogus": 1})]) == 2
    assert "bogus" in capsys.readouterr().err


@given(st.sampled_from(["simulate", "structure", "coupling"]), st.integers(1, 3),
       st.lists(st.floats(1e-4, 0.05), min_size=1, max_size=4), st.integers(1, 16), st.integers(0, 2**31),
       st.sampled_from([("ndjson",), ("csv",), ("ndjson", "csv")]), st.none() | st.floats(1.5, 9.0))
def test_config_round_trip(kind, d, nus, ens, seed, formats, t_end):
    rc = RunConfig(kind, ExperimentConfig(d=d, n=64, noise_radius=8.0, nu_grid=tuple(nus), ensemble_size=ens,
                                          seed=seed), formats=formats, t_end=t_end)
    assert config_from_dict(json.loads(json.dumps(rc.to_dict()))) == rc


def _run_tiny(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["simulate", "--config", write_cfg(tmp_path, TINY), "--out", str(out), "--t-end", "0.03",
                 "-q", *extra])
    assert code == 0
    return out


def test_simulate_writes_snapshots_listed_in_manifest(tmp_path):
    out = _run_tiny(tmp_path, "a", "--format", "ndjson", "--format", "csv")
    snaps = sorted(p.name for p in (out / "snapshots").iterdir())
    assert len(snaps) == 4
    man = json.loads((out / "manifest.json").read_text())
    on_disk = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert man["files"] == on_disk
    assert man["blow_ups"] == {"nu0.02": []}
    first = [json.loads(x) for x in (out / "snapshots" / snaps[0]).read_text().splitlines()]
    assert [r["trajectory"] for r in first] == [0, 1]


def _digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_repeated_run_is_byte_identical(tmp_path):
    # the manifest records the output directory, so repeat into the same one
    a = _digest(_run_tiny(tmp_path, "a", "--format", "csv", "--threads", "1"))
    b = _digest(_run_tiny(tmp_path, "a", "--format", "csv", "--threads", "1"))
    assert a == b and len(a) > 5


def test_t_end_before_window_rejected(tmp_path, capsys):
    code = main(["structure", "--config", write_cfg(tmp_path, TINY), "--out", str(tmp_path / "o"),
                 "--t-end", "0.005"])
    assert code == 2


def read_forms(text):
    return [LinearForm(tuple(int(x) for x in line.split())) for line in text.splitlines()]


def test_dump_basis(capsys):
    assert main(["dump-basis", "--m", "2", "--dim", "2"]) == 0
    forms = read_forms(capsys.readouterr().out)
    assert len(forms) == 3 and all(f.d == 2 for f in forms)
    assert verify_spanning(forms, 2)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "burgulence", "dump-basis", "--m", "1", "--dim", "3"],
                         capture_output=True, text=True, check=True)
    forms = read_forms(out.stdout)
    assert len(forms) == 3 and verify_spanning(forms, 1)
