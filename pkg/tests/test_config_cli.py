import csv
import io
import json
import math

import pytest

from nvoptic import cli
from nvoptic import config as c

SMALL = """\
experiment: spectrum
params:
  omega: 10
  t: 5
  grid: [2869.9, 2869.95, 2870.0, 2870.05]
ensemble:
  n_runs: 4
  seed: 3
integrator:
  record_every: 5
output:
  plots: false
"""


def test_minimal_config_gets_defaults():
    cfg = c.parse_text("experiment: spectrum\n")
    assert cfg.preset == "zero-field"
    assert cfg.convention == "ordinary"
    assert cfg.params["omega"] == 10.0
    assert cfg.settings.n_runs == 500
    assert cfg.settings.t2star == 3.0
    assert cfg.plots is True


def test_unknown_key_reports_line():
    with pytest.raises(c.ConfigError, match=r":3: unknown key noise.colour"):
        c.parse_text("experiment: spectrum\nnoise:\n  colour: pink\n")


def test_negative_rate_rejected_with_line():
    with pytest.raises(c.ConfigError) as err:
        c.parse_text("experiment: angle\nnv:\n  gamma_ge: -1\n")
    assert err.value.line == 3


def test_bad_values_rejected():
    for text in ("experiment: nope\n",
                 "experiment: spectrum\npreset: mars\n",
                 "experiment: spectrum\nfrequency_convention: hz\n",
                 "experiment: spectrum\nensemble:\n  n_runs: 0\n",
                 "experiment: spectrum\nensemble:\n  n_runs: 2.5\n",
                 "experiment: coherence_vs_drive\nparams:\n  omegas: [1, -2]\n",
                 "experiment: spectrum\nintegrator:\n  program: exact\n",
                 "experiment: spectrum\n  bad: [\n"):
        with pytest.raises(c.ConfigError):
            c.parse_text(text)


def test_convention_scales_nv_override():
    a = c.parse_text("experiment: spectrum\nfrequency_convention: angular\nnv:\n  delta: 100\n")
    o = c.parse_text("experiment: spectrum\nnv:\n  delta: 100\n")
    assert a.settings.nv().delta == pytest.approx(100.0)
    assert o.settings.nv().delta == pytest.approx(2 * math.pi * 100.0)


def test_angle_default_grid():
    cfg = c.parse_text("experiment: angle\n")
    th = cfg.params["thetas"]
    assert len(th) == 21
    assert th[0] == pytest.approx(-0.5 * math.pi) and th[-1] == pytest.approx(0.5 * math.pi)


def test_list_and_validate(tmp_path, capsys):
    assert cli.main(["list-experiments"]) == 0
    assert "spectrum" in capsys.readouterr().out
    p = tmp_path / "c.yaml"
    p.write_text(SMALL)
    assert cli.main(["validate", str(p)]) == 0
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == 2


def test_run_writes_schema_and_replays(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL)
    out = tmp_path / "out"
    assert cli.main(["run", str(p), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(summary) == {"center", "depth", "fwhm"}
    rows = list(csv.reader(io.StringIO((out / "results.csv").read_text())))
    assert rows[0][0] == "omega_s [MHz]"
    assert len(rows) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 3
    assert manifest["total_steps"] > 0
    assert cli.main(["replay", str(out / "manifest.json"), "--threads", "2",
                     "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "results.csv").read_bytes() == (out / "results.csv").read_bytes()


def test_run_renders_figures(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL.replace("plots: false", "plots: true"))
    out = tmp_path / "out"
    assert cli.main(["run", str(p), "--out", str(out)]) == 0
    pngs = list(out.glob("*.png"))
    assert pngs and all(f.stat().st_size > 0 for f in pngs)


def test_seed_override_changes_results(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL)
    cli.main(["run", str(p), "--out", str(tmp_path / "a")])
    cli.main(["run", str(p), "--out", str(tmp_path / "b"), "--seed", "4"])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert b["master_seed"] == 4
    assert a["results_sha256"] != b["results_sha256"]
