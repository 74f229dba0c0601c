import csv
import json

import numpy as np
import pytest

from fsskit import cli
from fsskit.forward import (ConfigurationError, DetectorModel, EmitterModel,
                            PolarimeterConfig, hwp_angles, simulate_angle_series)
from fsskit.io import (FormatError, ManifestEntry, read_manifest, read_series,
                       write_manifest, write_series)
from fsskit.parallel import resolve_workers

SUBCOMMANDS = ("simulate", "analyze", "report", "resolution", "entangle", "cavity", "polar")
NOISELESS = {"shot_noise": False, "read_noise_rms": 0.0}


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_config(path, **doc):
    path.write_text(json.dumps(doc))
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def simulated(tmp_path, emitters, kind="HWP_LP", detector=NOISELESS, name="sim"):
    cfg = write_config(tmp_path / f"{name}.json", emitters=emitters,
                       polarimeter={"kind": kind}, detector=detector)
    assert run("simulate", cfg, "--out", tmp_path / name, "--seed", 4) == 0
    return tmp_path / name


# -- file formats ---------------------------------------------------------------------

def test_series_round_trip(tmp_path):
    em = EmitterModel(fss=80, dipole_angle=20)
    series = simulate_angle_series(em, PolarimeterConfig("HWP_LP"), DetectorModel(),
                                   hwp_angles(6), seed=1)
    write_series(tmp_path / "s.csv", series)
    back = read_series(tmp_path / "s.csv")
    assert back.angles == pytest.approx(series.angles)
    for (_, a), (_, b) in zip(series, back):
        assert b.energies == pytest.approx(a.energies, abs=5e-10)
        assert b.counts == pytest.approx(a.counts, abs=5e-7)


@pytest.mark.parametrize("text", [
    "", "energy_eV,counts\n0.95,1\n", "# angle_deg=0\nenergy_eV,counts\n",
    "# angle_deg=x\n0.95,1\n", "# angle_deg=0\n0.95;1\n", "# other=1\n",
    "# angle_deg=0\n0.95,1\n0.94,2\n",
])
def test_series_format_errors(tmp_path, text):
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(FormatError):
        read_series(tmp_path / "bad.csv")


def test_manifest_round_trip(tmp_path):
    pol = PolarimeterConfig("QWP_LP", reference_offset=3.0, pre_retarder=(10.0, 30.0))
    entries = [ManifestEntry("a", "series/a.csv", "d1", "X", 250.0, pol),
               ManifestEntry("b", "/abs/b.csv")]
    write_manifest(tmp_path / "m.json", entries)
    back = read_manifest(tmp_path / "m.json")
    assert back[0].series_path == str(tmp_path / "series/a.csv")
    assert back[0].polarimeter == pol and back[0].linewidth_hint == 250.0
    assert back[1].series_path == "/abs/b.csv" and back[1].dot_id is None


def test_manifest_errors(tmp_path):
    bad = tmp_path / "m.json"
    for doc in ({"version": 1}, {"version": 9, "entries": []},
                {"version": 1, "entries": [{"emitter_id": "a"}]},
                {"version": 1, "entries": [{"emitter_id": "a", "series_path": "x"},
                                           {"emitter_id": "a", "series_path": "y"}]}):
        bad.write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError):
            read_manifest(bad)


# -- argument handling ------------------------------------------------------------------

@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_exits_zero(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_unknown_flag_exits_two(sub):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--no-such-flag"])
    assert exc.value.code == 2


# -- simulate ---------------------------------------------------------------------------

def test_simulate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.json", generator={"n": 6, "n_xx": 1})
    assert run("simulate", cfg, "--out", tmp_path / "a", "--seed", 7) == 0
    assert run("simulate", cfg, "--out", tmp_path / "b", "--seed", 7) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.*"))
    assert len(files) == 8
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run("simulate", cfg, "--out", tmp_path / "c", "--seed", 8) == 0
    assert (tmp_path / "c/truth.csv").read_bytes() != (tmp_path / "a/truth.csv").read_bytes()


def test_simulate_zero_emitters(tmp_path):
    cfg = write_config(tmp_path / "c.json", emitters=[])
    assert run("simulate", cfg, "--out", tmp_path / "o") == 0
    lines = (tmp_path / "o/truth.csv").read_text().splitlines()
    assert lines == [",".join(cli.TRUTH_COLUMNS)]


@pytest.mark.parametrize("doc, field", [
    ({"emitters": [{"fss": -5}]}, "emitters[0]"),
    ({"emitters": [{"fss": 5, "colour": 1}]}, "emitters[0]"),
    ({"detector": {"irf_fwhm": 0}}, "irf_fwhm"),
    ({"polarimeter": {"kind": "LP"}}, "kind"),
    ({"emitterz": []}, "emitterz"),
    ({"generator": {"n": 4, "n_xx": 3}}, "generator"),
])
def test_simulate_invalid_config(tmp_path, capsys, doc, field):
    cfg = write_config(tmp_path / "c.json", **doc)
    assert run("simulate", cfg, "--out", tmp_path / "o") == 2
    assert field in capsys.readouterr().err


def test_simulate_unreadable_config(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert run("simulate", tmp_path / "c.json", "--out", tmp_path / "o") == 2


# -- analyze ----------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["HWP_LP", "QWP_LP"])
def test_simulate_analyze_round_trip(tmp_path, kind):
    emitters = [{"emitter_id": f"e{k}", "fss": s, "dipole_angle": a}
                for k, (s, a) in enumerate([(10, 0), (60, 30), (120, 137), (300, 90)])]
    out = simulated(tmp_path, emitters, kind)
    res = tmp_path / "results.csv"
    assert run("analyze", out / "manifest.json", "--out", res, "--workers", 1) == 0
    truth = {r["emitter_id"]: r for r in rows(out / "truth.csv")}
    got = rows(res)
    assert list(got[0]) == list(cli.RESULT_COLUMNS)
    assert len(got) == 4
    for r in got:
        t = truth[r["emitter_id"]]
        assert float(r["fss_ueV"]) == pytest.approx(float(t["fss_ueV"]), abs=0.01)
        d = (float(r["dphi_deg"]) - float(t["dipole_angle_deg"]) + 90) % 180 - 90
        assert abs(d) < 0.01
        assert r["dphi_defined"] == "true"


def test_analyze_isolates_missing_file(tmp_path, capsys):
    out = simulated(tmp_path, [{"emitter_id": "a", "fss": 80}, {"emitter_id": "b", "fss": 40}])
    (out / "series/a.csv").unlink()
    res = tmp_path / "r.csv"
    assert run("analyze", out / "manifest.json", "--out", res, "--workers", 1) == 0
    by = {r["emitter_id"]: r for r in rows(res)}
    assert "failed" in by["a"]["flags"] and by["a"]["fss_ueV"] == ""
    assert float(by["b"]["fss_ueV"]) == pytest.approx(40, abs=0.01)
    assert "a" in capsys.readouterr().err


def test_analyze_both_methods(tmp_path):
    out = simulated(tmp_path, [{"emitter_id": "a", "fss": 80}, {"emitter_id": "b", "fss": 40}],
                    kind="QWP_LP")
    res = tmp_path / "r.csv"
    assert run("analyze", out / "manifest.json", "--method", "both", "--out", res) == 0
    got = rows(res)
    assert [(r["emitter_id"], r["method"]) for r in got] == [
        ("a", "qwp_fft"), ("a", "hwp_sinusoid"), ("b", "qwp_fft"), ("b", "hwp_sinusoid")]


def test_analyze_unreadable_manifest(tmp_path):
    assert run("analyze", tmp_path / "nope.json", "--out", tmp_path / "r.csv") == 2


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("FSSKIT_THREADS", "2")
    assert resolve_workers(16) == 2
    assert resolve_workers(None) <= 2
    monkeypatch.setenv("FSSKIT_THREADS", "junk")
    assert resolve_workers(3) == 3


# -- report -----------------------------------------------------------------------------

def test_report_reference_run(tmp_path):
    cfg = write_config(tmp_path / "c.json", generator={}, detector=NOISELESS)
    assert run("simulate", cfg, "--out", tmp_path / "sim", "--seed", 2) == 0
    assert run("analyze", tmp_path / "sim/manifest.json", "--out", tmp_path / "r.csv") == 0
    assert run("report", tmp_path / "r.csv", "--out", tmp_path / "rep") == 0
    summary = json.loads((tmp_path / "rep/summary.json").read_text())
    truth = rows(tmp_path / "sim/truth.csv")
    frac = np.mean([float(t["fss_ueV"]) < 50 for t in truth])
    assert summary["fraction_below_50ueV"] == pytest.approx(frac, abs=1e-6)
    assert summary["n_records"] == 35
    # every resolvable XX line sits in the perpendicular population, and only those
    species = {t["emitter_id"]: t["species"] for t in truth}
    res = rows(tmp_path / "r.csv")
    selected_xx = {r["emitter_id"] for r in res
                   if species[r["emitter_id"]] == "XX" and "below_resolution" not in r["flags"]}
    flagged = {r["emitter_id"] for r in res if "suspected_xx" in r["flags"]}
    assert flagged == selected_xx and len(flagged) >= 2
    assert summary["n_suspected_xx"] == len(flagged)
    assert abs(summary["fit_center"] - 3.1) < 3
    for name in ("fss_hist.csv", "dphi_hist.csv", "linewidth_hist.csv"):
        assert (tmp_path / "rep" / name).exists()
    assert sum(int(r["count"]) for r in rows(tmp_path / "rep/fss_hist.csv")) == 35


def test_report_single_row(tmp_path):
    res = tmp_path / "r.csv"
    res.write_text(",".join(cli.RESULT_COLUMNS) + "\n"
                   "a,hwp_sinusoid,70.0,1.0,3.0,true,0.95,260.0,\n")
    assert run("report", res, "--out", tmp_path / "rep") == 0
    for name in ("fss_hist.csv", "dphi_hist.csv", "linewidth_hist.csv"):
        counts = [int(r["count"]) for r in rows(tmp_path / "rep" / name)]
        assert sorted(counts)[-1] == 1 and sum(counts) == 1


def test_report_empty(tmp_path):
    res = tmp_path / "r.csv"
    res.write_text(",".join(cli.RESULT_COLUMNS) + "\n")
    assert run("report", res, "--out", tmp_path / "rep") == 3
    res.write_text(",".join(cli.RESULT_COLUMNS) + "\na,hwp_sinusoid,,,,,,,failed\n")
    assert run("report", res, "--out", tmp_path / "rep") == 3


# -- other subcommands ----------------------------------------------------------------

def test_entangle_sweep(tmp_path):
    out = tmp_path / "e.csv"
    assert run("entangle", "--s", "10,40", "--s-c", "0:10:3", "--tau", "0", "--out", out) == 0
    got = rows(out)
    assert len(got) == 6 and list(got[0]) == list(cli.SWEEP_COLUMNS)
    assert float(got[0]["fidelity"]) == pytest.approx(1)
    assert run("entangle", "--s", "0", "--s-c", "0", "--out", out) == 2


def test_cavity_default_stack(tmp_path, capsys):
    out, summ = tmp_path / "r.csv", tmp_path / "m.json"
    assert run("cavity", "--out", out, "--summary", summ) == 0
    mode = json.loads(summ.read_text())
    assert 1280 <= mode["center_nm"] <= 1340
    assert len(rows(out)) == 3001


def test_cavity_without_mode(tmp_path):
    doc = {"layers": [{"label": "H", "n_re": 3.5, "thickness_nm": 93.6},
                      {"label": "L", "n_re": 3.0, "thickness_nm": 109.2}] * 10}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert run("cavity", "--stack", tmp_path / "s.json", "--out", tmp_path / "r.csv") == 4
    (tmp_path / "bad.json").write_text(json.dumps({"layers": [{"label": "x"}]}))
    assert run("cavity", "--stack", tmp_path / "bad.json", "--out", tmp_path / "r.csv") == 2


def test_polar(tmp_path):
    dip = tmp_path / "d.json"
    dip.write_text(json.dumps([{"label": "a", "vector": [1, 0, 0]},
                               {"label": "b", "vector": [0, [0, 0.8], 0]}]))
    out, summ = tmp_path / "p.csv", tmp_path / "s.json"
    assert run("polar", dip, "--out", out, "--summary", summ) == 0
    assert json.loads(summ.read_text())["dlp_Sum"] == pytest.approx(0.36 / 1.64, abs=1e-6)
    assert list(rows(out)[0]) == ["phi_deg", "a", "b", "Sum"]
    dip.write_text("[]")
    assert run("polar", dip, "--out", out) == 2


def test_resolution_command(tmp_path):
    out = tmp_path / "r.json"
    assert run("resolution", "--linewidth", 250, "--trials", 100, "--n-angles", 16,
               "--method", "qwp_fft", "--workers", 1, "--out", out) == 0
    assert 0 < json.loads(out.read_text())["resolution_limit_ueV"] < 50
    assert run("resolution", "--linewidth", 250, "--trials", 10) == 2
