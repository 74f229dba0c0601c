"""Command-line entry point: ``fsskit <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 empty results,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cavity import (ModeNotFoundError, epitaxy_stack, find_cavity_mode, load_stack,
                     reflectance_spectrum)
from .core import DomainError
from .ensemble import (BatchConfig, BatchItem, EnsembleRecord, batch_analyze,
                       fit_orientation, orientation_histogram, reference_ensemble,
                       polar_diagram)
from .entangle import SWEEP_COLUMNS, sweep
from .forward import (ConfigurationError, DetectorModel, EmitterModel,
                      hwp_angles, qwp_angles, simulate_angle_series)
from .fss import METHODS, resolution_limit
from .io import (ManifestEntry, polarimeter_from_dict, read_manifest,
                 read_table, write_json, write_manifest, write_series, write_table)

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4

RESULT_COLUMNS = ("emitter_id", "method", "fss_ueV", "fss_stderr_ueV", "dphi_deg",
                  "dphi_defined", "mean_energy_eV", "linewidth_ueV", "flags")
RESULT_FORMATS = {"fss_ueV": "{:.6f}", "fss_stderr_ueV": "{:.6f}", "dphi_deg": "{:.6f}",
                  "mean_energy_eV": "{:.9f}", "linewidth_ueV": "{:.6f}"}
TRUTH_COLUMNS = ("emitter_id", "dot_id", "species", "fss_ueV", "dipole_angle_deg",
                 "linewidth_ueV", "mean_energy_eV")
TRUTH_FORMATS = {"fss_ueV": "{:.6f}", "dipole_angle_deg": "{:.6f}",
                 "linewidth_ueV": "{:.6f}", "mean_energy_eV": "{:.9f}"}


class UsageError(Exception):
    """Bad configuration; reported with exit code 2."""


# -- simulate -------------------------------------------------------------------

_EMITTER_FIELDS = {f.name for f in fields(EmitterModel)}
_DETECTOR_FIELDS = {f.name for f in fields(DetectorModel)}


def _section(doc: dict, key: str, allowed: set) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise UsageError(f"config field '{key}' must be an object")
    extra = set(sec) - allowed
    if extra:
        raise UsageError(f"config field '{key}': unknown key(s) {sorted(extra)}")
    return sec


def _angles(spec, kind: str) -> list[float]:
    if spec is None:
        return qwp_angles(16) if kind == "QWP_LP" else hwp_angles(18)
    if isinstance(spec, list):
        return [float(a) for a in spec]
    if isinstance(spec, dict):
        n = int(spec.get("n", 16 if kind == "QWP_LP" else 18))
        start = float(spec.get("start", 0.0))
        if kind == "QWP_LP":
            return qwp_angles(n, start)
        return hwp_angles(n, float(spec.get("span", 180.0)), start)
    raise UsageError("config field 'angles' must be a list or an object")


def load_simulation_config(path, seed: int = 0) -> dict:
    """Parse a simulation config; a 'generator' block draws from ``seed``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    extra = set(doc) - {"emitters", "generator", "polarimeter", "detector", "angles"}
    if extra:
        raise UsageError(f"config: unknown field(s) {sorted(extra)}")
    try:
        pol = polarimeter_from_dict(doc.get("polarimeter"))
        det = DetectorModel(**_section(doc, "detector", _DETECTOR_FIELDS))
    except (TypeError, ConfigurationError, DomainError) as exc:
        raise UsageError(f"config: {exc}") from exc
    angles = _angles(doc.get("angles"), pol.kind)
    emitters = []
    if "generator" in doc:
        gen = dict(doc["generator"] or {})
        if gen.pop("kind", "reference") != "reference":
            raise UsageError("config field 'generator.kind' must be 'reference'")
        try:
            emitters = [(e.emitter_id, e.dot_id, e.model)
                        for e in reference_ensemble(seed=int(gen.pop("seed", seed)), **gen)]
        except (TypeError, DomainError) as exc:
            raise UsageError(f"config field 'generator': {exc}") from exc
    for k, raw in enumerate(doc.get("emitters") or []):
        raw = dict(raw)
        eid = str(raw.pop("emitter_id", f"e{len(emitters):03d}"))
        dot = raw.pop("dot_id", None)
        extra = set(raw) - _EMITTER_FIELDS
        if extra:
            raise UsageError(f"config field 'emitters[{k}]': unknown key(s) {sorted(extra)}")
        try:
            emitters.append((eid, None if dot is None else str(dot), EmitterModel(**raw)))
        except (TypeError, DomainError) as exc:
            raise UsageError(f"config field 'emitters[{k}]': {exc}") from exc
    ids = [e[0] for e in emitters]
    if len(set(ids)) != len(ids):
        raise UsageError("config field 'emitters': duplicate emitter_id")
    return {"emitters": emitters, "polarimeter": pol, "detector": det,
            "angles": angles}


def cmd_simulate(args) -> int:
    cfg = load_simulation_config(args.config, args.seed)
    out = Path(args.out)
    pol, det, angles = cfg["polarimeter"], cfg["detector"], cfg["angles"]
    entries, truth = [], []
    for k, (eid, dot, model) in enumerate(cfg["emitters"]):
        try:
            series = simulate_angle_series(model, pol, det, angles, args.seed, k)
        except ConfigurationError as exc:
            raise UsageError(f"config field 'emitters' ({eid}): {exc}") from exc
        rel = f"series/{eid}.csv"
        write_series(out / rel, series)
        entries.append(ManifestEntry(eid, rel, dot, model.species, None, pol))
        truth.append((eid, dot, model.species, model.fss, model.dipole_angle,
                      model.linewidth_fwhm, model.mean_energy))
    write_table(out / "truth.csv", TRUTH_COLUMNS, truth, TRUTH_FORMATS)
    write_manifest(out / "manifest.json", entries)
    print(f"wrote {len(entries)} series to {out}")
    return EXIT_OK


# -- analyze --------------------------------------------------------------------

def _record_row(r: EnsembleRecord, method: str):
    flags = sorted(r.flags) + (["failed"] if not r.ok else [])
    if not r.ok:
        return (r.emitter_id, method, None, None, None, None, None, None, ";".join(flags))
    res = r.result
    return (r.emitter_id, res.method, res.fss, res.fss_stderr,
            res.dipole_angle if res.dipole_defined else None, res.dipole_defined,
            res.mean_energy, r.linewidth, ";".join(flags))


def cmd_analyze(args) -> int:
    try:
        entries = read_manifest(args.manifest)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    methods = METHODS if args.method == "both" else (args.method,)
    order = {m: k for k, m in enumerate(methods)}
    items = [BatchItem(e.emitter_id, e.series_path, e.polarimeter, e.dot_id,
                       e.species, e.linewidth_hint) for e in entries]
    rows, failures = [], 0
    for m in methods:
        records = batch_analyze(items, BatchConfig(m, model=args.model,
                                                   workers=args.workers))
        for r in records:
            if not r.ok:
                failures += 1
                print(f"warning: {r.emitter_id} ({m}): {r.error}", file=sys.stderr)
        rows.extend((r.emitter_id, k, m, r) for k, r in enumerate(records))
    rows.sort(key=lambda t: (t[0], t[1], order[t[2]]))
    write_table(args.out, RESULT_COLUMNS, [_record_row(r, m) for _, _, m, r in rows],
                RESULT_FORMATS)
    print(f"analysed {len(entries)} emitters, {failures} failed; results in {args.out}")
    return EXIT_OK


# -- report ---------------------------------------------------------------------

def _float(s: str) -> float:
    return float(s) if s not in ("", None) else float("nan")


def _hist(values: np.ndarray, width: float):
    lo = width * math.floor(values.min() / width)
    hi = width * (math.floor(values.max() / width) + 1)
    edges = np.arange(lo, hi + 0.5 * width, width)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def cmd_report(args) -> int:
    try:
        table = read_table(args.results)
    except OSError as exc:
        raise UsageError(f"cannot read results {args.results}: {exc}") from exc
    methods = sorted({row["method"] for row in table})
    method = args.method or (methods[0] if methods else None)
    rows = [r for r in table if r["method"] == method and "failed" not in r["flags"].split(";")]
    if not rows:
        print("error: no analysed rows in results", file=sys.stderr)
        return EXIT_EMPTY
    out = Path(args.out)
    fss = np.array([_float(r["fss_ueV"]) for r in rows])
    lw = np.array([_float(r["linewidth_ueV"]) for r in rows])
    flags = [set(filter(None, r["flags"].split(";"))) for r in rows]

    edges, counts = _hist(fss, args.fss_bin)
    write_table(out / "fss_hist.csv", ("bin_lo_ueV", "bin_hi_ueV", "count"),
                [(a, b, int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)],
                {"bin_lo_ueV": "{:.6f}", "bin_hi_ueV": "{:.6f}"})
    finite_lw = lw[np.isfinite(lw)]
    if finite_lw.size:
        edges, counts = _hist(finite_lw, args.linewidth_bin)
        lw_rows = [(a, b, int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]
    else:
        lw_rows = []
    write_table(out / "linewidth_hist.csv", ("bin_lo_ueV", "bin_hi_ueV", "count"),
                lw_rows, {"bin_lo_ueV": "{:.6f}", "bin_hi_ueV": "{:.6f}"})

    angles = [_float(r["dphi_deg"]) for r, f in zip(rows, flags)
              if r["dphi_defined"] == "true" and "below_resolution" not in f]
    summary = {
        "method": method,
        "n_records": len(rows),
        "n_selected": sum("below_resolution" not in f for f in flags),
        "n_suspected_xx": sum("suspected_xx" in f for f in flags),
        "threshold_ueV": args.threshold,
        "fraction_below_50ueV": float(np.mean(fss < 50.0)),
        "fraction_below_threshold": float(np.mean(fss < args.threshold)),
        "fit_center": None, "fit_sigma": None, "fit_stderr": None, "median_dphi": None,
        "linewidth_min_ueV": float(finite_lw.min()) if finite_lw.size else None,
        "linewidth_max_ueV": float(finite_lw.max()) if finite_lw.size else None,
        "linewidth_mean_ueV": float(finite_lw.mean()) if finite_lw.size else None,
    }
    hist_rows = []
    if len(angles) >= 5:
        od = fit_orientation(angles, args.bin_width)
        summary.update(fit_center=round(od.fit_center, 6), fit_sigma=round(od.fit_sigma, 6),
                       fit_stderr=round(od.fit_stderr, 6), median_dphi=round(od.median, 6))
        centre = od.median + ((od.fit_center - od.median + 90) % 180 - 90)
        amp = float(od.counts.max())
        hist_rows = [(c, int(n), amp * math.exp(-0.5 * ((c - centre) / od.fit_sigma) ** 2))
                     for c, n in zip(od.centers, od.counts)]
    elif angles:
        med, centers, counts = orientation_histogram(angles, args.bin_width)
        summary["median_dphi"] = round(med, 6)
        hist_rows = [(c, int(n), None) for c, n in zip(centers, counts)]
    write_table(out / "dphi_hist.csv", ("center_deg", "count", "gaussian_fit"), hist_rows,
                {"center_deg": "{:.6f}", "gaussian_fit": "{:.6f}"})
    summary = {k: round(v, 6) if isinstance(v, float) else v for k, v in summary.items()}
    write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- resolution, entangle, cavity, polar ----------------------------------------

def cmd_resolution(args) -> int:
    det = DetectorModel(irf_fwhm=args.irf)
    method = None if args.method == "both" else args.method
    limit = resolution_limit(args.linewidth, det, args.n_angles, args.trials, args.seed,
                             args.peak_counts, method, args.workers)
    doc = {"linewidth_ueV": args.linewidth, "irf_ueV": args.irf, "n_angles": args.n_angles,
           "trials": args.trials, "seed": args.seed, "method": args.method,
           "resolution_limit_ueV": round(limit, 6)}
    if args.out:
        write_json(args.out, doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _values(text: str) -> list[float]:
    """'1,2,3' or 'start:stop:num' (inclusive linspace)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad range {text!r}; use start:stop:num")
        return np.linspace(float(parts[0]), float(parts[1]), int(parts[2])).tolist()
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_entangle(args) -> int:
    try:
        rows = sweep(_values(args.s), _values(args.s_c), _values(args.tau))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    write_table(args.out, SWEEP_COLUMNS, rows, {c: "{:.6f}" for c in SWEEP_COLUMNS})
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_cavity(args) -> int:
    try:
        stack = load_stack(args.stack) if args.stack else epitaxy_stack()
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load stack: {exc}") from exc
    lam = np.linspace(args.lambda_min, args.lambda_max, args.points)
    spec = reflectance_spectrum(stack, lam)
    write_table(args.out, ("lambda_nm", "reflectance"),
                list(zip(spec.lambdas, spec.reflectance)),
                {"lambda_nm": "{:.6f}", "reflectance": "{:.9f}"})
    try:
        mode = find_cavity_mode(spec)
    except ModeNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    doc = {"center_nm": round(mode.center, 6), "fwhm_nm": round(mode.fwhm, 6),
           "depth": round(mode.depth, 6)}
    if args.summary:
        write_json(args.summary, doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(*v)
    return complex(v)


def cmd_polar(args) -> int:
    try:
        doc = json.loads(Path(args.dipoles).read_text())
        dipoles = [([_complex(c) for c in d["vector"]], str(d["label"])) for d in doc]
        diagram = polar_diagram(dipoles, args.samples)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load dipoles: {exc}") from exc
    labels = list(diagram.curves)
    cols = ("phi_deg", *labels)
    rows = [(phi, *(float(diagram.curves[lab][k]) for lab in labels))
            for k, phi in enumerate(diagram.angles)]
    write_table(args.out, cols, rows, {c: "{:.6f}" for c in cols})
    summary = {f"dlp_{lab}": round(v, 6) for lab, v in diagram.dlp.items()}
    if args.summary:
        write_json(args.summary, summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsskit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate polarimeter sweeps from a JSON config")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", help="extract FSS and dipole angle for a manifest")
    s.add_argument("manifest")
    s.add_argument("--method", choices=("auto", *METHODS, "both"), default="auto",
                   help="auto picks the method matching each entry's polarimeter")
    s.add_argument("--model", choices=("auto", "gaussian", "doublet"), default="auto")
    s.add_argument("--out", default="results.csv")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("report", help="ensemble histograms and summary from results")
    s.add_argument("results")
    s.add_argument("--out", default="report")
    s.add_argument("--method", choices=METHODS, default=None)
    s.add_argument("--bin-width", type=float, default=2.0, help="dipole bins, deg")
    s.add_argument("--fss-bin", type=float, default=10.0, help="FSS bins, ueV")
    s.add_argument("--linewidth-bin", type=float, default=50.0, help="linewidth bins, ueV")
    s.add_argument("--threshold", type=float, default=50.0, help="FSS threshold, ueV")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("resolution", help="Monte-Carlo FSS resolution limit")
    s.add_argument("--linewidth", type=float, required=True, help="intrinsic FWHM, ueV")
    s.add_argument("--irf", type=float, default=89.0, help="instrument FWHM, ueV")
    s.add_argument("--n-angles", type=int, default=36)
    s.add_argument("--trials", type=int, default=500)
    s.add_argument("--peak-counts", type=float, default=1e4)
    s.add_argument("--method", choices=(*METHODS, "both"), default="both")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_resolution)

    s = sub.add_parser("entangle", help="two-photon state sweep over S, S_c and delay")
    s.add_argument("--s", default="10:100:10", help="ueV; list or start:stop:num")
    s.add_argument("--s-c", default="0", help="ueV; list or start:stop:num")
    s.add_argument("--tau", default="0", help="ns; list or start:stop:num")
    s.add_argument("--out", default="entangle.csv")
    s.set_defaults(func=cmd_entangle)

    s = sub.add_parser("cavity", help="multilayer reflectance and cavity mode")
    s.add_argument("--stack", default=None, help="stack JSON (default: built-in design)")
    s.add_argument("--lambda-min", type=float, default=1000.0)
    s.add_argument("--lambda-max", type=float, default=1600.0)
    s.add_argument("--points", type=int, default=3001)
    s.add_argument("--out", default="reflectance.csv")
    s.add_argument("--summary", default=None)
    s.set_defaults(func=cmd_cavity)

    s = sub.add_parser("polar", help="polar diagram and DLP of transition dipoles")
    s.add_argument("dipoles", help="JSON list of {label, vector}")
    s.add_argument("--samples", type=int, default=360)
    s.add_argument("--out", default="polar.csv")
    s.add_argument("--summary", default=None)
    s.set_defaults(func=cmd_polar)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
