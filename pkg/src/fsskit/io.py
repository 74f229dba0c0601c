"""Plain-text file formats: angle series, manifests and result tables.

Everything is written through ``atomic_write_text`` (temp file in the target
directory, then ``os.replace``), so an interrupted run never leaves a
half-written artifact behind.  Numbers are printed with fixed decimals per
column, which keeps outputs byte-identical across runs and platforms.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import AngleSeries, DomainError, Spectrum
from .forward import ConfigurationError, PolarimeterConfig

MANIFEST_VERSION = 1
ENERGY_FMT = "{:.9f}"      # eV; 1e-9 eV = 1e-3 ueV
COUNTS_FMT = "{:.6f}"


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_value(value: Any, fmt: str | None = None) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and not np.isfinite(value):
        return "nan" if np.isnan(value) else ("inf" if value > 0 else "-inf")
    if fmt is not None:
        return fmt.format(value)
    return str(value)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence[Any]],
                formats: dict[str, str] | None = None) -> None:
    """CSV with a header row; ``formats`` maps column name to a format string."""
    formats = formats or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
        w.writerow([format_value(v, formats.get(c)) for c, v in zip(columns, row)])
    atomic_write_text(path, buf.getvalue())


def read_table(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- angle series -------------------------------------------------------------

def series_to_text(series: AngleSeries) -> str:
    lines = []
    for angle, s in series:
        lines.append(f"# angle_deg={angle:.6f}")
        lines.append("energy_eV,counts")
        lines.extend(f"{ENERGY_FMT.format(e)},{COUNTS_FMT.format(c)}"
                     for e, c in zip(s.energies, s.counts))
    return "\n".join(lines) + "\n"


def write_series(path, series: AngleSeries) -> None:
    atomic_write_text(path, series_to_text(series))


def read_series(path) -> AngleSeries:
    """Parse the block format written by ``write_series``."""
    angles, spectra = [], []
    rows: list[tuple[float, float]] = []

    def flush():
        if angles and len(spectra) < len(angles):
            if not rows:
                raise FormatError(f"{path}: empty block at angle {angles[-1]}")
            arr = np.array(rows, dtype=float)
            try:
                spectra.append(Spectrum(arr[:, 0], arr[:, 1]))
            except DomainError as exc:
                raise FormatError(f"{path}: {exc}") from exc

    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() != "angle_deg":
                    raise FormatError(f"{path}:{lineno}: unexpected comment {line!r}")
                flush()
                rows = []
                try:
                    angles.append(float(val))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad angle {val!r}") from exc
            elif line.startswith("energy_eV"):
                continue
            else:
                if not angles:
                    raise FormatError(f"{path}:{lineno}: data before the first block")
                try:
                    e, c = line.split(",")
                    rows.append((float(e), float(c)))
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad row {line!r}") from exc
    flush()
    if not angles:
        raise FormatError(f"{path}: no angle blocks")
    return AngleSeries(tuple(angles), tuple(spectra))


# -- manifests ----------------------------------------------------------------

def polarimeter_to_dict(p: PolarimeterConfig) -> dict:
    d = asdict(p)
    if d["pre_retarder"] is not None:
        d["pre_retarder"] = list(d["pre_retarder"])
    return d


def polarimeter_from_dict(d: dict | None) -> PolarimeterConfig:
    d = dict(d or {})
    known = {"kind", "lp_axis", "reference_offset", "pre_retarder",
             "beam_steering_depth", "beam_steering_phase"}
    extra = set(d) - known
    if extra:
        raise ConfigurationError(f"polarimeter: unknown field(s) {sorted(extra)}")
    return PolarimeterConfig(**d)


@dataclass
class ManifestEntry:
    emitter_id: str
    series_path: str
    dot_id: str | None = None
    species: str = "unknown"
    linewidth_hint: float | None = None   # ueV
    polarimeter: PolarimeterConfig = field(default_factory=PolarimeterConfig)

    def to_dict(self) -> dict:
        return {"emitter_id": self.emitter_id, "dot_id": self.dot_id,
                "species": self.species, "series_path": self.series_path,
                "linewidth_hint": self.linewidth_hint,
                "polarimeter": polarimeter_to_dict(self.polarimeter)}


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    write_json(path, {"version": MANIFEST_VERSION,
                      "entries": [e.to_dict() for e in entries]})


def read_manifest(path) -> list[ManifestEntry]:
    """Load a manifest; relative series paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ConfigurationError("manifest: missing field 'entries'")
    if doc.get("version") != MANIFEST_VERSION:
        raise ConfigurationError(f"manifest: unsupported version {doc.get('version')!r}")
    out, seen = [], set()
    for k, raw in enumerate(doc["entries"]):
        for key in ("emitter_id", "series_path"):
            if key not in raw:
                raise ConfigurationError(f"manifest entry {k}: missing field {key!r}")
        eid = str(raw["emitter_id"])
        if eid in seen:
            raise ConfigurationError(f"manifest: duplicate emitter_id {eid!r}")
        seen.add(eid)
        sp = Path(raw["series_path"])
        if not sp.is_absolute():
            sp = path.parent / sp
        hint = raw.get("linewidth_hint")
        out.append(ManifestEntry(
            emitter_id=eid, series_path=str(sp),
            dot_id=None if raw.get("dot_id") is None else str(raw["dot_id"]),
            species=str(raw.get("species", "unknown")),
            linewidth_hint=None if hint is None else float(hint),
            polarimeter=polarimeter_from_dict(raw.get("polarimeter"))))
    return out
