"""File formats: stream files, truth sidecars, record CSVs, and flat config text.

Stream files are deliberately primitive so anything can read them: a header
line ``D=<int>``, then one line per step holding D comma-separated decimal
fields with the literal token ``NaN`` on missing entries.  Floats are written
with ``repr`` so re-reading recovers them exactly and reruns are
byte-identical.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import ConfigError, DataError
from .subset import Observation

FORMAT_VERSION = "mousse-stream-v1"
RECORD_HEADER = "t,e,eps,k,glr,alarm,skipped"


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------
# stream files


def write_stream(path: str | Path, observations: Iterable[tuple[Observation, dict]],
                 ambient_dim: int, truth_path: str | Path | None = None,
                 meta: dict | None = None) -> int:
    """Write observations (and optionally their truth sidecar); returns row count."""
    n = 0
    truth_fh: TextIO | None = None
    try:
        if truth_path is not None:
            truth_fh = open(truth_path, "w", encoding="utf-8")
            header = {"type": "meta", "format": FORMAT_VERSION,
                      "ambient_dim": ambient_dim}
            header.update(meta or {})
            truth_fh.write(json.dumps(header) + "\n")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"D={ambient_dim}\n")
            for obs, truth in observations:
                row = np.full(ambient_dim, np.nan)
                row[obs.omega] = obs.values
                fh.write(",".join("NaN" if np.isnan(v) else _fmt(v) for v in row))
                fh.write("\n")
                n += 1
                if truth_fh is not None:
                    doc = {"type": "step", "t": obs.t}
                    for key, value in truth.items():
                        doc[key] = value.tolist() if isinstance(value, np.ndarray) else value
                    truth_fh.write(json.dumps(doc) + "\n")
    finally:
        if truth_fh is not None:
            truth_fh.close()
    return n


def read_stream(path: str | Path, scale: float = 1.0) -> tuple[int, Iterator[tuple[np.ndarray, np.ndarray]]]:
    """Open a stream file; returns (ambient dim, iterator of (values, omega) rows).

    Raises :class:`DataError` with the offending line number on malformed input.
    """
    fh = open(path, "r", encoding="utf-8")
    header = fh.readline().strip()
    if not header.startswith("D="):
        fh.close()
        raise DataError(f"{path}:1: expected header 'D=<int>', got {header!r}")
    try:
        ambient_dim = int(header[2:])
    except ValueError:
        fh.close()
        raise DataError(f"{path}:1: malformed ambient dimension in {header!r}") from None

    def rows() -> Iterator[tuple[np.ndarray, np.ndarray]]:
        with fh:
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) != ambient_dim:
                    raise DataError(
                        f"{path}:{lineno}: expected {ambient_dim} fields, got {len(fields)}"
                    )
                try:
                    row = np.array([float(f) for f in fields])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: unparseable field") from None
                omega = np.flatnonzero(~np.isnan(row))
                if omega.size == 0:
                    raise DataError(f"{path}:{lineno}: row has no observed entries")
                yield scale * row[omega], omega.astype(np.intp)

    return ambient_dim, rows()


# ----------------------------------------------------------------------
# per-step records


@dataclass
class StreamRecord:
    """One scored step of the track+detect pipeline."""

    t: int
    e: float
    eps_avg: float
    n_leaves: int
    glr_stat: float
    alarm: bool
    skipped: bool

    def csv_row(self) -> str:
        return ",".join([
            str(self.t), _fmt(self.e), _fmt(self.eps_avg), str(self.n_leaves),
            _fmt(self.glr_stat), str(int(self.alarm)), str(int(self.skipped)),
        ])


def write_records(path: str | Path, records: Iterable[StreamRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECORD_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


# ----------------------------------------------------------------------
# flat key=value configuration


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat ``section.key=value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))
