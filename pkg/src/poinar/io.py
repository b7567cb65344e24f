"""File formats and run manifests.

Counts travel as CSV with one row per series: a ``series_id`` column followed
by one column per week, headed by the ISO week-start date. The season map is
the calendar month of each week's start date. Exposure is a two-column CSV
joined strictly on ``series_id``. Posterior draws persist as line-delimited
JSON with a version header.
"""

from __future__ import annotations

import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from .model import ModelState
from .panel import CountPanel
from .sampler import PosteriorDraws

DRAWS_FORMAT = "poinar-draws"
DRAWS_VERSION = 1


class ParseError(ValueError):
    """Raised when an input file exists but cannot be interpreted."""


class IntegrityError(ValueError):
    """Raised when a persisted artifact is incomplete or from another version."""


def week_starts_from(start: datetime.date, n_weeks: int) -> list[datetime.date]:
    """Start dates of ``n_weeks`` consecutive weeks."""
    return [start + datetime.timedelta(days=7 * i) for i in range(n_weeks)]


def months_of(dates) -> np.ndarray:
    """Calendar month (1..12) of each date; the week-to-month convention."""
    return np.array([d.month for d in dates], dtype=np.int64)


def load_counts(path, exposure_path=None) -> CountPanel:
    """Read a counts CSV (and optionally an exposure CSV) into a panel."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "series_id":
            raise ParseError(f"{path}: first header column must be 'series_id'")
        dates = []
        for j, cell in enumerate(header[1:], start=2):
            try:
                dates.append(datetime.date.fromisoformat(cell.strip()))
            except ValueError:
                raise ParseError(
                    f"{path}: header column {j} is not an ISO week-start date: {cell!r}"
                ) from None
        if not dates:
            raise ParseError(f"{path}: no week columns")

        ids: list[str] = []
        rows: list[list[int]] = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(dates) + 1:
                raise ParseError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(dates) + 1}"
                )
            ids.append(row[0])
            values = []
            for j, cell in enumerate(row[1:], start=2):
                try:
                    value = int(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {i}, column {j}: not an integer count: {cell!r}"
                    ) from None
                if value < 0:
                    raise ParseError(
                        f"{path}: row {i}, column {j}: negative count {value}"
                    )
                values.append(value)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no series rows")
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate series ids")

    exposure = None
    if exposure_path is not None:
        exposure = load_exposure(exposure_path, ids)
    return CountPanel(
        counts=np.array(rows, dtype=np.int64),
        season_of=months_of(dates),
        exposure=exposure,
        series_ids=ids,
        week_starts=dates,
    )


def save_counts(panel: CountPanel, path, week_starts: list[datetime.date] | None = None):
    """Write a panel as a counts CSV; dates must reproduce its season map."""
    dates = week_starts if week_starts is not None else panel.week_starts
    if dates is None:
        raise ValueError("panel has no week dates; pass week_starts")
    if len(dates) != panel.n_weeks:
        raise ValueError("week_starts must cover every week")
    if np.any(months_of(dates) != panel.season_of):
        raise ValueError("week_starts do not reproduce the panel's season map")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id"] + [d.isoformat() for d in dates])
        for sid, row in zip(panel.series_ids, panel.counts):
            writer.writerow([sid] + [int(v) for v in row])


def load_exposure(path, series_ids: list[str]) -> np.ndarray:
    """Read an exposure CSV and join it strictly against the panel ids."""
    path = Path(path)
    values: dict[str, float] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["series_id", "exposure"]:
            raise ParseError(f"{path}: header must be 'series_id,exposure'")
        for i, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"{path}: row {i} must have two cells")
            sid, cell = row
            if sid in values:
                raise ParseError(f"{path}: duplicate series id {sid!r}")
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i}: not a number: {cell!r}") from None
            if not value > 0:
                raise ParseError(f"{path}: row {i}: exposure must be positive")
            values[sid] = value
    missing = [sid for sid in series_ids if sid not in values]
    extra = [sid for sid in values if sid not in set(series_ids)]
    if missing or extra:
        raise ParseError(
            f"{path}: exposure ids do not match the panel "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )
    return np.array([values[sid] for sid in series_ids], dtype=float)


def save_exposure(series_ids: list[str], exposure: np.ndarray, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "exposure"])
        for sid, value in zip(series_ids, exposure):
            writer.writerow([sid, repr(float(value))])


def _state_record(state: ModelState, chain: int, iteration: int, include_innovations: bool) -> dict:
    record = {
        "chain": int(chain),
        "iteration": int(iteration),
        "tau": float(state.tau),
        "alpha": [float(a) for a in state.alpha],
        "z": [int(k) for k in state.z],
        "phi_star": [float(p) for p in state.phi_star],
        "theta": [float(t) for t in state.theta],
    }
    if include_innovations and state.innovations is not None:
        record["innovations"] = [[int(e) for e in row] for row in state.innovations]
    return record


def save_draws(draws: PosteriorDraws, path, include_innovations: bool = False):
    """Persist draws as JSON lines with a version header.

    Floats are written at full round-trip precision; innovations are large
    and skipped unless asked for.
    """
    path = Path(path)
    header = {
        "format": DRAWS_FORMAT,
        "version": DRAWS_VERSION,
        "mode": draws.mode,
        "n_draws": len(draws),
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for state, chain, iteration in zip(draws.states, draws.chain_index, draws.iteration):
            fh.write(json.dumps(_state_record(state, chain, iteration, include_innovations)) + "\n")


def load_draws(path) -> PosteriorDraws:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise IntegrityError(f"{path}: empty draws file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise IntegrityError(f"{path}: unreadable header line") from None
    if header.get("format") != DRAWS_FORMAT:
        raise IntegrityError(f"{path}: not a draws file")
    if header.get("version") != DRAWS_VERSION:
        raise IntegrityError(
            f"{path}: draws version {header.get('version')} unsupported "
            f"(expected {DRAWS_VERSION})"
        )
    n_draws = header.get("n_draws")
    records = lines[1:]
    if len(records) != n_draws:
        raise IntegrityError(
            f"{path}: expected {n_draws} draws, found {len(records)} (truncated or padded file)"
        )
    states, chains, iterations = [], [], []
    for i, line in enumerate(records, start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise IntegrityError(f"{path}: unreadable record on line {i}") from None
        states.append(
            ModelState(
                alpha=np.array(rec["alpha"], dtype=float),
                z=np.array(rec["z"], dtype=np.int64),
                phi_star=np.array(rec["phi_star"], dtype=float),
                theta=np.array(rec["theta"], dtype=float),
                tau=float(rec["tau"]),
                innovations=(
                    np.array(rec["innovations"], dtype=np.int64)
                    if "innovations" in rec
                    else None
                ),
            )
        )
        chains.append(rec["chain"])
        iterations.append(rec["iteration"])
    return PosteriorDraws(
        states=states,
        chain_index=np.array(chains, dtype=np.int64),
        iteration=np.array(iterations, dtype=np.int64),
        mode=header.get("mode", "plain"),
    )


def write_manifest(out_dir, command: str, parameters: dict):
    """Record everything needed to reproduce a run: the command, its resolved
    parameters (seeds included) and the library versions. No timestamps, so
    identical runs produce identical manifests."""
    from . import __version__

    manifest = {
        "command": command,
        "parameters": parameters,
        "versions": {
            "poinar": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "python": sys.version.split()[0],
        },
        "seed_derivation": (
            "streams use numpy SeedSequence(entropy=seed, spawn_key=(k, ...)): "
            "k=0 simulation, k=1 chains (then chain index), k=2 study replicates"
        ),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "manifest.json").open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
