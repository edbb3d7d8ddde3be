"""Sparse 3D tensor construction from CSV records, normalization, and splitting.

A record (station_id, parameter, timestamp, value) becomes one observed cell
of a stations x parameters x time-slots tensor. Station and parameter indices
are assigned in first-seen order, time indices by ascending timestamp, and
the maps are kept with the tensor so raw identifiers survive a round trip
through training and imputation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import ConfigError, DataError

CSV_HEADER = ["station_id", "parameter", "timestamp", "value"]


def _parse_timestamp(raw: str, line_no: int) -> datetime:
    try:
        return datetime.fromisoformat(raw.strip())
    except ValueError:
        raise DataError(f"line {line_no}: unparseable ISO-8601 timestamp {raw!r}") from None


@dataclass(frozen=True)
class SparseTensor:
    """COO 3D tensor of observed records plus raw-identifier index maps.

    ``i``/``j``/``k`` index stations, parameters, and time slots; ``values``
    holds one observation per (i, j, k). All arrays are read-only so tensors
    can be shared freely across workers.
    """

    dims: tuple[int, int, int]
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    values: np.ndarray
    station_ids: tuple[str, ...]
    parameter_names: tuple[str, ...]
    time_stamps: tuple[str, ...]

    def __post_init__(self):
        for arr in (self.i, self.j, self.k, self.values):
            arr.setflags(write=False)
        n_i, n_j, n_k = self.dims
        if len(self.i) and (
            self.i.min() < 0 or self.i.max() >= n_i
            or self.j.min() < 0 or self.j.max() >= n_j
            or self.k.min() < 0 or self.k.max() >= n_k
        ):
            raise DataError("entry index outside tensor dims")
        flat = self.flat_indices()
        if len(np.unique(flat)) != len(flat):
            raise DataError("duplicate (i,j,k) keys in tensor entries")

    def __len__(self) -> int:
        return len(self.values)

    def flat_indices(self) -> np.ndarray:
        n_i, n_j, n_k = self.dims
        return (self.i * n_j + self.j) * n_k + self.k

    @property
    def station_index(self) -> dict[str, int]:
        return {s: n for n, s in enumerate(self.station_ids)}

    @property
    def parameter_index(self) -> dict[str, int]:
        return {p: n for n, p in enumerate(self.parameter_names)}

    @property
    def time_index(self) -> dict[str, int]:
        return {t: n for n, t in enumerate(self.time_stamps)}

    def with_values(self, values: np.ndarray) -> "SparseTensor":
        """Same observed cells and maps, new values."""
        if values.shape != self.values.shape:
            raise DataError("replacement values must match entry count")
        return SparseTensor(self.dims, self.i, self.j, self.k,
                            np.asarray(values, dtype=np.float64),
                            self.station_ids, self.parameter_names, self.time_stamps)

    def records(self) -> list[tuple[str, str, str, float]]:
        """Raw-identifier view of the entries, sorted by (station, parameter, timestamp)."""
        rows = [
            (self.station_ids[ii], self.parameter_names[jj], self.time_stamps[kk], float(v))
            for ii, jj, kk, v in zip(self.i, self.j, self.k, self.values)
        ]
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        return rows

    def same_content(self, other: "SparseTensor") -> bool:
        """True if both tensors describe the same raw records (index order may differ)."""
        return self.dims == other.dims and self.records() == other.records()

    def entries(self, positions: np.ndarray | None = None) -> "Entries":
        """Index/value arrays for the selected entry positions (all by default)."""
        if positions is None:
            return Entries(self.i, self.j, self.k, self.values)
        positions = np.asarray(positions)
        return Entries(self.i[positions], self.j[positions],
                       self.k[positions], self.values[positions])


@dataclass(frozen=True)
class Entries:
    """A flat batch of observed cells: parallel index arrays and target values."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def take(self, positions: np.ndarray) -> "Entries":
        return Entries(self.i[positions], self.j[positions],
                       self.k[positions], self.x[positions])


def ingest_csv(path) -> SparseTensor:
    """Read ``station_id,parameter,timestamp,value`` records into a SparseTensor.

    Station and parameter indices follow first appearance in the file; time
    indices follow ascending timestamp order. Duplicate (station, parameter,
    timestamp) keys are rejected rather than merged.
    """
    stations: dict[str, int] = {}
    parameters: dict[str, int] = {}
    raw: list[tuple[int, int, datetime, float]] = []
    seen: set[tuple[int, int, datetime]] = set()
    times: set[datetime] = set()

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no records")
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {line_no}: expected 4 columns, got {len(row)}")
            sid, pname, ts_raw, val_raw = (c.strip() for c in row)
            ts = _parse_timestamp(ts_raw, line_no)
            try:
                val = float(val_raw)
            except ValueError:
                raise DataError(f"line {line_no}: unparseable value {val_raw!r}") from None
            if not np.isfinite(val):
                raise DataError(f"line {line_no}: non-finite value {val_raw!r}")
            si = stations.setdefault(sid, len(stations))
            pj = parameters.setdefault(pname, len(parameters))
            key = (si, pj, ts)
            if key in seen:
                raise DataError(
                    f"duplicate key ({sid}, {pname}, {ts.isoformat()}) at line {line_no}")
            seen.add(key)
            times.add(ts)
            raw.append((si, pj, ts, val))

    if not raw:
        raise DataError(f"{path}: no records")

    time_order = {ts: n for n, ts in enumerate(sorted(times))}
    i = np.array([r[0] for r in raw], dtype=np.int64)
    j = np.array([r[1] for r in raw], dtype=np.int64)
    k = np.array([time_order[r[2]] for r in raw], dtype=np.int64)
    values = np.array([r[3] for r in raw], dtype=np.float64)
    return SparseTensor(
        dims=(len(stations), len(parameters), len(time_order)),
        i=i, j=j, k=k, values=values,
        station_ids=tuple(stations),
        parameter_names=tuple(parameters),
        time_stamps=tuple(ts.isoformat() for ts in sorted(times)),
    )


def export_csv(tensor: SparseTensor, path) -> None:
    """Write the ingestion schema back out, rows sorted by (station, parameter, timestamp)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for sid, pname, ts, val in tensor.records():
            writer.writerow([sid, pname, ts, repr(val)])


# ---------------------------------------------------------------------------
# train / validation / test splitting


@dataclass(frozen=True)
class SplitSpec:
    """Ratios for the train:validation:test partition plus the shuffle seed."""

    ratios: tuple[float, float, float] = (1.0, 2.0, 7.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"split ratios must be three positive numbers, got {self.ratios}")

    def fractions(self) -> tuple[float, float, float]:
        total = sum(self.ratios)
        return tuple(r / total for r in self.ratios)


@dataclass(frozen=True)
class Split:
    """Disjoint entry-position sets covering all observed entries."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for arr in (self.train, self.val, self.test):
            arr.setflags(write=False)


def split_entries(tensor: SparseTensor, spec: SplitSpec) -> Split:
    """Partition observed entries uniformly at random into train/val/test.

    Group sizes are exact largest-remainder allocations of the ratio
    fractions, so each is within one entry of its ideal share. The same
    spec always produces the same partition.
    """
    n = len(tensor)
    if n < 10:
        raise DataError(f"need at least 10 observed entries to split, got {n}")
    fracs = spec.fractions()
    counts = [int(np.floor(f * n)) for f in fracs]
    remainders = [f * n - c for f, c in zip(fracs, counts)]
    for _ in range(n - sum(counts)):
        g = int(np.argmax(remainders))
        counts[g] += 1
        remainders[g] = -1.0
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return Split(
        train=np.sort(order[:a]),
        val=np.sort(order[a:b]),
        test=np.sort(order[b:]),
    )


# ---------------------------------------------------------------------------
# per-parameter min-max normalization


@dataclass(frozen=True)
class Scaler:
    """Per-parameter (min, max) fitted on training entries only.

    Parameters whose training range is a single point map to 0.5; their
    inverse maps back to that point.
    """

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins.setflags(write=False)
        self.maxs.setflags(write=False)
        if np.any(self.maxs < self.mins):
            raise DataError("scaler max below min")

    def transform(self, j: np.ndarray, values: np.ndarray) -> np.ndarray:
        span = self.maxs[j] - self.mins[j]
        out = np.where(span > 0, (values - self.mins[j]) / np.where(span > 0, span, 1.0), 0.5)
        return np.clip(out, 0.0, 1.0)

    def inverse(self, j: np.ndarray, normalized: np.ndarray) -> np.ndarray:
        return self.mins[j] + normalized * (self.maxs[j] - self.mins[j])


def fit_scaler(tensor: SparseTensor, split: Split) -> Scaler:
    """Fit per-parameter min/max on the training partition.

    Raises if a parameter occurs in validation/test but never in training;
    warns on parameters with a degenerate (single-point) training range.
    """
    n_params = tensor.dims[1]
    train_j = tensor.j[split.train]
    covered = np.zeros(n_params, dtype=bool)
    covered[train_j] = True
    held_j = np.concatenate([tensor.j[split.val], tensor.j[split.test]])
    missing = np.setdiff1d(np.unique(held_j), np.flatnonzero(covered))
    if missing.size:
        names = ", ".join(tensor.parameter_names[m] for m in missing)
        raise DataError(f"parameter(s) without training coverage: {names}")

    mins = np.zeros(n_params)
    maxs = np.ones(n_params)
    train_vals = tensor.values[split.train]
    for p in np.flatnonzero(covered):
        sel = train_vals[train_j == p]
        mins[p], maxs[p] = sel.min(), sel.max()
        if mins[p] == maxs[p]:
            warnings.warn(
                f"parameter {tensor.parameter_names[p]!r} has a degenerate training "
                f"range [{mins[p]}, {maxs[p]}]; its values normalize to 0.5")
    return Scaler(mins=mins, maxs=maxs)


def normalize(tensor: SparseTensor, split: Split) -> tuple[SparseTensor, Scaler]:
    """Map every value to [0,1] with training-set per-parameter min/max."""
    scaler = fit_scaler(tensor, split)
    return tensor.with_values(scaler.transform(tensor.j, tensor.values)), scaler
