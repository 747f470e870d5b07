"""Subjects, longitudinal histories and the counting-process (long) format.

A subject's history is converted to records on left-open intervals
``(tstart, tstop]``.  Covariates on ``(t_k, t_{k+1}]`` are the values measured
at ``t_k`` (last observation carried forward) and the event flag sits on the
final record only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

TIME_DECIMALS = 10
TIME_QUANTUM = 10.0 ** -TIME_DECIMALS
DATASET_FORMAT = "tdsurv.dataset"
DATASET_VERSION = 1


class ValidationError(ValueError):
    """Raised when survival data violate the counting-process contract."""


def quantize_time(t: float) -> float:
    """Round a time to the fixed decimal grid used for tie detection."""
    return round(float(t), TIME_DECIMALS)


def _finite_tuple(values: Iterable[float], what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise ValidationError(f"{what} contains missing or non-finite values: {out}")
    return out


@dataclass(frozen=True)
class Measurement:
    time: float
    values: tuple[float, ...]

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValidationError(f"measurement time must be finite and >= 0, got {self.time}")
        object.__setattr__(self, "values", _finite_tuple(self.values, "measurement"))


@dataclass(frozen=True)
class Subject:
    """One subject: baseline covariates, visit history and observed outcome.

    Parameters
    ----------
    id : str
        Unique identifier.
    baseline : tuple of float
        Time-invariant covariates (length ``p``).
    history : tuple of Measurement
        Longitudinal measurements, strictly increasing in time, first at 0,
        all strictly before ``obs_time``.
    obs_time : float
        Observed event or censoring time, ``> 0``.
    event : int
        1 if the event was observed at ``obs_time``, else 0.
    """

    id: str
    baseline: tuple[float, ...]
    history: tuple[Measurement, ...]
    obs_time: float
    event: int

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "baseline", _finite_tuple(self.baseline, f"subject {self.id} baseline"))
        object.__setattr__(self, "history", tuple(self.history))
        if not math.isfinite(self.obs_time) or self.obs_time <= 0:
            raise ValidationError(f"subject {self.id}: obs_time must be > 0, got {self.obs_time}")
        if self.event not in (0, 1):
            raise ValidationError(f"subject {self.id}: event must be 0 or 1, got {self.event}")
        if not self.history:
            raise ValidationError(f"subject {self.id}: empty measurement history")
        times = [m.time for m in self.history]
        if times[0] != 0:
            raise ValidationError(f"subject {self.id}: first measurement at {times[0]}, expected a baseline visit at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"subject {self.id}: measurement times not strictly increasing: {times}")
        if times[-1] >= self.obs_time:
            raise ValidationError(
                f"subject {self.id}: measurement at {times[-1]} is not before obs_time {self.obs_time}")
        widths = {len(m.values) for m in self.history}
        if len(widths) != 1:
            raise ValidationError(f"subject {self.id}: measurements have differing lengths {sorted(widths)}")

    @classmethod
    def create(cls, id, baseline, history, obs_time, event) -> "Subject":
        """Build a subject at ingestion: sort visits, quantize times and drop
        measurements taken at or after ``obs_time`` (with a warning)."""
        obs_time = quantize_time(obs_time)
        ms = sorted((Measurement(quantize_time(m.time), m.values) if isinstance(m, Measurement)
                     else Measurement(quantize_time(m[0]), tuple(m[1])) for m in history),
                    key=lambda m: m.time)
        kept = [m for m in ms if m.time < obs_time]
        if len(kept) < len(ms):
            log.warning("subject %s: dropped %d measurement(s) at or after obs_time %g",
                        id, len(ms) - len(kept), obs_time)
        return cls(id, tuple(baseline), tuple(kept), obs_time, int(event))

    @property
    def q(self) -> int:
        return len(self.history[0].values)

    @property
    def times(self) -> np.ndarray:
        return np.array([m.time for m in self.history])


@dataclass(frozen=True)
class LongRecord:
    id: str
    tstart: float
    tstop: float
    event: int
    covariates: tuple[float, ...]


@dataclass(frozen=True)
class LongTable:
    """Column-oriented view of long records, the form numeric code consumes."""

    ids: np.ndarray
    tstart: np.ndarray
    tstop: np.ndarray
    event: np.ndarray
    X: np.ndarray

    def __len__(self):
        return len(self.tstop)

    def take(self, idx) -> "LongTable":
        return LongTable(self.ids[idx], self.tstart[idx], self.tstop[idx], self.event[idx], self.X[idx])

    @property
    def n_subjects(self) -> int:
        return len(np.unique(self.ids))

    @classmethod
    def from_records(cls, records: Sequence[LongRecord]) -> "LongTable":
        width = len(records[0].covariates) if records else 0
        return cls(
            ids=np.array([r.id for r in records], dtype=object),
            tstart=np.array([r.tstart for r in records], dtype=float),
            tstop=np.array([r.tstop for r in records], dtype=float),
            event=np.array([r.event for r in records], dtype=int),
            X=np.array([r.covariates for r in records], dtype=float).reshape(len(records), width),
        )


def build_long_format(subjects: Sequence[Subject]) -> list[LongRecord]:
    """Convert subjects to counting-process records with LOCF covariates."""
    out = []
    for subj in subjects:
        hist = subj.history
        for k, m in enumerate(hist):
            last = k == len(hist) - 1
            tstop = subj.obs_time if last else hist[k + 1].time
            out.append(LongRecord(subj.id, m.time, tstop, subj.event if last else 0,
                                  subj.baseline + m.values))
    return out


def covariate_at(subject: Subject, t: float, left_limit: bool = False) -> tuple[float, ...]:
    """Longitudinal values in force at time ``t`` by LOCF.

    With ``left_limit=True`` the value in force just before ``t`` is returned,
    i.e. the one on the record ``(tstart, tstop]`` containing ``t``; this is
    the rule applied at event times.
    """
    times = subject.times
    if t < times[0] or (left_limit and t <= times[0]):
        raise ValueError(f"subject {subject.id}: no measurement before t={t}")
    side = "left" if left_limit else "right"
    k = int(np.searchsorted(times, t, side=side)) - 1
    return subject.history[k].values


@dataclass(frozen=True)
class Dataset:
    subjects: tuple[Subject, ...]
    p: int
    q: int
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids")
        for s in self.subjects:
            if len(s.baseline) != self.p or s.q != self.q:
                raise ValidationError(
                    f"subject {s.id}: dimensions ({len(s.baseline)}, {s.q}) != dataset ({self.p}, {self.q})")
        object.__setattr__(self, "_by_id", {s.id: s for s in self.subjects})

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], p: int | None = None, q: int | None = None) -> "Dataset":
        subjects = tuple(subjects)
        if p is None or q is None:
            if not subjects:
                raise ValidationError("cannot infer dimensions of an empty dataset")
            p, q = len(subjects[0].baseline), subjects[0].q
        return cls(subjects, p, q)

    def __len__(self):
        return len(self.subjects)

    def __getitem__(self, id) -> Subject:
        return self._by_id[str(id)]

    @cached_property
    def long(self) -> list[LongRecord]:
        return build_long_format(self.subjects)

    @cached_property
    def table(self) -> LongTable:
        if not self.subjects:
            return LongTable(np.array([], dtype=object), np.zeros(0), np.zeros(0),
                             np.zeros(0, dtype=int), np.zeros((0, self.p + self.q)))
        return LongTable.from_records(self.long)

    @property
    def time(self) -> np.ndarray:
        return np.array([s.obs_time for s in self.subjects], dtype=float)

    @property
    def event(self) -> np.ndarray:
        return np.array([s.event for s in self.subjects], dtype=int)

    @property
    def censoring_fraction(self) -> float:
        return float(1 - self.event.mean()) if self.subjects else float("nan")

    def subset(self, ids: Iterable) -> "Dataset":
        keep = {str(i) for i in ids}
        return Dataset(tuple(s for s in self.subjects if s.id in keep), self.p, self.q)

    def to_json(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "p": self.p,
            "q": self.q,
            "subjects": [
                {"id": s.id, "baseline": list(s.baseline), "obs_time": s.obs_time, "event": s.event,
                 "history": [{"time": m.time, "values": list(m.values)} for m in s.history]}
                for s in self.subjects
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        if doc.get("format") != DATASET_FORMAT:
            raise ValidationError(f"not a dataset document: format={doc.get('format')!r}")
        if doc.get("version") != DATASET_VERSION:
            raise ValidationError(f"unsupported dataset version {doc.get('version')!r}")
        subjects = [Subject(d["id"], tuple(d["baseline"]),
                            tuple(Measurement(m["time"], tuple(m["values"])) for m in d["history"]),
                            d["obs_time"], d["event"]) for d in doc["subjects"]]
        return cls(tuple(subjects), doc["p"], doc["q"])


def filter_at_risk(dataset: Dataset, s: float) -> Dataset:
    """Subjects still event-free and uncensored at landmark ``s`` (``T > s``)."""
    if s < 0:
        raise ValueError("landmark must be >= 0")
    return Dataset(tuple(x for x in dataset.subjects if x.obs_time > s), dataset.p, dataset.q)


# ---------------------------------------------------------------------------
# CSV / JSON I/O

def _header(p: int, q: int) -> list[str]:
    return [f"x{i + 1}" for i in range(p)] + [f"y{j + 1}" for j in range(q)]


def _dims_from_header(header: list[str], lead: list[str], path) -> tuple[int, int]:
    if header[:len(lead)] != lead:
        raise ValidationError(f"{path}: header must start with {','.join(lead)}, got {','.join(header[:len(lead)])}")
    rest = header[len(lead):]
    p = sum(1 for c in rest if c.startswith("x"))
    q = len(rest) - p
    if rest != _header(p, q):
        raise ValidationError(f"{path}: covariate columns must be x1..xp then y1..yq, got {rest}")
    if q < 1:
        raise ValidationError(f"{path}: at least one longitudinal column y1 is required")
    return p, q


def _parse_row(row: list[str], width: int, lineno: int, path) -> list[float]:
    if len(row) != width:
        raise ValidationError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
    try:
        vals = [float(v) for v in row[1:]]
    except ValueError as exc:
        raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError(f"{path}:{lineno}: missing or non-finite value")
    return vals


def load_csv(path) -> Dataset:
    """Read a long-format CSV (``id,tstart,tstop,event,x1..xp,y1..yq``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        p, q = _dims_from_header(header, ["id", "tstart", "tstop", "event"], path)
        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = _parse_row(row, len(header), lineno, path)
            groups.setdefault(row[0].strip(), []).append((lineno, vals))

    subjects = []
    for sid, rows in groups.items():
        rows.sort(key=lambda r: r[1][0])
        history = []
        for k, (lineno, (tstart, tstop, event, *cov)) in enumerate(rows):
            tstart, tstop = quantize_time(tstart), quantize_time(tstop)
            if not tstart < tstop:
                raise ValidationError(f"{path}:{lineno}: tstart {tstart} must be < tstop {tstop}")
            if event not in (0.0, 1.0):
                raise ValidationError(f"{path}:{lineno}: event must be 0 or 1")
            if k > 0:
                prev_line, prev = rows[k - 1]
                prev_stop = quantize_time(prev[1])
                if tstart < prev_stop:
                    raise ValidationError(
                        f"{path}: rows {prev_line} and {lineno} of subject {sid} overlap "
                        f"({prev[0]},{prev[1]}] and ({tstart},{tstop}]")
                if tstart > prev_stop:
                    raise ValidationError(
                        f"{path}: gap between rows {prev_line} and {lineno} of subject {sid} "
                        f"({prev_stop} to {tstart})")
                if prev[2] == 1.0:
                    raise ValidationError(f"{path}:{prev_line}: event on a non-final interval of subject {sid}")
                if prev[3:3 + p] != cov[:p]:
                    raise ValidationError(f"{path}:{lineno}: baseline covariates of subject {sid} change over time")
            history.append(Measurement(tstart, tuple(cov[p:])))
        last = rows[-1][1]
        try:
            subjects.append(Subject(sid, tuple(rows[0][1][3:3 + p]), tuple(history),
                                    quantize_time(last[1]), int(last[2])))
        except ValidationError as exc:
            raise ValidationError(f"{path}: rows {rows[0][0]}-{rows[-1][0]}: {exc}") from None
    subjects.sort(key=lambda s: _sort_key(s.id))
    return Dataset(tuple(subjects), p, q)


def load_subject_csv(path) -> Dataset:
    """Read the one-row-per-visit format ``id,time,event_time,event,x..,y..``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        p, q = _dims_from_header(header, ["id", "time", "event_time", "event"], path)
        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if row:
                groups.setdefault(row[0].strip(), []).append((lineno, _parse_row(row, len(header), lineno, path)))
    subjects = []
    for sid, rows in groups.items():
        first = rows[0][1]
        for lineno, vals in rows[1:]:
            if vals[1:3] != first[1:3] or vals[3:3 + p] != first[3:3 + p]:
                raise ValidationError(f"{path}:{lineno}: outcome or baseline of subject {sid} differs between visits")
        visit_times = [quantize_time(v[0]) for _, v in rows]
        if len(set(visit_times)) != len(visit_times):
            raise ValidationError(f"{path}: duplicated visit times for subject {sid}")
        history = [(v[0], tuple(v[3 + p:])) for _, v in rows]
        try:
            subjects.append(Subject.create(sid, tuple(first[3:3 + p]), history, first[1], int(first[2])))
        except ValidationError as exc:
            raise ValidationError(f"{path}: rows {rows[0][0]}-{rows[-1][0]}: {exc}") from None
    subjects.sort(key=lambda s: _sort_key(s.id))
    return Dataset(tuple(subjects), p, q)


def _sort_key(sid: str):
    try:
        return (0, float(sid), sid)
    except ValueError:
        return (1, 0.0, sid)


def write_csv(dataset: Dataset, path) -> None:
    """Write the long format, rows sorted by (id, tstart)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "tstart", "tstop", "event"] + _header(dataset.p, dataset.q))
        for r in dataset.long:
            w.writerow([r.id, repr(r.tstart), repr(r.tstop), r.event] + [repr(v) for v in r.covariates])


def save_json(dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset.to_json()))


def load_json(path) -> Dataset:
    return Dataset.from_json(json.loads(Path(path).read_text()))
