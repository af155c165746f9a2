"""Surgery-log records: CSV ingestion, duration filtering, and splits.

The corpus CSV has one row per case, UTF-8 with RFC-4180 quoting; an empty
cell means missing. A ground-truth sidecar (written by the generator)
carries the per-record gamma parameters so fitted models can be scored
against the data-generating process.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError
from .features import COMORBIDITY_FLAGS

MIN_DURATION_MINUTES = 5.0
MAX_DURATION_MINUTES = 1440.0

SPLIT_FRACTIONS = (0.80, 0.08, 0.12)

DAYS_OF_WEEK = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday",
                "Saturday", "Sunday")
MONTHS = ("January", "February", "March", "April", "May", "June", "July",
          "August", "September", "October", "November", "December")

DROP_TOO_SHORT = "too_short"
DROP_TOO_LONG = "too_long"


@dataclass
class SurgeryRecord:
    record_id: int
    age_years: float
    sex: str
    weight_kg: float | None
    height_cm: float | None
    hour_of_day: float | None
    day_of_week: str
    month: str
    location: str
    patient_class: str
    asa: str
    anesthesia: str
    surgeon_id: str
    procedure_id: str
    comorbidities: dict[str, bool]
    duration_minutes: float
    scheduled_minutes: float


@dataclass(frozen=True)
class TruthRow:
    """Generator ground truth for one record: Gamma(k, phi) in hours."""
    record_id: int
    shape_k: float
    scale_phi_hours: float

    @property
    def mean_hours(self):
        return self.shape_k * self.scale_phi_hours

    @property
    def sigma_hours(self):
        return np.sqrt(self.shape_k) * self.scale_phi_hours


@dataclass
class Corpus:
    records: list[SurgeryRecord]
    provenance: dict = field(default_factory=dict)
    truth: dict[int, TruthRow] | None = None

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# Filtering and splitting
# ---------------------------------------------------------------------------

@dataclass
class FilterResult:
    kept: list[SurgeryRecord]
    dropped: list[tuple[SurgeryRecord, str]]

    @property
    def drop_tally(self):
        tally = {DROP_TOO_SHORT: 0, DROP_TOO_LONG: 0}
        for _, reason in self.dropped:
            tally[reason] += 1
        return tally


def filter_records(records):
    """Drop implausible durations; boundaries 5 and 1440 minutes are kept."""
    kept, dropped = [], []
    for r in records:
        if r.duration_minutes < MIN_DURATION_MINUTES:
            dropped.append((r, DROP_TOO_SHORT))
        elif r.duration_minutes > MAX_DURATION_MINUTES:
            dropped.append((r, DROP_TOO_LONG))
        else:
            kept.append(r)
    return FilterResult(kept=kept, dropped=dropped)


@dataclass
class Split:
    train: list[SurgeryRecord]
    valid: list[SurgeryRecord]
    test: list[SurgeryRecord]
    seed: int
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS


def split_records(records, seed, fractions=SPLIT_FRACTIONS):
    """Seeded uniform random split, 80/8/12 by default, exact up to rounding."""
    n = len(records)
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * fractions[0])
    n_valid = int(n * fractions[1])
    train_idx = order[:n_train]
    valid_idx = order[n_train:n_train + n_valid]
    test_idx = order[n_train + n_valid:]
    return Split(
        train=[records[i] for i in train_idx],
        valid=[records[i] for i in valid_idx],
        test=[records[i] for i in test_idx],
        seed=int(seed),
        fractions=tuple(fractions),
    )


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "record_id", "age_years", "sex", "weight_kg", "height_cm", "hour_of_day",
    "day_of_week", "month", "location", "patient_class", "asa", "anesthesia",
    "surgeon_id", "procedure_id",
) + COMORBIDITY_FLAGS + ("duration_minutes", "scheduled_minutes")

TRUTH_COLUMNS = ("record_id", "shape_k", "scale_phi_hours", "mean_hours", "sigma_hours")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_corpus_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            row = [r.record_id, r.age_years, r.sex, r.weight_kg, r.height_cm,
                   r.hour_of_day, r.day_of_week, r.month, r.location,
                   r.patient_class, r.asa, r.anesthesia, r.surgeon_id,
                   r.procedure_id]
            row.extend(r.comorbidities[flag] for flag in COMORBIDITY_FLAGS)
            row.extend([r.duration_minutes, r.scheduled_minutes])
            writer.writerow([_fmt(v) for v in row])


def _parse_optional_float(cell):
    return None if cell == "" else float(cell)


def read_corpus_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise DataError(f"unexpected corpus CSV header in {path}")
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"row with {len(row)} cells, expected {len(CSV_COLUMNS)}")
            vals = dict(zip(CSV_COLUMNS, row))
            comorbidities = {flag: vals[flag] == "1" for flag in COMORBIDITY_FLAGS}
            records.append(SurgeryRecord(
                record_id=int(vals["record_id"]),
                age_years=float(vals["age_years"]),
                sex=vals["sex"],
                weight_kg=_parse_optional_float(vals["weight_kg"]),
                height_cm=_parse_optional_float(vals["height_cm"]),
                hour_of_day=_parse_optional_float(vals["hour_of_day"]),
                day_of_week=vals["day_of_week"],
                month=vals["month"],
                location=vals["location"],
                patient_class=vals["patient_class"],
                asa=vals["asa"],
                anesthesia=vals["anesthesia"],
                surgeon_id=vals["surgeon_id"],
                procedure_id=vals["procedure_id"],
                comorbidities=comorbidities,
                duration_minutes=float(vals["duration_minutes"]),
                scheduled_minutes=float(vals["scheduled_minutes"]),
            ))
    return Corpus(records=records, provenance={"source_file": str(path)})


def write_truth_csv(path, truth):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_COLUMNS)
        for rid in sorted(truth):
            t = truth[rid]
            writer.writerow([_fmt(v) for v in
                             (t.record_id, t.shape_k, t.scale_phi_hours,
                              t.mean_hours, t.sigma_hours)])


def read_truth_csv(path):
    truth = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRUTH_COLUMNS:
            raise DataError(f"unexpected truth CSV header in {path}")
        for row in reader:
            t = TruthRow(record_id=int(row[0]), shape_k=float(row[1]),
                         scale_phi_hours=float(row[2]))
            truth[t.record_id] = t
    return truth
