"""Deterministic encoding of surgery records into dense feature vectors.

The schema is declarative: `SURGERY_FIELDS` lists every raw column with its
encoding kind, and `fit_schema` attaches the trainable pieces (z-score
stats, category vocabularies) computed on the training split only. Missing
numeric/binned values encode as zeros plus a missing-indicator column;
categories unseen at fit time land in a reserved "unknown" slot, so
`encode` is total.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, SchemaError

SCHEMA_FORMAT_VERSION = 1

KIND_NUMERIC = "numeric"        # z-scored
KIND_BINARY = "binary"          # single 0/1 column
KIND_CATEGORICAL = "categorical"  # one-hot over fitted vocabulary + unknown
KIND_BINNED = "binned"          # numeric bucketed into a fixed one-hot


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    attr: str                       # record attribute; "comorbidity:<flag>" digs into the dict
    group: str
    missing_indicator: bool = False
    bin_edges: tuple[float, ...] | None = None
    right_closed: bool = True       # binned: (a, b] when True, [a, b) when False
    bin_labels: tuple[str, ...] | None = None


def _age_labels(edges):
    return tuple(f"({int(a)},{int(b)}]" for a, b in zip(edges[:-1], edges[1:]))


def _hour_labels(edges):
    return tuple(f"{int(a):02d}:00-{int(b):02d}:00" for a, b in zip(edges[:-1], edges[1:]))


_AGE_EDGES = tuple(float(v) for v in range(0, 100, 10))        # 9 ten-year bins
_HOUR_EDGES = tuple(float(v) for v in range(0, 25, 3))         # 8 three-hour bins

COMORBIDITY_FLAGS = (
    "smoker", "afib", "ckd", "chf", "cad", "diabetes", "htn",
    "cirrhosis", "osa", "cardiac_device", "dialysis", "asthma",
    "dementia", "cognitive",
)

SURGERY_FIELDS = (
    FieldSpec("age", KIND_BINNED, "age_years", "age",
              bin_edges=_AGE_EDGES, right_closed=True, bin_labels=_age_labels(_AGE_EDGES)),
    FieldSpec("sex", KIND_BINARY, "sex", "sex"),
    FieldSpec("weight", KIND_NUMERIC, "weight_kg", "weight", missing_indicator=True),
    FieldSpec("height", KIND_NUMERIC, "height_cm", "height", missing_indicator=True),
    FieldSpec("hour", KIND_BINNED, "hour_of_day", "hour", missing_indicator=True,
              bin_edges=_HOUR_EDGES, right_closed=False, bin_labels=_hour_labels(_HOUR_EDGES)),
    FieldSpec("day", KIND_CATEGORICAL, "day_of_week", "day"),
    FieldSpec("month", KIND_CATEGORICAL, "month", "month"),
    FieldSpec("location", KIND_CATEGORICAL, "location", "location"),
    FieldSpec("class", KIND_CATEGORICAL, "patient_class", "class"),
    FieldSpec("asa", KIND_CATEGORICAL, "asa", "asa"),
    FieldSpec("anesthesia", KIND_CATEGORICAL, "anesthesia", "anesthesia"),
    FieldSpec("surgeon", KIND_CATEGORICAL, "surgeon_id", "surgeon"),
    FieldSpec("procedure", KIND_CATEGORICAL, "procedure_id", "procedure"),
) + tuple(
    FieldSpec(flag, KIND_BINARY, f"comorbidity:{flag}", "comorbidities")
    for flag in COMORBIDITY_FLAGS
)

FEATURE_GROUPS = tuple(dict.fromkeys(f.group for f in SURGERY_FIELDS))


def _get_value(record, attr):
    if attr.startswith("comorbidity:"):
        return record.comorbidities[attr.split(":", 1)[1]]
    return getattr(record, attr)


@dataclass
class FittedField:
    spec: FieldSpec
    vocab: list | None = None       # binary / categorical
    mean: float | None = None       # numeric
    std: float | None = None

    @property
    def width(self):
        kind = self.spec.kind
        if kind in (KIND_NUMERIC, KIND_BINARY):
            base = 1
        elif kind == KIND_CATEGORICAL:
            base = len(self.vocab) + 1          # + unknown slot
        else:
            base = len(self.spec.bin_edges) - 1
        return base + (1 if self.spec.missing_indicator else 0)


@dataclass
class FeatureSchema:
    fields: list[FittedField]
    min_category_count: int = 1
    _offsets: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._offsets:
            off = 0
            for f in self.fields:
                self._offsets.append(off)
                off += f.width

    @property
    def width(self):
        return self._offsets[-1] + self.fields[-1].width if self.fields else 0


def fit_schema(train_records, specs=SURGERY_FIELDS, min_category_count=1):
    """Fit vocabularies and z-score statistics on the training split.

    Numeric stats ignore missing values. Categories occurring fewer than
    `min_category_count` times are not given a slot (they encode as
    "unknown"), which is the knob for pruning rare surgeons/procedures.
    """
    if not train_records:
        raise SchemaError("cannot fit a schema on an empty training set")
    if min_category_count < 1:
        raise ConfigError(f"min_category_count must be >= 1, got {min_category_count}")

    fitted = []
    for spec in specs:
        values = [_get_value(r, spec.attr) for r in train_records]
        if spec.kind == KIND_NUMERIC:
            present = np.asarray([v for v in values if v is not None], dtype=np.float64)
            if present.size == 0:
                raise SchemaError(f"numeric field {spec.name!r} has no observed values")
            mean = float(present.mean())
            std = float(present.std())
            if std == 0.0:
                raise SchemaError(f"numeric field {spec.name!r} has zero variance")
            fitted.append(FittedField(spec, mean=mean, std=std))
        elif spec.kind == KIND_BINARY:
            vocab = sorted({v for v in values if v is not None}, key=str)
            if len(vocab) > 2:
                raise SchemaError(
                    f"binary field {spec.name!r} has {len(vocab)} distinct values")
            fitted.append(FittedField(spec, vocab=vocab))
        elif spec.kind == KIND_CATEGORICAL:
            counts = {}
            for v in values:
                if v is not None:
                    counts[v] = counts.get(v, 0) + 1
            vocab = sorted(v for v, c in counts.items() if c >= min_category_count)
            fitted.append(FittedField(spec, vocab=vocab))
        elif spec.kind == KIND_BINNED:
            fitted.append(FittedField(spec))
        else:
            raise ConfigError(f"unknown field kind {spec.kind!r}")
    return FeatureSchema(fields=fitted, min_category_count=min_category_count)


def _bin_index(spec, value):
    edges = spec.bin_edges
    if spec.right_closed:
        idx = int(np.searchsorted(edges, value, side="left")) - 1
    else:
        idx = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(idx, 0), len(edges) - 2)


def encode(schema, record):
    """Encode one record into a dense float64 vector of schema.width."""
    x = np.zeros(schema.width)
    for f, off in zip(schema.fields, schema._offsets):
        spec = f.spec
        value = _get_value(record, spec.attr)
        if spec.kind == KIND_NUMERIC:
            if value is None:
                x[off + 1] = 1.0
            else:
                x[off] = (float(value) - f.mean) / f.std
        elif spec.kind == KIND_BINARY:
            if value is not None and len(f.vocab) == 2 and value == f.vocab[1]:
                x[off] = 1.0
        elif spec.kind == KIND_CATEGORICAL:
            try:
                idx = f.vocab.index(value) if value is not None else len(f.vocab)
            except ValueError:
                idx = len(f.vocab)
            x[off + idx] = 1.0
        else:  # binned
            if value is None:
                x[off + len(spec.bin_edges) - 1] = 1.0
            else:
                x[off + _bin_index(spec, float(value))] = 1.0
    return x


@dataclass(frozen=True)
class EncodedExample:
    features: np.ndarray
    label_hours: float
    record_id: int


def encode_example(schema, record):
    return EncodedExample(features=encode(schema, record),
                          label_hours=record.duration_minutes / 60.0,
                          record_id=record.record_id)


def encode_matrix(schema, records):
    """Encode many records; returns (X, y_hours)."""
    x = np.zeros((len(records), schema.width))
    y = np.empty(len(records))
    for i, r in enumerate(records):
        x[i] = encode(schema, r)
        y[i] = r.duration_minutes / 60.0
    return x, y


def feature_names(schema):
    names = []
    for f in schema.fields:
        spec = f.spec
        if spec.kind == KIND_NUMERIC:
            names.append(spec.name)
        elif spec.kind == KIND_BINARY:
            names.append(spec.name)
        elif spec.kind == KIND_CATEGORICAL:
            names.extend(f"{spec.name}={v}" for v in f.vocab)
            names.append(f"{spec.name}=<unknown>")
        else:
            labels = spec.bin_labels or [str(i) for i in range(len(spec.bin_edges) - 1)]
            names.extend(f"{spec.name}={lab}" for lab in labels)
        if spec.missing_indicator:
            names.append(f"{spec.name}_missing")
    return names


def feature_groups(schema):
    """Named column groups; a disjoint, exhaustive partition of the columns."""
    groups = {g: [] for g in dict.fromkeys(f.spec.group for f in schema.fields)}
    for f, off in zip(schema.fields, schema._offsets):
        groups[f.spec.group].extend(range(off, off + f.width))
    return {g: np.asarray(cols, dtype=np.intp) for g, cols in groups.items()}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def schema_to_dict(schema):
    return {
        "format_version": SCHEMA_FORMAT_VERSION,
        "min_category_count": schema.min_category_count,
        "fields": [
            {
                "name": f.spec.name,
                "kind": f.spec.kind,
                "attr": f.spec.attr,
                "group": f.spec.group,
                "missing_indicator": f.spec.missing_indicator,
                "bin_edges": list(f.spec.bin_edges) if f.spec.bin_edges else None,
                "right_closed": f.spec.right_closed,
                "bin_labels": list(f.spec.bin_labels) if f.spec.bin_labels else None,
                "vocab": f.vocab,
                "mean": f.mean,
                "std": f.std,
            }
            for f in schema.fields
        ],
    }


def schema_from_dict(doc):
    if doc.get("format_version") != SCHEMA_FORMAT_VERSION:
        raise ConfigError(f"unsupported schema format_version {doc.get('format_version')!r}")
    fields = []
    for d in doc["fields"]:
        spec = FieldSpec(
            name=d["name"], kind=d["kind"], attr=d["attr"], group=d["group"],
            missing_indicator=d["missing_indicator"],
            bin_edges=tuple(d["bin_edges"]) if d["bin_edges"] else None,
            right_closed=d["right_closed"],
            bin_labels=tuple(d["bin_labels"]) if d["bin_labels"] else None,
        )
        fields.append(FittedField(spec, vocab=d["vocab"], mean=d["mean"], std=d["std"]))
    return FeatureSchema(fields=fields, min_category_count=doc["min_category_count"])


def schema_hash(schema):
    text = json.dumps(schema_to_dict(schema), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()
