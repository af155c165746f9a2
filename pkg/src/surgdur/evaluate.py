"""Metrics, calibration bins, QQ data, booking curves, and the ablation runner.

Point metrics follow the evaluation convention of the distribution heads:
RMSE uses the predictive mean, MAE uses the predictive median (they
coincide for the symmetric families). RMSE/MAE are reported in minutes,
NLL in nats on the hours scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import distributions as dist
from . import special
from . import train as tr
from .exceptions import ConfigError, DomainError

CALIBRATION_BIN_WIDTH_HOURS = 0.05

# Booking knob grids (percentile is unitless; multiplicative is a factor on
# the predicted mean; additive is minutes added to it).
PERCENTILE_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2).tolist())
MULTIPLICATIVE_GRID = tuple(np.round(np.arange(0.6, 1.801, 0.05), 2).tolist())
ADDITIVE_GRID_MINUTES = tuple(float(v) for v in range(-30, 91, 5))

BOOKING_STRATEGIES = ("additive", "multiplicative", "percentile")


def point_prediction(d):
    """(mean for RMSE, median for MAE) of one predictive distribution."""
    return dist.mean(d), dist.median(d)


@dataclass
class Metrics:
    rmse_minutes: float
    mae_minutes: float
    nll_nats: float
    nll_delta_vs_baseline: float | None = None


def metrics(family, params, labels_hours, baseline_nll=None):
    """RMSE/MAE in minutes and mean NLL in nats for (family, params) predictions.

    `nll_delta_vs_baseline` is baseline_nll - nll, positive when this model
    beats the baseline.
    """
    labels_hours = np.asarray(labels_hours, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if len(params) != len(labels_hours):
        raise ConfigError(
            f"got {len(params)} predictions for {len(labels_hours)} labels")
    if len(labels_hours) == 0:
        raise ConfigError("metrics need at least one case")
    mean_h = dist.family_mean(family, params)
    median_h = dist.family_median(family, params)
    rmse = float(np.sqrt(np.mean((mean_h - labels_hours) ** 2)) * 60.0)
    mae = float(np.mean(np.abs(median_h - labels_hours)) * 60.0)
    nll = float(np.mean(dist.family_nll(family, labels_hours, params)))
    delta = None if baseline_nll is None else float(baseline_nll - nll)
    return Metrics(rmse_minutes=rmse, mae_minutes=mae, nll_nats=nll,
                   nll_delta_vs_baseline=delta)


# ---------------------------------------------------------------------------
# Calibration and QQ
# ---------------------------------------------------------------------------

@dataclass
class CalibrationBin:
    sigma_center: float
    mean_abs_error: float
    count: int


def calibration(sigma_hat_hours, abs_error_hours,
                bin_width=CALIBRATION_BIN_WIDTH_HOURS):
    """Mean |error| per sigma-hat bin of fixed width; empty bins omitted."""
    sigma_hat_hours = np.asarray(sigma_hat_hours, dtype=np.float64)
    abs_error_hours = np.asarray(abs_error_hours, dtype=np.float64)
    if sigma_hat_hours.size == 0:
        raise ConfigError("calibration needs at least one case")
    idx = np.floor(sigma_hat_hours / bin_width).astype(np.int64)
    bins = []
    for b in np.unique(idx):
        mask = idx == b
        bins.append(CalibrationBin(
            sigma_center=float((b + 0.5) * bin_width),
            mean_abs_error=float(abs_error_hours[mask].mean()),
            count=int(mask.sum()),
        ))
    return bins


def qq_data(standardized_residuals, family):
    """(theoretical, observed) quantile pairs at plotting positions (i-0.5)/n.

    Residuals must already be standardized by the model's per-case scale
    (sigma for gaussian, b for laplace).
    """
    if family not in ("gaussian", "laplace"):
        raise ConfigError(f"QQ supports gaussian/laplace residuals, got {family!r}")
    r = np.sort(np.asarray(standardized_residuals, dtype=np.float64))
    n = len(r)
    if n == 0:
        raise ConfigError("qq_data needs at least one residual")
    p = (np.arange(1, n + 1) - 0.5) / n
    if family == "gaussian":
        theo = special.probit(p)
    else:
        theo = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    return np.column_stack([theo, r])


# ---------------------------------------------------------------------------
# Booking curves
# ---------------------------------------------------------------------------

@dataclass
class BookingPoint:
    knob: float
    overbooked_minutes: float
    underbooked_minutes: float

    @property
    def total_minutes(self):
        return self.overbooked_minutes + self.underbooked_minutes


def _booked_hours(family, params, strategy, knob):
    if strategy == "percentile":
        return dist.family_quantile(family, params, knob)
    mean_h = dist.family_mean(family, params)
    if strategy == "multiplicative":
        return mean_h * knob
    if strategy == "additive":
        return mean_h + knob / 60.0
    raise ConfigError(f"unknown booking strategy {strategy!r}; "
                      f"expected one of {BOOKING_STRATEGIES}")


def default_knob_grid(strategy):
    return {"percentile": PERCENTILE_GRID,
            "multiplicative": MULTIPLICATIVE_GRID,
            "additive": ADDITIVE_GRID_MINUTES}[strategy]


def booking_curve(family, params, labels_hours, strategy, knob_grid=None):
    """Total over/underbooked minutes for each knob value.

    Percentile booking schedules each case at a fixed quantile of its
    predicted distribution; point models participate through their fitted
    constant scale.
    """
    if knob_grid is None:
        knob_grid = default_knob_grid(strategy)
    labels_hours = np.asarray(labels_hours, dtype=np.float64)
    curve = []
    for knob in knob_grid:
        booked = _booked_hours(family, params, strategy, knob)
        over = float(np.maximum(booked - labels_hours, 0.0).sum() * 60.0)
        under = float(np.maximum(labels_hours - booked, 0.0).sum() * 60.0)
        curve.append(BookingPoint(knob=float(knob), overbooked_minutes=over,
                                  underbooked_minutes=under))
    return curve


def optimal_knob(curve, cost_over=1.0, cost_under=1.0):
    """Knob minimizing cost_over * over + cost_under * under over the grid."""
    if not curve:
        raise ConfigError("empty booking curve")
    costs = [cost_over * p.overbooked_minutes + cost_under * p.underbooked_minutes
             for p in curve]
    return curve[int(np.argmin(costs))].knob


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    group: str
    n_columns: int
    rmse_delta_minutes: float
    mae_delta_minutes: float
    nll_delta_nats: float


def _zero_columns(x, cols):
    out = x.copy()
    out[:, cols] = 0.0
    return out


def ablation(config, train_xy, valid_xy, test_xy, groups):
    """Retrain with each feature group's columns zeroed; report metric deltas.

    Deltas are (ablated - full), so positive means the group was helping.
    Retraining reuses the config (and its seed) of the full model.
    """
    x_train, y_train = train_xy
    x_valid, y_valid = valid_xy
    x_test, y_test = test_xy

    full = tr.train_mlp(config, train_xy, valid_xy)
    family, params = tr.predict_params(full, x=x_test)
    base = metrics(family, params, y_test)

    rows = []
    for group, cols in groups.items():
        ab = tr.train_mlp(
            config,
            (_zero_columns(x_train, cols), y_train),
            (_zero_columns(x_valid, cols), y_valid),
        )
        family, params = tr.predict_params(ab, x=_zero_columns(x_test, cols))
        m = metrics(family, params, y_test)
        rows.append(AblationRow(
            group=group,
            n_columns=len(cols),
            rmse_delta_minutes=m.rmse_minutes - base.rmse_minutes,
            mae_delta_minutes=m.mae_minutes - base.mae_minutes,
            nll_delta_nats=m.nll_nats - base.nll_nats,
        ))
    return base, rows


# ---------------------------------------------------------------------------
# Report assembly and file output
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    model_kind: str
    family: str
    heteroscedastic: bool
    n_cases: int
    metrics: Metrics
    calibration_bins: list[CalibrationBin] = field(default_factory=list)
    qq_pairs: list[tuple[float, float]] = field(default_factory=list)
    booking: dict[str, list[BookingPoint]] = field(default_factory=dict)


def evaluate_model(model, x_test, test_records, y_test, baseline_nll=None,
                   booking_strategies=(), max_qq_points=512):
    """Assemble the full report for one model on the test split."""
    family, params = tr.predict_params(model, x=x_test, records=test_records)
    m = metrics(family, params, y_test, baseline_nll=baseline_nll)

    sigma_hat = dist.family_std(family, params)
    abs_err = np.abs(dist.family_mean(family, params) - y_test)
    bins = calibration(sigma_hat, abs_err)

    qq_pairs = []
    if family in ("gaussian", "laplace"):
        standardized = (y_test - params[:, 0]) / params[:, 1]
        pairs = qq_data(standardized, family)
        if len(pairs) > max_qq_points:
            pick = np.linspace(0, len(pairs) - 1, max_qq_points).astype(int)
            pairs = pairs[pick]
        qq_pairs = [(float(a), float(b)) for a, b in pairs]

    booking = {}
    for strategy in booking_strategies:
        booking[strategy] = booking_curve(family, params, y_test, strategy)

    return EvalReport(model_kind=model.kind, family=family,
                      heteroscedastic=model.heteroscedastic,
                      n_cases=len(y_test), metrics=m,
                      calibration_bins=bins, qq_pairs=qq_pairs, booking=booking)


def report_to_dict(report):
    doc = asdict(report)
    doc["format_version"] = 1
    return doc


def write_report_json(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_calibration_csv(path, bins):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma_center_hours", "mean_abs_error_hours", "count"])
        for b in bins:
            w.writerow([repr(b.sigma_center), repr(b.mean_abs_error), b.count])


def write_qq_csv(path, qq_pairs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theoretical_quantile", "observed_quantile"])
        for theo, obs in qq_pairs:
            w.writerow([repr(theo), repr(obs)])


def write_booking_csv(path, booking):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "knob", "overbooked_minutes", "underbooked_minutes"])
        for strategy in sorted(booking):
            for p in booking[strategy]:
                w.writerow([strategy, repr(p.knob), repr(p.overbooked_minutes),
                            repr(p.underbooked_minutes)])


def write_ablation_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "n_columns", "rmse_delta_minutes",
                    "mae_delta_minutes", "nll_delta_nats"])
        for r in rows:
            w.writerow([r.group, r.n_columns, repr(r.rmse_delta_minutes),
                        repr(r.mae_delta_minutes), repr(r.nll_delta_nats)])


def write_errors_csv(path, record_ids, labels_hours, family, params):
    """Per-case raw errors, for downstream significance testing."""
    mean_h = dist.family_mean(family, params)
    median_h = dist.family_median(family, params)
    nll = dist.family_nll(family, np.asarray(labels_hours), params)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "label_hours", "mean_error_hours",
                    "median_error_hours", "nll_nats"])
        for i, rid in enumerate(record_ids):
            w.writerow([rid, repr(float(labels_hours[i])),
                        repr(float(mean_h[i] - labels_hours[i])),
                        repr(float(median_h[i] - labels_hours[i])),
                        repr(float(nll[i]))])
