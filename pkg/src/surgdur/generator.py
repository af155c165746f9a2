"""Seeded synthetic surgery-log generator.

Stands in for the private EHR corpus. Each case's true duration is drawn
from Gamma(k(x), phi(x)) whose log-shape and log-scale are linear in the
case's latent scores: a per-procedure base log-mean, a per-surgeon speed
offset, and small additive patient/context effects. The conditional
standard deviation ranges over a configurable ratio (`hetero_strength`)
between its floor and `floor * strength`; strength 1 gives a
homoscedastic control corpus.

Scheduled minutes mimic the booking heuristic: the procedure's mean
duration rounded to 15-minute blocks. Day-of-week and month effects are
exactly zero, which gives ablation tests a known-null feature group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Corpus, DAYS_OF_WEEK, MONTHS, SurgeryRecord, TruthRow
from .exceptions import ConfigError
from .features import COMORBIDITY_FLAGS

PATIENT_CLASSES = (
    "Emergency Department Encounter", "Hospital Outpatient Procedure",
    "Hospital Outpatient Surgery", "Hospital Inpatient Surgery",
    "Trauma Inpatient Admission", "Inpatient Admission", "Trauma Outpatient",
)
ASA_LEVELS = ("I", "II", "III", "IV", "V", "VI")
ANESTHESIA_TYPES = ("General", "MAC", "Neuraxial", "No Anesthesiologist", "Other")

_CLASS_PROBS = (0.06, 0.28, 0.30, 0.22, 0.03, 0.09, 0.02)
_ASA_PROBS = (0.18, 0.34, 0.30, 0.13, 0.04, 0.01)
_ANESTHESIA_PROBS = (0.58, 0.22, 0.12, 0.05, 0.03)
_DAY_PROBS = (0.17, 0.17, 0.17, 0.17, 0.20, 0.08, 0.04)
# Case starts cluster in the working day, peaking mid-morning.
_HOUR_WEIGHTS = np.array(
    [0.2, 0.1, 0.1, 0.1, 0.2, 0.5, 2.0, 6.0, 9.0, 10.0, 10.0, 9.0,
     8.0, 7.0, 6.0, 5.0, 4.0, 2.5, 1.5, 1.0, 0.7, 0.5, 0.4, 0.3])

# Comorbidity flags carrying a real duration effect; the rest are noise.
_N_ACTIVE_COMORBIDITIES = 8


@dataclass(frozen=True)
class EffectScales:
    """Magnitudes of the additive log-duration effects."""

    comorbidity_low: float = 0.03
    comorbidity_high: float = 0.12
    asa_step: float = 0.05          # per ASA level above I
    age_per_decade: float = 0.02    # per decade above 50
    sex: float = 0.03
    weight_z: float = 0.02
    height_z: float = 0.01
    class_sd: float = 0.08
    anesthesia_sd: float = 0.06
    location_sd: float = 0.05
    hour_sd: float = 0.02
    day_sd: float = 0.0             # known-null groups for ablation checks
    month_sd: float = 0.0


@dataclass(frozen=True)
class GeneratorConfig:
    n_records: int
    seed: int = 0
    n_procedures: int = 40
    n_surgeons: int = 25
    n_locations: int = 8
    hetero_strength: float = 4.0    # ratio of max to min conditional sigma
    sigma_floor_hours: float = 0.1
    mean_low_hours: float = 0.3
    mean_high_hours: float = 3.5
    zipf_exponent: float = 1.1
    surgeon_log_sd: float = 0.18
    missing_rate: float = 0.05
    disp_mean_weight: float = 0.65  # how much sigma tracks the conditional mean
    effects: EffectScales = field(default_factory=EffectScales)

    def validate(self):
        for name in ("n_records", "n_procedures", "n_surgeons", "n_locations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hetero_strength < 1.0:
            raise ConfigError(
                f"hetero_strength must be >= 1, got {self.hetero_strength}")
        if self.sigma_floor_hours <= 0:
            raise ConfigError("sigma_floor_hours must be positive")
        if not 0.0 < self.mean_low_hours < self.mean_high_hours:
            raise ConfigError("need 0 < mean_low_hours < mean_high_hours")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError(f"missing_rate must be in [0, 1), got {self.missing_rate}")
        if not 0.0 <= self.disp_mean_weight <= 1.0:
            raise ConfigError("disp_mean_weight must be in [0, 1]")


def _zipf_probs(n, exponent):
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def _norm01(v):
    span = v.max() - v.min()
    if span < 1e-12:
        return np.zeros_like(v)
    return (v - v.min()) / span


def generate(config):
    """Build a synthetic corpus plus its ground-truth sidecar, deterministically."""
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_records
    eff = cfg.effects

    # Population latents, drawn once.
    proc_log_mean = rng.uniform(np.log(cfg.mean_low_hours),
                                np.log(cfg.mean_high_hours), cfg.n_procedures)
    proc_dispersion = rng.uniform(0.0, 1.0, cfg.n_procedures)
    proc_probs = _zipf_probs(cfg.n_procedures, cfg.zipf_exponent)
    surgeon_speed = rng.normal(0.0, cfg.surgeon_log_sd, cfg.n_surgeons)
    surgeon_probs = _zipf_probs(cfg.n_surgeons, 0.8)
    location_eff = rng.normal(0.0, eff.location_sd, cfg.n_locations)
    class_eff = rng.normal(0.0, eff.class_sd, len(PATIENT_CLASSES))
    anesthesia_eff = rng.normal(0.0, eff.anesthesia_sd, len(ANESTHESIA_TYPES))
    hour_eff = rng.normal(0.0, eff.hour_sd, 8)
    day_eff = rng.normal(0.0, eff.day_sd, 7)
    month_eff = rng.normal(0.0, eff.month_sd, 12)
    comorb_prev = rng.uniform(0.03, 0.35, len(COMORBIDITY_FLAGS))
    comorb_coef = np.zeros(len(COMORBIDITY_FLAGS))
    comorb_coef[:_N_ACTIVE_COMORBIDITIES] = rng.uniform(
        eff.comorbidity_low, eff.comorbidity_high, _N_ACTIVE_COMORBIDITIES)

    # Per-case raw features.
    proc = rng.choice(cfg.n_procedures, n, p=proc_probs)
    surgeon = rng.choice(cfg.n_surgeons, n, p=surgeon_probs)
    age = np.clip(np.round(rng.normal(55.0, 18.0, n)), 18, 95)
    is_male = rng.random(n) < 0.45
    weight = np.round(np.clip(rng.normal(80.0, 16.0, n), 40, 160), 1)
    height = np.round(np.clip(rng.normal(168.0, 10.0, n), 145, 200), 1)
    hour = rng.choice(24, n, p=_HOUR_WEIGHTS / _HOUR_WEIGHTS.sum()) \
        + rng.integers(0, 60, n) / 60.0
    day = rng.choice(7, n, p=_DAY_PROBS)
    month = rng.choice(12, n)
    location = rng.choice(cfg.n_locations, n, p=_zipf_probs(cfg.n_locations, 0.6))
    pclass = rng.choice(len(PATIENT_CLASSES), n, p=_CLASS_PROBS)
    asa = rng.choice(len(ASA_LEVELS), n, p=_ASA_PROBS)
    anesthesia = rng.choice(len(ANESTHESIA_TYPES), n, p=_ANESTHESIA_PROBS)
    comorb = rng.random((n, len(COMORBIDITY_FLAGS))) < comorb_prev

    weight_z = (weight - 80.0) / 16.0
    height_z = (height - 168.0) / 10.0
    hour_bucket = np.minimum(hour.astype(int) // 3, 7)

    log_mean = (
        proc_log_mean[proc]
        + surgeon_speed[surgeon]
        + comorb @ comorb_coef
        + asa * eff.asa_step
        + (age - 50.0) / 10.0 * eff.age_per_decade
        + is_male * eff.sex
        + weight_z * eff.weight_z
        + height_z * eff.height_z
        + class_eff[pclass]
        + anesthesia_eff[anesthesia]
        + location_eff[location]
        + hour_eff[hour_bucket]
        + day_eff[day]
        + month_eff[month]
    )
    mean_hours = np.exp(log_mean)

    disp_raw = (cfg.disp_mean_weight * _norm01(log_mean)
                + (1.0 - cfg.disp_mean_weight) * proc_dispersion[proc])
    sigma_hours = cfg.sigma_floor_hours * cfg.hetero_strength ** _norm01(disp_raw)

    shape_k = (mean_hours / sigma_hours) ** 2
    scale_phi = sigma_hours**2 / mean_hours
    duration_minutes = rng.gamma(shape_k, scale_phi) * 60.0

    # Booking heuristic: procedure mean duration, rounded to 15-minute blocks.
    sched_by_proc = np.empty(cfg.n_procedures)
    for p in range(cfg.n_procedures):
        cases = proc == p
        proc_mean_min = mean_hours[cases].mean() * 60.0 if cases.any() \
            else np.exp(proc_log_mean[p]) * 60.0
        sched_by_proc[p] = max(15.0, np.round(proc_mean_min / 15.0) * 15.0)
    scheduled = sched_by_proc[proc]

    miss_weight = rng.random(n) < cfg.missing_rate
    miss_height = rng.random(n) < cfg.missing_rate
    miss_hour = rng.random(n) < cfg.missing_rate

    records, truth = [], {}
    for i in range(n):
        comorbidities = {flag: bool(comorb[i, j])
                         for j, flag in enumerate(COMORBIDITY_FLAGS)}
        records.append(SurgeryRecord(
            record_id=i,
            age_years=float(age[i]),
            sex="M" if is_male[i] else "F",
            weight_kg=None if miss_weight[i] else float(weight[i]),
            height_cm=None if miss_height[i] else float(height[i]),
            hour_of_day=None if miss_hour[i] else float(round(hour[i], 4)),
            day_of_week=DAYS_OF_WEEK[day[i]],
            month=MONTHS[month[i]],
            location=f"loc_{location[i]:02d}",
            patient_class=PATIENT_CLASSES[pclass[i]],
            asa=ASA_LEVELS[asa[i]],
            anesthesia=ANESTHESIA_TYPES[anesthesia[i]],
            surgeon_id=f"surg_{surgeon[i]:03d}",
            procedure_id=f"proc_{proc[i]:03d}",
            comorbidities=comorbidities,
            duration_minutes=float(duration_minutes[i]),
            scheduled_minutes=float(scheduled[i]),
        ))
        truth[i] = TruthRow(record_id=i, shape_k=float(shape_k[i]),
                            scale_phi_hours=float(scale_phi[i]))

    provenance = {
        "generator_seed": cfg.seed,
        "n_records": cfg.n_records,
        "hetero_strength": cfg.hetero_strength,
        "n_procedures": cfg.n_procedures,
        "n_surgeons": cfg.n_surgeons,
    }
    return Corpus(records=records, provenance=provenance, truth=truth)
