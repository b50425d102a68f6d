"""Engagement-related EEG indexes: FAA, arousal ratio, baseline correction,
per-subject Z-normalization.

FAA is ln(right alpha) − ln(left alpha) with left = mean(TP9, AF7) and
right = mean(AF8, TP10). Positive FAA means relatively greater left-frontal
activation (approach tendency) because alpha power inversely reflects
activation. Arousal is the beta/alpha channel-mean ratio; higher values mean
higher cortical arousal. Task metrics are normalized as plain differences
against the eyes-open baseline; eyes-closed baselines are carried along for
descriptive export only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateSpreadError,
    NonPositivePowerError,
    SubjectMismatchError,
    ZeroAlphaError,
)
from .labels import ConditionLabel, label_to_str
from .spectral import BAND_NAMES, BandPowerTable, relative_band_fraction


def faa(alpha_tp9: float, alpha_af7: float, alpha_af8: float, alpha_tp10: float) -> float:
    """Frontal alpha asymmetry: ln(mean(AF8, TP10)) − ln(mean(TP9, AF7))."""
    for name, v in (("TP9", alpha_tp9), ("AF7", alpha_af7),
                    ("AF8", alpha_af8), ("TP10", alpha_tp10)):
        if not v > 0:
            raise NonPositivePowerError(f"alpha power for {name} must be > 0, got {v}")
    left = (alpha_tp9 + alpha_af7) / 2.0
    right = (alpha_af8 + alpha_tp10) / 2.0
    return math.log(right) - math.log(left)


def faa_orientation(value: float) -> str:
    """Reporting label for an FAA value's sign."""
    if value > 0:
        return "relatively greater left-frontal activation (approach tendency)"
    if value < 0:
        return "relatively greater right-frontal activation (avoidance tendency)"
    return "balanced frontal activation"


def arousal(beta_mean: float, alpha_mean: float) -> float:
    """Beta-to-alpha power ratio; higher values indicate higher cortical arousal."""
    if alpha_mean <= 0:
        raise ZeroAlphaError(f"alpha mean power must be > 0, got {alpha_mean}")
    if beta_mean < 0:
        raise NonPositivePowerError(f"beta mean power must be ≥ 0, got {beta_mean}")
    return beta_mean / alpha_mean


def baseline_correct(
    task_value: float,
    eo_value: float,
    task_subject: Optional[str] = None,
    eo_subject: Optional[str] = None,
) -> float:
    """Task value minus the eyes-open baseline value (same subject)."""
    if task_subject is not None and eo_subject is not None and task_subject != eo_subject:
        raise SubjectMismatchError(
            f"task value from {task_subject!r} but baseline from {eo_subject!r}"
        )
    return task_value - eo_value


def zscore_within_subject(values: Sequence[float]) -> list[float]:
    """Standardize one subject's values: (v − mean) / sample std (ddof=1)."""
    arr = np.asarray(values, dtype=np.float64)
    if len(arr) < 2:
        raise DegenerateSpreadError(f"need ≥ 2 values, got {len(arr)}")
    std = arr.std(ddof=1)
    if std == 0:
        raise DegenerateSpreadError("zero spread; Z-scores undefined")
    return list((arr - arr.mean()) / std)


def zscore_grouped(values: Sequence[float], subjects: Sequence[str]) -> list[float]:
    """Z-normalize values independently within each subject's group."""
    if len(values) != len(subjects):
        raise ValueError("values and subjects must align")
    out = [0.0] * len(values)
    by_subject: dict[str, list[int]] = {}
    for i, s in enumerate(subjects):
        by_subject.setdefault(s, []).append(i)
    for s, idxs in by_subject.items():
        z = zscore_within_subject([values[i] for i in idxs])
        for i, v in zip(idxs, z):
            out[i] = v
    return out


@dataclass
class BaselineRecord:
    """A participant's resting reference: eyes-open powers plus derived indexes.

    The eyes-closed table, when recorded, is retained for descriptive
    comparisons and feeds no normalized metric.
    """

    subject_id: str
    eo: BandPowerTable
    ec: Optional[BandPowerTable] = None
    eo_faa: float = field(init=False)
    eo_arousal: float = field(init=False)

    def __post_init__(self):
        self.eo_faa = faa(*(self.eo.per_channel[:, 2]))
        self.eo_arousal = arousal(self.eo.power("beta"), self.eo.power("alpha"))


@dataclass
class EngagementRecord:
    """All engagement metrics for one accepted segment of one participant.

    band_corrected_z stays NaN until the per-subject Z pass fills it.
    """

    subject_id: str
    condition: ConditionLabel
    segment_id: str
    faa: float
    faa_minus_eo: float
    arousal: float
    arousal_minus_eo: float
    band_corrected: dict[str, float]
    alpha_fraction: float
    band_corrected_z: dict[str, float] = field(
        default_factory=lambda: {b: float("nan") for b in BAND_NAMES}
    )

    CSV_COLUMNS = (
        ["subject_id", "condition", "block", "segment_id",
         "FAA", "FAA_Minus_EO", "Arousal_Index", "Arousal_Minus_EO"]
        + [f"{b.capitalize()}_Mean_Corrected" for b in BAND_NAMES]
        + [f"{b.capitalize()}_Mean_Corrected_Z" for b in BAND_NAMES]
        + ["Alpha_Fraction"]
    )

    def csv_row(self) -> list:
        row: list = [
            self.subject_id,
            label_to_str(self.condition),
            self.condition.block,
            self.segment_id,
            self.faa,
            self.faa_minus_eo,
            self.arousal,
            self.arousal_minus_eo,
        ]
        row.extend(self.band_corrected[b] for b in BAND_NAMES)
        row.extend(self.band_corrected_z[b] for b in BAND_NAMES)
        row.append(self.alpha_fraction)
        return row

    def metric(self, column: str) -> float:
        """Look a metric up by its CSV column name."""
        simple = {
            "FAA": self.faa,
            "FAA_Minus_EO": self.faa_minus_eo,
            "Arousal_Index": self.arousal,
            "Arousal_Minus_EO": self.arousal_minus_eo,
            "Alpha_Fraction": self.alpha_fraction,
        }
        if column in simple:
            return simple[column]
        for b in BAND_NAMES:
            if column == f"{b.capitalize()}_Mean_Corrected":
                return self.band_corrected[b]
            if column == f"{b.capitalize()}_Mean_Corrected_Z":
                return self.band_corrected_z[b]
        raise KeyError(f"unknown metric column {column!r}")


def build_engagement_record(
    table: BandPowerTable,
    baseline: BaselineRecord,
    condition: ConditionLabel,
    subject_id: str,
    segment_id: str = "",
) -> EngagementRecord:
    """Compose FAA, arousal, EO-corrected metrics and the alpha fraction.

    The per-subject Z columns are left for a later pass over the subject's
    complete record set.
    """
    if subject_id != baseline.subject_id:
        raise SubjectMismatchError(
            f"table for {subject_id!r} but baseline for {baseline.subject_id!r}"
        )
    seg_faa = faa(*(table.per_channel[:, 2]))
    seg_arousal = arousal(table.power("beta"), table.power("alpha"))
    corrected = {
        b: baseline_correct(table.power(b), baseline.eo.power(b),
                            subject_id, baseline.subject_id)
        for b in BAND_NAMES
    }
    return EngagementRecord(
        subject_id=subject_id,
        condition=condition,
        segment_id=segment_id or table.segment_id,
        faa=seg_faa,
        faa_minus_eo=baseline_correct(seg_faa, baseline.eo_faa),
        arousal=seg_arousal,
        arousal_minus_eo=baseline_correct(seg_arousal, baseline.eo_arousal),
        band_corrected=corrected,
        alpha_fraction=relative_band_fraction(table, "alpha"),
    )


def fill_z_scores(records: Sequence[EngagementRecord]) -> list[str]:
    """Per-subject Z pass over each band's corrected values, in place.

    Returns a list of "subject/band" tags whose Z-scores stayed NaN because
    the subject had fewer than two records or zero spread for that band.
    """
    degenerate = []
    by_subject: dict[str, list[EngagementRecord]] = {}
    for r in records:
        by_subject.setdefault(r.subject_id, []).append(r)
    for subject, recs in by_subject.items():
        for b in BAND_NAMES:
            try:
                z = zscore_within_subject([r.band_corrected[b] for r in recs])
            except DegenerateSpreadError:
                degenerate.append(f"{subject}/{b}")
                continue
            for r, v in zip(recs, z):
                r.band_corrected_z[b] = v
    return degenerate
