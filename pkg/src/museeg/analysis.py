"""Offline analysis: load a recorded session, segment by event marks, run
preprocess → artifact gating → ICA → band powers → engagement records →
per-subject Z pass, then the modality contrast family.

The contrast unit defaults to the per-subject modality aggregate (mean over
that subject's accepted blocks); per-block records are also emitted. The
contrast family mirrors the study design: between subjects, the
EO-corrected arousal index (Welch) and relative alpha fraction
(Mann-Whitney) for display vs immersive; within subjects vs original
artwork, baseline-corrected alpha and gamma plus Z-scored theta, alpha and
delta (paired t); FAA is tested both ways and labeled
"no reliable modulation" when p ≥ 0.05.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .artifacts import (
    apply_ica,
    combine_and_validate,
    flag_amplitude,
    flag_device,
    flag_gradient,
    flag_movement,
    run_ica,
)
from .engagement import (
    BaselineRecord,
    EngagementRecord,
    build_engagement_record,
    fill_z_scores,
)
from .errors import (
    EmptySessionError,
    IcaConvergenceError,
    InsufficientCellError,
    MissingAccelStreamError,
    MissingBaselineError,
    TooFewValidSamplesError,
    TooShortInputError,
)
from .filters import preprocess
from .frames import SampleFrame, Segment, build_segments
from .labels import Baseline, ConditionLabel, Modality, label_to_str, parse_label
from .recorder import SessionManifest, load_manifest, read_stream_csv, stream_id
from .session import GROUP_MODALITY
from .spectral import BAND_NAMES, BandPowerTable, segment_band_powers
from .stats import TestResult, mann_whitney_u, paired_t, welch_t

logger = logging.getLogger(__name__)

MIN_SEGMENT_SECONDS = 4.0
MIN_ICA_SAMPLES = 512
ACCEL_ATTACH_MAX_AGE_S = 0.5
SIGNIFICANCE_ALPHA = 0.05


@dataclass
class SegmentWindow:
    t_start: float
    t_end: float
    label: object
    participant: Optional[str] = None  # None = applies to all


def windows_from_events(event_rows: Sequence[Sequence[str]]) -> list[SegmentWindow]:
    """Pair block_start/block_end event rows into labeled time windows."""
    windows = []
    open_blocks: dict[tuple, tuple] = {}
    for row in event_rows:
        t_ref, participant, etype, label = float(row[0]), row[1] or None, row[2], row[3]
        key = (participant, label)
        if etype == "block_start":
            open_blocks[key] = (t_ref, parse_label(label))
        elif etype == "block_end" and key in open_blocks:
            t0, parsed = open_blocks.pop(key)
            windows.append(SegmentWindow(t0, t_ref, parsed, participant))
    return windows


def _load_eeg_frames(
    manifest: SessionManifest, participant: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(t_ref, eeg(n,4), quality(n,4), accel_t, accel_mag) for one participant."""
    import pandas as pd

    eeg_path = manifest.path_for(stream_id(participant, "eeg"))
    if not eeg_path.exists():
        raise FileNotFoundError(f"stream file missing: {eeg_path}")
    df = pd.read_csv(eeg_path)
    t = df["t_ref"].to_numpy(dtype=np.float64)
    eeg = df[["tp9", "af7", "af8", "tp10"]].to_numpy(dtype=np.float64)
    quality = df[["q_tp9", "q_af7", "q_af8", "q_tp10"]].to_numpy(dtype=np.float64) > 0.5

    acc_sid = stream_id(participant, "acc")
    accel_t = np.empty(0)
    accel_mag = np.empty(0)
    if acc_sid in manifest.stream_files and manifest.path_for(acc_sid).exists():
        adf = pd.read_csv(manifest.path_for(acc_sid))
        if len(adf):
            accel_t = adf["t_ref"].to_numpy(dtype=np.float64)
            accel_mag = adf["mag"].to_numpy(dtype=np.float64)
    return t, eeg, quality, accel_t, accel_mag


def _frames_for_window(
    t: np.ndarray,
    eeg: np.ndarray,
    quality: np.ndarray,
    accel_t: np.ndarray,
    accel_mag: np.ndarray,
    window: SegmentWindow,
) -> list[SampleFrame]:
    sel = (t >= window.t_start) & (t < window.t_end)
    idx = np.nonzero(sel)[0]
    if len(idx) == 0:
        return []
    # nearest preceding accel sample, capped by staleness
    accel_for: Optional[np.ndarray] = None
    if len(accel_t):
        pos = np.searchsorted(accel_t, t[idx], side="right") - 1
        accel_for = np.full(len(idx), np.nan)
        have = pos >= 0
        ages = np.where(have, t[idx] - accel_t[np.clip(pos, 0, None)], np.inf)
        usable = have & (ages <= ACCEL_ATTACH_MAX_AGE_S)
        accel_for[usable] = accel_mag[pos[usable]]
    frames = []
    for j, i in enumerate(idx):
        mag = None
        if accel_for is not None and not math.isnan(accel_for[j]):
            mag = float(accel_for[j])
        frames.append(
            SampleFrame(
                t_ref=float(t[i]),
                eeg=tuple(float(v) for v in eeg[i]),
                device_quality=tuple(bool(q) for q in quality[i]),
                accel_mag=mag,
            )
        )
    return frames


@dataclass
class AnalysisResult:
    records: list[EngagementRecord]
    aggregates: list[EngagementRecord]
    baselines: dict[str, BaselineRecord]
    rejections: list[dict]
    log: list[dict]
    segments_total: int = 0
    segments_accepted: int = 0


def _mean_table(tables: list[BandPowerTable], segment_id: str) -> BandPowerTable:
    stacked = np.stack([t.per_channel for t in tables])
    return BandPowerTable(
        per_channel=stacked.mean(axis=0),
        segment_id=segment_id,
        valid_sample_count=sum(t.valid_sample_count for t in tables),
    )


def analyze_session(
    manifest: Union[SessionManifest, str, Path],
    ica_seed: int = 0,
    use_ica: bool = True,
    min_segment_s: float = MIN_SEGMENT_SECONDS,
) -> AnalysisResult:
    """Run the full offline pipeline over a finalized recorded session."""
    if not isinstance(manifest, SessionManifest):
        manifest = load_manifest(manifest)
    if not manifest.finalized:
        raise EmptySessionError(
            "manifest is not finalized (partial recording?); refusing to analyze"
        )
    events_path = Path(manifest.out_dir) / manifest.events_file
    if not events_path.exists():
        raise FileNotFoundError(f"events file missing: {events_path}")
    _, event_rows = read_stream_csv(events_path)
    windows = windows_from_events(event_rows)
    if not windows:
        raise EmptySessionError("no labeled block windows in the events file")

    fs = manifest.sample_rate
    log: list[dict] = []
    rejections: list[dict] = []
    tables: list[tuple[str, object, BandPowerTable]] = []  # (participant, label, table)
    segments_total = 0
    segments_accepted = 0

    for p in manifest.participants:
        pid = p["id"]
        t, eeg, quality, accel_t, accel_mag = _load_eeg_frames(manifest, pid)
        for window in windows:
            if window.participant is not None and window.participant != pid:
                continue
            frames = _frames_for_window(t, eeg, quality, accel_t, accel_mag, window)
            segments = build_segments(frames, fs, label=window.label,
                                      min_duration=min_segment_s)
            for k, seg in enumerate(segments):
                segments_total += 1
                seg_id = f"{pid}:{label_to_str(window.label)}:{window.t_start:.3f}:{k}"
                outcome = _process_segment(seg, seg_id, ica_seed, use_ica, log)
                if outcome is None:
                    rejections.append(log[-1])
                    continue
                segments_accepted += 1
                table = outcome
                table.segment_id = seg_id
                tables.append((pid, window.label, table))

    if not tables:
        raise EmptySessionError("no segments survived artifact gating")

    # eyes-open baselines per participant
    baselines: dict[str, BaselineRecord] = {}
    for p in manifest.participants:
        pid = p["id"]
        eo = [tbl for who, label, tbl in tables if who == pid and label is Baseline.EO]
        if not eo:
            raise MissingBaselineError(f"participant {pid}: no accepted EO baseline")
        ec = [tbl for who, label, tbl in tables if who == pid and label is Baseline.EC]
        baselines[pid] = BaselineRecord(
            subject_id=pid,
            eo=_mean_table(eo, f"{pid}:EO"),
            ec=_mean_table(ec, f"{pid}:EC") if ec else None,
        )

    records: list[EngagementRecord] = []
    for pid, label, table in tables:
        if not isinstance(label, ConditionLabel):
            continue
        records.append(
            build_engagement_record(table, baselines[pid], label, pid,
                                    segment_id=table.segment_id)
        )
    degenerate = fill_z_scores(records)
    for tag in degenerate:
        log.append({"event": "z_degenerate", "subject_metric": tag})

    # per-subject modality aggregates (mean table, mean z)
    aggregates: list[EngagementRecord] = []
    by_subject_modality: dict[tuple, list[EngagementRecord]] = {}
    table_by_segment = {tbl.segment_id: tbl for _, _, tbl in tables}
    for r in records:
        by_subject_modality.setdefault((r.subject_id, r.condition.modality), []).append(r)
    for (pid, modality), recs in sorted(by_subject_modality.items(),
                                        key=lambda kv: (kv[0][0], kv[0][1].value)):
        agg_table = _mean_table(
            [table_by_segment[r.segment_id] for r in recs], f"{pid}:{modality.value}:agg"
        )
        agg = build_engagement_record(
            agg_table,
            baselines[pid],
            ConditionLabel(modality, 1),
            pid,
            segment_id=agg_table.segment_id,
        )
        for b in BAND_NAMES:
            zs = [r.band_corrected_z[b] for r in recs
                  if not math.isnan(r.band_corrected_z[b])]
            agg.band_corrected_z[b] = float(np.mean(zs)) if zs else float("nan")
        aggregates.append(agg)

    return AnalysisResult(
        records=records,
        aggregates=aggregates,
        baselines=baselines,
        rejections=rejections,
        log=log,
        segments_total=segments_total,
        segments_accepted=segments_accepted,
    )


def _process_segment(seg: Segment, seg_id: str, ica_seed: int, use_ica: bool,
                     log: list[dict]) -> Optional[BandPowerTable]:
    """One segment through the gate; None means rejected (reason logged)."""
    try:
        clean = preprocess(seg)
    except TooShortInputError as exc:
        log.append({"event": "rejected", "segment_id": seg_id, "criterion": "too_short",
                    "detail": str(exc)})
        return None
    masks = [flag_device(clean), flag_amplitude(clean), flag_gradient(clean)]
    try:
        masks.append(flag_movement(clean))
    except MissingAccelStreamError:
        log.append({"event": "movement_skipped", "segment_id": seg_id,
                    "detail": "accel coverage below 90%"})
    validation = combine_and_validate(masks)
    if not validation.accepted:
        log.append({
            "event": "rejected",
            "segment_id": seg_id,
            "criterion": "min_valid_samples",
            "valid_samples": validation.valid_sample_count,
            "reason_counts": validation.reason_counts(),
        })
        return None
    if use_ica and len(clean) >= MIN_ICA_SAMPLES:
        try:
            ica = run_ica(clean, seed=ica_seed)
            if ica.removed:
                log.append({
                    "event": "ica_removed",
                    "segment_id": seg_id,
                    "components": sorted(ica.removed),
                    "rationale": {str(k): v for k, v in ica.rationale.items()},
                })
                clean = apply_ica(clean, ica)
        except IcaConvergenceError as exc:
            log.append({"event": "ica_nonconvergence", "segment_id": seg_id,
                        "detail": str(exc)})
    try:
        return segment_band_powers(clean, validation.mask.valid, segment_id=seg_id)
    except TooFewValidSamplesError as exc:
        log.append({"event": "rejected", "segment_id": seg_id,
                    "criterion": "too_few_valid_for_power", "detail": str(exc)})
        return None


# -- records CSV --------------------------------------------------------------


def write_records_csv(records: Sequence[EngagementRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EngagementRecord.CSV_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())


def load_records_csv(path: Union[str, Path]) -> list[EngagementRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            label = parse_label(row["condition"])
            rec = EngagementRecord(
                subject_id=row["subject_id"],
                condition=label,
                segment_id=row["segment_id"],
                faa=float(row["FAA"]),
                faa_minus_eo=float(row["FAA_Minus_EO"]),
                arousal=float(row["Arousal_Index"]),
                arousal_minus_eo=float(row["Arousal_Minus_EO"]),
                band_corrected={
                    b: float(row[f"{b.capitalize()}_Mean_Corrected"]) for b in BAND_NAMES
                },
                alpha_fraction=float(row["Alpha_Fraction"]),
            )
            for b in BAND_NAMES:
                raw = row[f"{b.capitalize()}_Mean_Corrected_Z"]
                rec.band_corrected_z[b] = float(raw) if raw not in ("", "nan") else float("nan")
            records.append(rec)
    return records


# -- contrasts -----------------------------------------------------------------


WITHIN_SUBJECT_METRICS = (
    "Alpha_Mean_Corrected",
    "Gamma_Mean_Corrected",
    "Theta_Mean_Corrected_Z",
    "Alpha_Mean_Corrected_Z",
    "Delta_Mean_Corrected_Z",
    "FAA_Minus_EO",
)

_MODALITY_SHORT = {
    Modality.ORIGINAL_ARTWORK: "artwork",
    Modality.IMMERSIVE_PROJECTION: "immersive",
    Modality.DISPLAY_VIDEO: "display",
}


def _subject_metric(records, subject, modality, column) -> Optional[float]:
    for r in records:
        if r.subject_id == subject and r.condition.modality is modality:
            v = r.metric(column)
            return None if (v is None or math.isnan(v)) else v
    return None


def compare_modalities(
    records: Sequence[EngagementRecord],
    alpha: float = SIGNIFICANCE_ALPHA,
) -> dict:
    """Run the study's contrast family over subject-level modality records.

    `records` should be one record per subject per modality (the aggregates
    from analyze_session, or any records table with that shape).
    """
    subjects_by_modality: dict[Modality, set] = {}
    for r in records:
        subjects_by_modality.setdefault(r.condition.modality, set()).add(r.subject_id)
    display = sorted(subjects_by_modality.get(Modality.DISPLAY_VIDEO, set()))
    immersive = sorted(subjects_by_modality.get(Modality.IMMERSIVE_PROJECTION, set()))

    contrasts: list[dict] = []
    notes: list[str] = []

    def cell_values(subjects, modality, column):
        vals = []
        for s in subjects:
            v = _subject_metric(records, s, modality, column)
            if v is not None:
                vals.append(v)
        return vals

    def run_between(name, column, method):
        a = cell_values(display, Modality.DISPLAY_VIDEO, column)
        b = cell_values(immersive, Modality.IMMERSIVE_PROJECTION, column)
        if len(a) < 2 or len(b) < 2:
            raise InsufficientCellError(
                f"contrast {name!r}: cells display={len(a)}, immersive={len(b)}"
            )
        result = method(a, b)
        contrasts.append(_entry(name, column, result, alpha,
                                group_a="display", group_b="immersive"))

    def run_within(group_name, modality, subjects, column):
        pairs = []
        for s in subjects:
            task = _subject_metric(records, s, modality, column)
            woa = _subject_metric(records, s, Modality.ORIGINAL_ARTWORK, column)
            if task is not None and woa is not None:
                pairs.append((task, woa))
        name = f"{column.lower()}_{_MODALITY_SHORT[modality]}_vs_artwork"
        if len(pairs) < 2:
            raise InsufficientCellError(
                f"contrast {name!r}: only {len(pairs)} complete pairs"
            )
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
        try:
            result = paired_t(a, b)
        except Exception as exc:
            contrasts.append({
                "name": name, "metric_column": column, "method": "paired",
                "group_a": _MODALITY_SHORT[modality], "group_b": "artwork",
                "error": str(exc),
            })
            return
        if len(pairs) < 6:
            notes.append(
                f"{name}: n={len(pairs)} pairs; paired t reported "
                "(signed-rank alternative out of scope)"
            )
        contrasts.append(_entry(name, column, result, alpha,
                                group_a=_MODALITY_SHORT[modality], group_b="artwork"))

    run_between("arousal_display_vs_immersive", "Arousal_Minus_EO", welch_t)
    run_between("alpha_fraction_display_vs_immersive", "Alpha_Fraction", mann_whitney_u)
    run_between("faa_display_vs_immersive", "FAA_Minus_EO", welch_t)
    for group_name, modality, subjects in (
        ("display", Modality.DISPLAY_VIDEO, display),
        ("immersive", Modality.IMMERSIVE_PROJECTION, immersive),
    ):
        for column in WITHIN_SUBJECT_METRICS:
            run_within(group_name, modality, subjects, column)

    faa_entries = [c for c in contrasts
                   if c["metric_column"] == "FAA_Minus_EO" and "p" in c]
    faa_reliable = any(c["p"] < alpha for c in faa_entries)
    return {
        "schema_version": 1,
        "alpha": alpha,
        "unit": "subject_modality_mean",
        "contrasts": contrasts,
        "faa_summary": {
            "label": "reliable modulation" if faa_reliable else "no reliable modulation",
            "contrasts": [c["name"] for c in faa_entries],
        },
        "notes": notes,
    }


def _entry(name: str, column: str, result: TestResult, alpha: float,
           group_a: str, group_b: str) -> dict:
    significant = result.p_two_sided < alpha
    if column == "FAA_Minus_EO":
        label = "significant" if significant else "no reliable modulation"
    else:
        label = "significant" if significant else "not significant"
    return {
        "name": name,
        "metric_column": column,
        "method": result.method,
        "statistic": result.statistic,
        "df": result.df,
        "p": result.p_two_sided,
        "n1": result.n1,
        "n2": result.n2,
        "significant": significant,
        "label": label,
        "group_a": group_a,
        "group_b": group_b,
    }


def write_report(report: dict, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)


def write_rejections_jsonl(log: Sequence[dict], path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
