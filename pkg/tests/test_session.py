import math

import numpy as np
import pytest

from museeg.analysis import (
    compare_modalities,
    load_records_csv,
    windows_from_events,
    write_records_csv,
)
from museeg.engagement import EngagementRecord
from museeg.errors import EmptySessionError, InsufficientCellError, MissingBaselineError
from museeg.labels import Baseline, ConditionLabel, Modality
from museeg.session import (
    GROUP_DISPLAY,
    GROUP_IMMERSIVE,
    condition_plan_for,
    counterbalance,
)
from museeg.spectral import BAND_NAMES

from cohort import build_cohort, contrast, run_cohort_session


class TestCounterbalance:
    def test_ten_participants_five_per_order(self):
        res = counterbalance([f"p{i}" for i in range(10)], seed=7)
        totals = [0, 0]
        for g in res.order_counts.values():
            totals[0] += g[0]
            totals[1] += g[1]
        assert totals == [5, 5]
        groups = {}
        for a in res.assignments:
            groups.setdefault(a.group, []).append(a)
        assert len(groups[GROUP_IMMERSIVE]) == len(groups[GROUP_DISPLAY]) == 5

    def test_two_participants_one_per_order(self):
        res = counterbalance(["a", "b"], seed=1)
        orders = {a.order for a in res.assignments}
        assert len(orders) == 2

    def test_same_seed_identical(self):
        ids = [f"p{i}" for i in range(12)]
        r1 = counterbalance(ids, seed=99)
        r2 = counterbalance(ids, seed=99)
        assert r1.assignments == r2.assignments

    def test_twenty_participants_fully_balanced(self):
        res = counterbalance([f"p{i}" for i in range(20)], seed=3)
        assert res.balanced
        for counts in res.order_counts.values():
            assert counts == [5, 5]

    def test_orders_contain_artwork_plus_group_modality(self):
        res = counterbalance([f"p{i}" for i in range(4)], seed=5)
        for a in res.assignments:
            assert Modality.ORIGINAL_ARTWORK in a.order
            assert a.interpretive_modality in a.order
            plan = condition_plan_for(a)
            assert len(plan) == 2


class TestWindows:
    def test_pairing(self):
        rows = [
            ["1.0", "p1", "block_start", "EO"],
            ["7.0", "p1", "block_end", "EO"],
            ["8.0", "", "block_start", "DisplayVideo/1"],
            ["9.0", "", "mark", "note"],
            ["14.0", "", "block_end", "DisplayVideo/1"],
        ]
        windows = windows_from_events(rows)
        assert len(windows) == 2
        assert windows[0].label is Baseline.EO
        assert windows[0].participant == "p1"
        assert windows[1].label == ConditionLabel(Modality.DISPLAY_VIDEO, 1)
        assert windows[1].participant is None

    def test_unclosed_block_dropped(self):
        rows = [["1.0", "", "block_start", "EO"]]
        assert windows_from_events(rows) == []


def synthetic_aggregate(subject, modality, arousal_minus_eo, rng):
    rec = EngagementRecord(
        subject_id=subject,
        condition=ConditionLabel(modality, 1),
        segment_id=f"{subject}:{modality.value}:agg",
        faa=float(rng.normal(0, 0.1)),
        faa_minus_eo=float(rng.normal(0, 0.1)),
        arousal=arousal_minus_eo + 0.5,
        arousal_minus_eo=arousal_minus_eo,
        band_corrected={b: float(rng.normal(0, 1)) for b in BAND_NAMES},
        alpha_fraction=float(rng.uniform(0.3, 0.6)),
    )
    for b in BAND_NAMES:
        rec.band_corrected_z[b] = float(rng.normal(0, 1))
    return rec


def synthetic_cohort_records(rng, n=10, display_shift=0.0):
    records = []
    for i in range(n):
        s = f"d{i}"
        records.append(synthetic_aggregate(s, Modality.DISPLAY_VIDEO,
                                           float(rng.normal(display_shift, 0.5)), rng))
        records.append(synthetic_aggregate(s, Modality.ORIGINAL_ARTWORK,
                                           float(rng.normal(0, 0.5)), rng))
    for i in range(n):
        s = f"i{i}"
        records.append(synthetic_aggregate(s, Modality.IMMERSIVE_PROJECTION,
                                           float(rng.normal(0, 0.5)), rng))
        records.append(synthetic_aggregate(s, Modality.ORIGINAL_ARTWORK,
                                           float(rng.normal(0, 0.5)), rng))
    return records


class TestCompareModalities:
    def test_contrast_family_structure(self, rng):
        report = compare_modalities(synthetic_cohort_records(rng))
        names = {c["name"] for c in report["contrasts"]}
        assert "arousal_display_vs_immersive" in names
        assert "alpha_fraction_display_vs_immersive" in names
        assert "faa_display_vs_immersive" in names
        assert "delta_mean_corrected_z_immersive_vs_artwork" in names
        assert "alpha_mean_corrected_display_vs_artwork" in names
        arousal = contrast(report, "arousal_display_vs_immersive")
        assert arousal["method"] == "welch"
        assert arousal["metric_column"] == "Arousal_Minus_EO"
        fraction = contrast(report, "alpha_fraction_display_vs_immersive")
        assert fraction["method"] == "mannwhitney"

    def test_shifted_cohort_detected(self, rng):
        report = compare_modalities(synthetic_cohort_records(rng, display_shift=1.0))
        assert contrast(report, "arousal_display_vs_immersive")["p"] < 0.05

    def test_faa_no_reliable_modulation_label(self, rng):
        report = compare_modalities(synthetic_cohort_records(rng))
        faa_entries = [c for c in report["contrasts"]
                       if c["metric_column"] == "FAA_Minus_EO" and "p" in c]
        assert faa_entries
        for c in faa_entries:
            if c["p"] >= 0.05:
                assert c["label"] == "no reliable modulation"
            else:
                assert c["label"] == "significant"
        any_reliable = any(c["p"] < 0.05 for c in faa_entries)
        expected = "reliable modulation" if any_reliable else "no reliable modulation"
        assert report["faa_summary"]["label"] == expected

    def test_single_subject_cell_raises(self, rng):
        records = synthetic_cohort_records(rng)
        only_one_display = [
            r for r in records
            if not (r.subject_id.startswith("d") and r.subject_id != "d0")
        ]
        with pytest.raises(InsufficientCellError):
            compare_modalities(only_one_display)

    def test_records_csv_round_trip(self, rng, tmp_path):
        records = synthetic_cohort_records(rng)
        path = tmp_path / "records.csv"
        write_records_csv(records, path)
        loaded = load_records_csv(path)
        assert len(loaded) == len(records)
        assert loaded[0].subject_id == records[0].subject_id
        assert loaded[0].arousal_minus_eo == pytest.approx(records[0].arousal_minus_eo)
        assert loaded[3].band_corrected_z["delta"] == pytest.approx(
            records[3].band_corrected_z["delta"]
        )


@pytest.fixture(scope="module")
def session_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cohort")
    return run_cohort_session(tmp, seed=11, n_per_group=3)


class TestFullSessionPipeline:

    def test_segment_accounting(self, session_run):
        result, _ = session_run
        assert result.segments_total == result.segments_accepted + len(result.rejections)
        # 6 subjects × 3 phases
        assert result.segments_total == 18

    def test_records_shape(self, session_run):
        result, _ = session_run
        assert len(result.baselines) == 6
        # one record per accepted task segment (2 per subject)
        assert len(result.records) == 12
        assert len(result.aggregates) == 12

    def test_powers_match_ground_truth(self, session_run):
        result, _ = session_run
        # alpha is 20 µV in every phase: every record's table fed from it
        for rec in result.records:
            total_alpha = rec.band_corrected["alpha"] + result.baselines[
                rec.subject_id
            ].eo.power("alpha")
            assert abs(total_alpha - 200.0) / 200.0 < 0.10

    def test_arousal_group_separation(self, session_run):
        result, report = session_run
        arousal = contrast(report, "arousal_display_vs_immersive")
        assert arousal["n1"] == arousal["n2"] == 3
        # display mu 2.0 vs immersive mu 1.0, EO 0.5: sign must be positive
        assert arousal["statistic"] > 0

    def test_z_scores_filled(self, session_run):
        result, _ = session_run
        zs = [r.band_corrected_z["alpha"] for r in result.records]
        assert all(not math.isnan(z) for z in zs)
        by_subject = {}
        for r in result.records:
            by_subject.setdefault(r.subject_id, []).append(r.band_corrected_z["alpha"])
        for vals in by_subject.values():
            assert abs(np.mean(vals)) < 1e-10
            assert abs(np.std(vals, ddof=1) - 1.0) < 1e-10

    def test_missing_baseline_error(self, tmp_path):
        from museeg.analysis import analyze_session
        from museeg.ingest import IngestService
        from museeg.synth import GeneratorSpec, ScriptedPhase, run_scripted_session

        svc = IngestService(
            out_dir=tmp_path,
            participants=[{"id": "p1", "udp_port": 0}],
            session_id="nobaseline",
            clock_mode="device",
        )
        svc.start()
        phases = [
            ScriptedPhase(
                "DisplayVideo/1",
                GeneratorSpec(duration_s=6.0,
                              band_amplitudes={"alpha": (20.0,) * 4},
                              noise_std=1.0, seed=4),
            )
        ]
        def command(ctype, label=None, participant="p1", t_ref=None):
            return svc.command(ctype, label=label, participant=participant,
                               t_ref=t_ref)

        run_scripted_session(phases, "127.0.0.1", svc.udp_port("p1"), command,
                             rate=0, batch=32)
        import time as _t

        deadline = _t.monotonic() + 20
        while svc.frames_processed() < 1500 and _t.monotonic() < deadline:
            _t.sleep(0.02)
        manifest = svc.stop()
        with pytest.raises(MissingBaselineError):
            analyze_session(manifest)
