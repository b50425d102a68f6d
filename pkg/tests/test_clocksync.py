import numpy as np

from museeg.clocksync import ClockSync, update_clock_sync


class TestClockSync:
    def test_single_pair(self):
        sync = ClockSync("eeg/p1")
        update_clock_sync(sync, 10.0, 10.25)
        assert sync.offset == 0.25
        assert sync.drift == 0.0
        assert not sync.converged

    def test_constant_latency_converges(self):
        sync = ClockSync("eeg/p1")
        for i in range(300):
            device = i / 256.0
            sync.update(device, device + 0.020)
        assert sync.converged
        assert abs(sync.offset - 0.020) < 0.001
        assert abs(sync.drift) < 1e-6
        assert sync.healthy
        assert abs(sync.t_ref_for(2.0) - 2.020) < 0.001

    def test_uniform_jitter_median_is_robust(self, rng):
        sync = ClockSync("eeg/p1")
        for i in range(600):
            device = i / 256.0
            sync.update(device, device + rng.uniform(0.010, 0.050))
        assert 0.010 <= sync.offset <= 0.050
        assert abs(sync.offset - 0.030) < 0.01
        assert sync.healthy

    def test_outliers_excluded(self, rng):
        sync = ClockSync("gaze/p1")
        for i in range(400):
            device = i / 30.0
            latency = 0.02 if i % 50 else 1.5  # occasional 1.5 s stall
            sync.update(device, device + latency)
        assert abs(sync.offset - 0.02) < 0.005

    def test_drift_estimated(self):
        sync = ClockSync("eeg/p1")
        drift = 5e-4  # 0.5 ms/s
        for i in range(1024):
            device = i / 256.0
            sync.update(device, device * (1 + drift) + 0.015)
        assert abs(sync.drift - drift) < 2e-4
        # drift-compensated mapping tracks the true arrival-side clock
        t = 1024 / 256.0
        assert abs(sync.t_ref_for(t) - (t * (1 + drift) + 0.015)) < 0.002

    def test_monotone_t_ref_for_steady_stream(self, rng):
        sync = ClockSync("eeg/p1")
        refs = []
        for i in range(512):
            device = i / 256.0
            sync.update(device, device + 0.02 + rng.normal(0, 0.002))
            refs.append(sync.t_ref_for(device))
        diffs = np.diff(refs[sync.window_size :])
        assert (diffs > 0).all()

    def test_summary_fields(self):
        sync = ClockSync("acc/p2")
        sync.update(0.0, 0.1)
        s = sync.summary()
        assert s["stream_id"] == "acc/p2"
        assert set(s) >= {"offset_s", "drift_s_per_s", "pairs_seen", "converged"}
