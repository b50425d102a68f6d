import numpy as np
import pytest

from museeg.frames import SampleFrame, Segment

FS = 256.0


def sinusoid(freq, amp, duration, fs=FS, phase=0.0):
    t = np.arange(int(round(duration * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def make_segment(eeg, fs=FS, t0=0.0, quality=None, accel=None, label=None):
    """Wrap an (n, 4) array (or a 1-D array copied to all channels) as a Segment."""
    eeg = np.asarray(eeg, dtype=np.float64)
    if eeg.ndim == 1:
        eeg = np.tile(eeg[:, None], (1, 4))
    n = len(eeg)
    frames = []
    for i in range(n):
        frames.append(
            SampleFrame(
                t_ref=t0 + i / fs,
                eeg=tuple(float(v) for v in eeg[i]),
                device_quality=tuple(quality[i]) if quality is not None else (True,) * 4,
                accel_mag=float(accel[i]) if accel is not None else None,
            )
        )
    return Segment(sample_rate=fs, frames=frames, label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
