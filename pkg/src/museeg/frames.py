"""Core time-series types: timestamped sample frames and fixed-rate segments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import TooShortInputError
from .labels import Label

CHANNEL_NAMES = ("TP9", "AF7", "AF8", "TP10")
N_CHANNELS = 4

# Gaps deviating from the nominal period by 50% or more force a segment split.
MAX_GAP_DEVIATION = 0.5


@dataclass(frozen=True)
class SampleFrame:
    """One timestamped 4-channel EEG reading.

    t_ref is seconds on the shared reference clock. eeg holds µV values in
    (TP9, AF7, AF8, TP10) order. device_quality is True where the headband
    reported a good contact. accel_mag is the IMU magnitude in m/s², absent
    when no IMU stream is present.
    """

    t_ref: float
    eeg: tuple[float, float, float, float]
    device_quality: tuple[bool, bool, bool, bool] = (True, True, True, True)
    accel_mag: Optional[float] = None

    def __post_init__(self):
        if len(self.eeg) != N_CHANNELS:
            raise ValueError(f"eeg must have {N_CHANNELS} entries, got {len(self.eeg)}")
        if not all(math.isfinite(v) for v in self.eeg):
            raise ValueError("eeg values must be finite")
        if not math.isfinite(self.t_ref) or self.t_ref < 0:
            raise ValueError(f"t_ref must be finite and non-negative, got {self.t_ref}")
        if len(self.device_quality) != N_CHANNELS:
            raise ValueError("device_quality must have one flag per channel")


@dataclass
class Segment:
    """A contiguous, condition-labeled run of frames at a fixed sample rate.

    Frames must be strictly increasing in t_ref with gaps within 50% of the
    nominal period; use split_frames() upstream to enforce that on raw
    network data.
    """

    sample_rate: float
    frames: list[SampleFrame]
    label: Optional[Label] = None
    _eeg: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        period = 1.0 / self.sample_rate
        prev = None
        for i, f in enumerate(self.frames):
            if prev is not None:
                gap = f.t_ref - prev
                if gap <= 0:
                    raise ValueError(f"t_ref not strictly increasing at frame {i}")
                if abs(gap - period) >= MAX_GAP_DEVIATION * period:
                    raise ValueError(
                        f"gap of {gap:.6f}s at frame {i} deviates from the "
                        f"{period:.6f}s period by 50% or more"
                    )
            prev = f.t_ref

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].t_ref - self.frames[0].t_ref + 1.0 / self.sample_rate

    def eeg_array(self) -> np.ndarray:
        """(n_frames, 4) float64 view of the EEG values, cached."""
        if self._eeg is None:
            self._eeg = np.array([f.eeg for f in self.frames], dtype=np.float64).reshape(
                -1, N_CHANNELS
            )
        return self._eeg

    def times(self) -> np.ndarray:
        return np.array([f.t_ref for f in self.frames], dtype=np.float64)

    def quality_array(self) -> np.ndarray:
        """(n_frames, 4) bool, True = good contact."""
        return np.array([f.device_quality for f in self.frames], dtype=bool).reshape(
            -1, N_CHANNELS
        )

    def accel_array(self) -> np.ndarray:
        """(n_frames,) float64 with NaN where accel_mag is absent."""
        return np.array(
            [f.accel_mag if f.accel_mag is not None else np.nan for f in self.frames],
            dtype=np.float64,
        )

    def with_eeg(self, eeg: np.ndarray) -> "Segment":
        """Copy of this segment with the EEG values replaced (same shape)."""
        if eeg.shape != (len(self.frames), N_CHANNELS):
            raise ValueError(f"expected shape {(len(self.frames), N_CHANNELS)}, got {eeg.shape}")
        frames = [
            SampleFrame(
                t_ref=f.t_ref,
                eeg=tuple(float(v) for v in eeg[i]),
                device_quality=f.device_quality,
                accel_mag=f.accel_mag,
            )
            for i, f in enumerate(self.frames)
        ]
        return Segment(sample_rate=self.sample_rate, frames=frames, label=self.label)


def order_frames(frames: Iterable[SampleFrame]) -> list[SampleFrame]:
    """Sort frames by t_ref; duplicates (same t_ref) keep the last arrival."""
    by_t: dict[float, SampleFrame] = {}
    for f in frames:
        by_t[f.t_ref] = f
    return [by_t[t] for t in sorted(by_t)]


def split_frames(
    frames: Sequence[SampleFrame], sample_rate: float
) -> list[list[SampleFrame]]:
    """Split an ordered frame list wherever the gap deviates ≥50% from nominal."""
    period = 1.0 / sample_rate
    runs: list[list[SampleFrame]] = []
    current: list[SampleFrame] = []
    prev = None
    for f in frames:
        if prev is not None and abs(f.t_ref - prev - period) >= MAX_GAP_DEVIATION * period:
            if current:
                runs.append(current)
            current = []
        current.append(f)
        prev = f.t_ref
    if current:
        runs.append(current)
    return runs


def build_segments(
    frames: Iterable[SampleFrame],
    sample_rate: float,
    label: Optional[Label] = None,
    min_duration: float = 0.0,
) -> list[Segment]:
    """Order raw frames, split on timing gaps, and wrap the runs as Segments.

    Runs shorter than min_duration seconds are dropped.
    """
    ordered = order_frames(frames)
    segments = []
    for run in split_frames(ordered, sample_rate):
        if len(run) < 2:
            continue
        if (run[-1].t_ref - run[0].t_ref) + 1.0 / sample_rate < min_duration:
            continue
        segments.append(Segment(sample_rate=sample_rate, frames=run, label=label))
    return segments


def require_min_length(x: np.ndarray, n: int, what: str = "input") -> None:
    if len(x) < n:
        raise TooShortInputError(f"{what} has {len(x)} samples; at least {n} required")
