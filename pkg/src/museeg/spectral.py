"""Per-band power extraction (time-domain mean squared amplitude).

Each band is isolated with a zero-phase Butterworth band-pass (order 4 per
pass) and power is the mean of squared amplitude in µV² over valid,
non-edge samples. Band filters share −3 dB edges, so energy exactly on a
boundary (e.g. 4 Hz) splits between the adjacent bands. The gamma band
tops out at the 50 Hz front-end cutoff, so gamma estimates reflect
30–50 Hz only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import TooFewValidSamplesError, ShapeMismatchError, ZeroTotalPowerError
from .filters import (
    FilterCoefficients,
    apply_zero_phase,
    design_bandpass,
    front_edge_samples,
    zero_phase_columns,
)
from .frames import CHANNEL_NAMES, N_CHANNELS, Segment

BAND_FILTER_ORDER = 4
MIN_VALID_SAMPLES = 100


@dataclass(frozen=True)
class BandDefinition:
    name: str
    low_hz: float
    high_hz: float


CANONICAL_BANDS = (
    BandDefinition("delta", 0.5, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 13.0),
    BandDefinition("beta", 13.0, 30.0),
    BandDefinition("gamma", 30.0, 50.0),
)

BAND_NAMES = tuple(b.name for b in CANONICAL_BANDS)
BAND_INDEX = {b.name: i for i, b in enumerate(CANONICAL_BANDS)}


def band_by_name(name: str) -> BandDefinition:
    try:
        return CANONICAL_BANDS[BAND_INDEX[name]]
    except KeyError:
        raise KeyError(f"unknown band {name!r}; expected one of {BAND_NAMES}") from None


@lru_cache(maxsize=64)
def _band_filter(low_hz: float, high_hz: float, fs: float) -> FilterCoefficients:
    return design_bandpass(low_hz, high_hz, BAND_FILTER_ORDER, fs)


def band_power(
    x: np.ndarray,
    band: BandDefinition,
    fs: float,
    valid_mask: Optional[np.ndarray] = None,
) -> float:
    """Mean squared amplitude (µV²) of x filtered to the band.

    Invalid samples are excluded from the mean rather than zero-filled, and
    the zero-phase filter's edge-padded regions are excluded as well.
    """
    x = np.asarray(x, dtype=np.float64)
    coeffs = _band_filter(band.low_hz, band.high_hz, fs)
    if valid_mask is None:
        valid = np.ones(len(x), dtype=bool)
    else:
        valid = np.asarray(valid_mask, dtype=bool)
        if valid.shape != x.shape:
            raise ShapeMismatchError(
                f"valid_mask shape {valid.shape} does not match input {x.shape}"
            )
    window = valid.copy()
    edge = coeffs.pad_len
    window[:edge] = False
    if edge > 0:
        window[len(window) - edge:] = False
    n_valid = int(window.sum())
    if n_valid < MIN_VALID_SAMPLES:
        raise TooFewValidSamplesError(
            f"only {n_valid} valid non-edge samples; {MIN_VALID_SAMPLES} required"
        )
    y = apply_zero_phase(coeffs, x)
    return float(np.mean(np.square(y[window])))


@dataclass
class BandPowerTable:
    """Per-channel, per-band mean-squared power for one segment.

    per_channel is a (4, 5) matrix in (TP9, AF7, AF8, TP10) × band order;
    channel_mean holds the arithmetic mean over the four channels per band.
    """

    per_channel: np.ndarray
    channel_mean: np.ndarray = field(init=False)
    segment_id: str = ""
    valid_sample_count: int = 0

    def __post_init__(self):
        self.per_channel = np.asarray(self.per_channel, dtype=np.float64)
        if self.per_channel.shape != (N_CHANNELS, len(CANONICAL_BANDS)):
            raise ShapeMismatchError(
                f"per_channel must be {(N_CHANNELS, len(CANONICAL_BANDS))}, "
                f"got {self.per_channel.shape}"
            )
        if np.any(self.per_channel < 0):
            raise ValueError("band powers must be non-negative")
        self.channel_mean = self.per_channel.mean(axis=0)

    def power(self, band_name: str, channel: Optional[str] = None) -> float:
        b = BAND_INDEX[band_name]
        if channel is None:
            return float(self.channel_mean[b])
        return float(self.per_channel[CHANNEL_NAMES.index(channel), b])

    @staticmethod
    def csv_header() -> list[str]:
        cols = ["segment_id", "condition"]
        for ch in CHANNEL_NAMES:
            cols.extend(f"{ch.lower()}_{b}" for b in BAND_NAMES)
        cols.extend(f"{b}_mean" for b in BAND_NAMES)
        return cols

    def csv_row(self, condition: str) -> list:
        row: list = [self.segment_id, condition]
        row.extend(float(v) for v in self.per_channel.reshape(-1))
        row.extend(float(v) for v in self.channel_mean)
        return row


def segment_band_powers(
    seg: Segment,
    valid: np.ndarray,
    segment_id: str = "",
) -> BandPowerTable:
    """Band powers per channel and band for a preprocessed, accepted segment.

    `valid` is the (n_frames, 4) per-sample/per-channel validity from the
    artifact masks. The front-end filter's edge regions are excluded here on
    top of it; band_power then excludes its own band-filter edges.
    """
    x = seg.eeg_array()
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != x.shape:
        raise ShapeMismatchError(
            f"validity shape {valid.shape} does not match segment {x.shape}"
        )
    edge = front_edge_samples(seg.sample_rate)
    usable = valid.copy()
    usable[:edge, :] = False
    if edge > 0:
        usable[len(usable) - edge:, :] = False
    powers = np.empty((N_CHANNELS, len(CANONICAL_BANDS)), dtype=np.float64)
    for b, band in enumerate(CANONICAL_BANDS):
        coeffs = _band_filter(band.low_hz, band.high_hz, seg.sample_rate)
        window = usable.copy()
        window[: coeffs.pad_len, :] = False
        window[len(window) - coeffs.pad_len :, :] = False
        counts = window.sum(axis=0)
        if counts.min() < MIN_VALID_SAMPLES:
            c_bad = int(np.argmin(counts))
            raise TooFewValidSamplesError(
                f"channel {c_bad}: only {counts[c_bad]} valid non-edge samples; "
                f"{MIN_VALID_SAMPLES} required"
            )
        y = zero_phase_columns(coeffs, x)
        for c in range(N_CHANNELS):
            powers[c, b] = float(np.mean(np.square(y[window[:, c], c])))
    return BandPowerTable(
        per_channel=powers,
        segment_id=segment_id,
        valid_sample_count=int(valid.all(axis=1).sum()),
    )


def relative_band_fraction(table: BandPowerTable, band_name: str) -> float:
    """One band's channel-mean power over the sum across all five bands."""
    total = float(table.channel_mean.sum())
    if total <= 0:
        raise ZeroTotalPowerError("total power across the five bands is zero")
    return float(table.channel_mean[BAND_INDEX[band_name]]) / total
