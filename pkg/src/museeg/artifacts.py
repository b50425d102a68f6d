"""Sample-level artifact flagging, segment gating, and conservative ICA cleanup.

A sample is excluded when any criterion fires: device quality flag,
accelerometer movement above the within-segment 95th percentile, amplitude
beyond ±100 µV, or a sample-to-sample gradient above 50 µV. All thresholds
use strict inequality: boundary values pass. Segments keep fewer than 100
all-channel-valid samples are rejected outright.

ICA removal is deliberately conservative: a component is dropped only when
its |excess kurtosis| exceeds 8 AND it either tracks the accelerometer
(|r| > 0.5) or carries a blink signature (>80% of power below 4 Hz with
frontal mixing weights more than twice the temporal ones).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as scistats
from sklearn.decomposition import FastICA
from sklearn.exceptions import ConvergenceWarning

from .errors import (
    IcaConvergenceError,
    MissingAccelStreamError,
    ShapeMismatchError,
    TooShortInputError,
)
from .frames import N_CHANNELS, Segment

AMPLITUDE_LIMIT_UV = 100.0
GRADIENT_LIMIT_UV = 50.0
MOVEMENT_PERCENTILE = 95.0
MIN_VALID_SAMPLES = 100
MIN_ICA_SAMPLES = 512
MIN_ACCEL_COVERAGE = 0.9

KURTOSIS_LIMIT = 8.0
ACCEL_CORR_LIMIT = 0.5
LOW_FREQ_HZ = 4.0
LOW_FREQ_FRACTION = 0.8
FRONTAL_WEIGHT_RATIO = 2.0

REASON_BITS = {"device_flag": 1, "movement": 2, "amplitude": 4, "gradient": 8}
_BIT_REASONS = {v: k for k, v in REASON_BITS.items()}


@dataclass
class QualityMask:
    """Per-sample, per-channel validity with the reasons that voided a sample.

    reason_bits is an (n, 4) uint8 array; a sample/channel is valid iff its
    bits are zero, so the valid/reasons invariant holds by construction.
    """

    reason_bits: np.ndarray

    def __post_init__(self):
        self.reason_bits = np.asarray(self.reason_bits, dtype=np.uint8)
        if self.reason_bits.ndim != 2 or self.reason_bits.shape[1] != N_CHANNELS:
            raise ShapeMismatchError(
                f"reason_bits must be (n, {N_CHANNELS}), got {self.reason_bits.shape}"
            )

    @classmethod
    def all_valid(cls, n: int) -> "QualityMask":
        return cls(np.zeros((n, N_CHANNELS), dtype=np.uint8))

    @property
    def valid(self) -> np.ndarray:
        return self.reason_bits == 0

    def __len__(self) -> int:
        return self.reason_bits.shape[0]

    def reasons_at(self, i: int, channel: int) -> frozenset[str]:
        bits = int(self.reason_bits[i, channel])
        return frozenset(name for bit, name in _BIT_REASONS.items() if bits & bit)

    def all_channel_valid(self) -> np.ndarray:
        """(n,) bool: samples valid on all four channels."""
        return self.valid.all(axis=1)

    def valid_sample_count(self) -> int:
        return int(self.all_channel_valid().sum())


def flag_device(seg: Segment) -> QualityMask:
    """Flag samples the headband itself reported as poor contact."""
    if len(seg) == 0:
        raise TooShortInputError("segment is empty")
    poor = ~seg.quality_array()
    return QualityMask(poor.astype(np.uint8) * REASON_BITS["device_flag"])


def flag_movement(seg: Segment) -> QualityMask:
    """Flag all channels of frames whose accel magnitude exceeds the
    within-segment 95th percentile (linear-interpolated order statistic).

    Frames lacking accel inherit the flag of the nearest preceding frame that
    has one; leading frames inherit from the first accel-bearing frame.
    """
    if len(seg) == 0:
        raise TooShortInputError("segment is empty")
    accel = seg.accel_array()
    present = np.isfinite(accel)
    if present.sum() < MIN_ACCEL_COVERAGE * len(seg):
        raise MissingAccelStreamError(
            f"accel present on {int(present.sum())}/{len(seg)} frames; "
            f"≥{MIN_ACCEL_COVERAGE:.0%} required"
        )
    threshold = np.percentile(accel[present], MOVEMENT_PERCENTILE)
    flagged = np.zeros(len(seg), dtype=bool)
    flagged[present] = accel[present] > threshold
    # Inherit flags across accel gaps (forward fill, backfill the leading gap).
    idx = np.where(present, np.arange(len(seg)), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(present))
    idx[idx < 0] = first
    flagged = flagged[idx]
    bits = np.zeros((len(seg), N_CHANNELS), dtype=np.uint8)
    bits[flagged, :] = REASON_BITS["movement"]
    return QualityMask(bits)


def flag_amplitude(seg: Segment) -> QualityMask:
    """Flag sample/channel pairs whose |amplitude| exceeds 100 µV (strict)."""
    if len(seg) == 0:
        raise TooShortInputError("segment is empty")
    over = np.abs(seg.eeg_array()) > AMPLITUDE_LIMIT_UV
    return QualityMask(over.astype(np.uint8) * REASON_BITS["amplitude"])


def flag_gradient(seg: Segment) -> QualityMask:
    """Flag sample i where |x[i] − x[i−1]| exceeds 50 µV (sample 0 never)."""
    if len(seg) < 2:
        raise TooShortInputError("gradient flagging needs at least 2 samples")
    x = seg.eeg_array()
    jump = np.abs(np.diff(x, axis=0)) > GRADIENT_LIMIT_UV
    bits = np.zeros_like(x, dtype=np.uint8)
    bits[1:][jump] = REASON_BITS["gradient"]
    return QualityMask(bits)


@dataclass
class ValidationResult:
    """Outcome of combining masks and applying the minimum-valid-samples gate."""

    mask: QualityMask
    valid_sample_count: int
    min_valid: int
    accepted: bool

    def reason_counts(self) -> dict[str, int]:
        counts = {}
        for name, bit in REASON_BITS.items():
            counts[name] = int(((self.mask.reason_bits & bit) != 0).any(axis=1).sum())
        return counts


def combine_and_validate(
    masks: Sequence[QualityMask], min_valid: int = MIN_VALID_SAMPLES
) -> ValidationResult:
    """Union the per-criterion reasons; reject when fewer than min_valid
    samples remain valid on all four channels."""
    if not masks:
        raise ValueError("at least one mask required")
    shape = masks[0].reason_bits.shape
    for m in masks[1:]:
        if m.reason_bits.shape != shape:
            raise ShapeMismatchError(
                f"mask shapes differ: {m.reason_bits.shape} vs {shape}"
            )
    bits = np.zeros(shape, dtype=np.uint8)
    for m in masks:
        bits |= m.reason_bits
    combined = QualityMask(bits)
    n_valid = combined.valid_sample_count()
    return ValidationResult(
        mask=combined,
        valid_sample_count=n_valid,
        min_valid=min_valid,
        accepted=n_valid >= min_valid,
    )


@dataclass
class IcaResult:
    """Blind source separation of one segment plus the removal bookkeeping."""

    mixing: np.ndarray  # (4 channels, 4 components)
    sources: np.ndarray  # (n_samples, 4 components)
    mean: np.ndarray  # (4,) channel means removed before unmixing
    removed: frozenset[int]
    rationale: dict[int, dict]

    def reconstruct(self, removed: Optional[frozenset[int]] = None) -> np.ndarray:
        """(n, 4) channel data rebuilt with the removed components zeroed."""
        removed = self.removed if removed is None else removed
        src = self.sources.copy()
        for k in removed:
            src[:, k] = 0.0
        return src @ self.mixing.T + self.mean


def _low_freq_fraction(source: np.ndarray, fs: float) -> float:
    spec = np.abs(np.fft.rfft(source - source.mean())) ** 2
    freqs = np.fft.rfftfreq(len(source), d=1.0 / fs)
    total = spec.sum()
    if total <= 0:
        return 0.0
    return float(spec[freqs < LOW_FREQ_HZ].sum() / total)


def run_ica(seg: Segment, seed: int = 0, max_iter: int = 500) -> IcaResult:
    """Decompose a preprocessed, accepted segment into 4 independent
    components (fixed-point negentropy ICA) and mark artifact components.

    A component is removed only when |excess kurtosis| > 8 AND either its
    absolute correlation with the accel magnitude exceeds 0.5, or >80% of
    its power sits below 4 Hz with frontal (AF7/AF8) mixing weights each
    more than twice the temporal (TP9/TP10) ones.

    Raises IcaConvergenceError when the solver hits the iteration bound;
    callers should then keep the un-ICA'd segment and log the event.
    """
    x = seg.eeg_array()
    if len(x) < MIN_ICA_SAMPLES:
        raise TooShortInputError(
            f"ICA needs ≥ {MIN_ICA_SAMPLES} samples, got {len(x)}"
        )
    ica = FastICA(
        n_components=N_CHANNELS,
        whiten="unit-variance",
        fun="logcosh",
        max_iter=max_iter,
        tol=1e-4,
        random_state=seed,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        sources = ica.fit_transform(x)
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            raise IcaConvergenceError(
                f"fixed-point iteration did not converge within {max_iter} steps"
            )
    mixing = ica.mixing_
    mean = ica.mean_

    accel = seg.accel_array()
    have_accel = np.isfinite(accel)
    accel_series = None
    if have_accel.any():
        # forward/backward fill so correlation is defined on every sample
        idx = np.where(have_accel, np.arange(len(accel)), -1)
        idx = np.maximum.accumulate(idx)
        idx[idx < 0] = int(np.argmax(have_accel))
        accel_series = accel[idx]
        if np.std(accel_series) == 0:
            accel_series = None

    removed = set()
    rationale: dict[int, dict] = {}
    frontal = (1, 2)  # AF7, AF8
    temporal = (0, 3)  # TP9, TP10
    for k in range(N_CHANNELS):
        s = sources[:, k]
        kurt = float(scistats.kurtosis(s, fisher=True))
        if abs(kurt) <= KURTOSIS_LIMIT:
            continue
        accel_corr = 0.0
        if accel_series is not None and np.std(s) > 0:
            accel_corr = float(np.corrcoef(s, accel_series)[0, 1])
        low_frac = _low_freq_fraction(s, seg.sample_rate)
        w = np.abs(mixing[:, k])
        frontal_min = min(w[c] for c in frontal)
        temporal_max = max(w[c] for c in temporal)
        blink_like = (
            low_frac > LOW_FREQ_FRACTION
            and frontal_min > FRONTAL_WEIGHT_RATIO * temporal_max
        )
        if abs(accel_corr) > ACCEL_CORR_LIMIT or blink_like:
            removed.add(k)
            rationale[k] = {
                "kurtosis": kurt,
                "accel_corr": accel_corr,
                "low_freq_fraction": low_frac,
                "frontal_min_weight": float(frontal_min),
                "temporal_max_weight": float(temporal_max),
                "criterion": "accel" if abs(accel_corr) > ACCEL_CORR_LIMIT else "blink",
            }
    return IcaResult(
        mixing=mixing,
        sources=sources,
        mean=mean,
        removed=frozenset(removed),
        rationale=rationale,
    )


def apply_ica(seg: Segment, result: IcaResult) -> Segment:
    """Segment with the removed components zeroed out of the channel data."""
    return seg.with_eeg(result.reconstruct())
