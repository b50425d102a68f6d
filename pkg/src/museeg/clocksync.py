"""Per-stream device-clock to reference-clock mapping.

Each stream keeps a sliding window of (device_ts, arrival_ts) pairs. The
offset estimate is the median of arrival − device over the window after
dropping outliers (residual beyond 250 ms); drift is a Theil-Sen slope over
a decimated subset of the inliers. A frame's reference time is
device_ts + offset, drift-compensated around the window center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

WINDOW_SIZE = 256
OUTLIER_RESIDUAL_S = 0.250
DRIFT_HEALTHY_LIMIT = 1e-3
_DRIFT_SUBSET = 64
_DRIFT_EVERY = 32
# drift needs a longer baseline than the offset window: keep a decimated
# history (every 16th pair, up to 512 entries)
_HIST_EVERY = 16
_HIST_MAX = 512


@dataclass
class ClockSync:
    """Sliding-window clock model for one stream. Not thread-safe; each
    stream's intake task owns its instance."""

    stream_id: str
    offset: float = 0.0
    drift: float = 0.0
    device_center: float = 0.0
    n_total: int = 0
    window_size: int = WINDOW_SIZE
    _device: list[float] = field(default_factory=list, repr=False)
    _arrival: list[float] = field(default_factory=list, repr=False)
    _hist_device: list[float] = field(default_factory=list, repr=False)
    _hist_diff: list[float] = field(default_factory=list, repr=False)

    @property
    def window(self) -> list[tuple[float, float]]:
        return list(zip(self._device, self._arrival))

    @property
    def converged(self) -> bool:
        return self.n_total >= self.window_size

    @property
    def healthy(self) -> bool:
        return self.converged and abs(self.drift) < DRIFT_HEALTHY_LIMIT

    def update(self, device_ts: float, arrival_ts: float) -> "ClockSync":
        if not (math.isfinite(device_ts) and math.isfinite(arrival_ts)):
            return self
        self._device.append(device_ts)
        self._arrival.append(arrival_ts)
        if len(self._device) > self.window_size:
            del self._device[0]
            del self._arrival[0]
        self.n_total += 1

        device = np.asarray(self._device)
        diffs = np.asarray(self._arrival) - device
        med = float(np.median(diffs))
        inliers = np.abs(diffs - med) <= OUTLIER_RESIDUAL_S
        if not inliers.any():
            inliers = np.ones(len(diffs), dtype=bool)
        self.offset = float(np.median(diffs[inliers]))
        self.device_center = float(np.median(device[inliers]))

        if self.n_total % _HIST_EVERY == 0:
            d = device_ts
            diff = arrival_ts - device_ts
            if abs(diff - self.offset) <= OUTLIER_RESIDUAL_S:
                self._hist_device.append(d)
                self._hist_diff.append(diff)
                if len(self._hist_device) > _HIST_MAX:
                    del self._hist_device[0]
                    del self._hist_diff[0]
        if self.n_total % _DRIFT_EVERY == 0 and len(self._hist_device) >= 8:
            self.drift = _theil_sen_slope(
                np.asarray(self._hist_device), np.asarray(self._hist_diff)
            )
        return self

    def t_ref_for(self, device_ts: float) -> float:
        return device_ts + self.offset + self.drift * (device_ts - self.device_center)

    def summary(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "offset_s": self.offset,
            "drift_s_per_s": self.drift,
            "pairs_seen": self.n_total,
            "converged": self.converged,
            "healthy": self.healthy,
        }


def _theil_sen_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Median of pairwise slopes over an evenly decimated subset."""
    if len(x) > _DRIFT_SUBSET:
        idx = np.linspace(0, len(x) - 1, _DRIFT_SUBSET).astype(int)
        x, y = x[idx], y[idx]
    slopes = []
    for i in range(len(x)):
        dx = x[i + 1 :] - x[i]
        dy = y[i + 1 :] - y[i]
        keep = dx != 0
        if keep.any():
            slopes.append(dy[keep] / dx[keep])
    if not slopes:
        return 0.0
    return float(np.median(np.concatenate(slopes)))


def update_clock_sync(sync: ClockSync, device_ts: float, arrival_ts: float) -> ClockSync:
    """Functional-style wrapper over ClockSync.update (mutates and returns)."""
    return sync.update(device_ts, arrival_ts)
