"""museeg: wearable-EEG acquisition, synchronization, recording and
engagement analytics for live venue studies."""

__version__ = "0.1.0"
