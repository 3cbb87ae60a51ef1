"""Resident-set-size sampling for per-process peak memory."""

from __future__ import annotations

import os
import resource
import sys
import threading

SAMPLE_PERIOD = 0.05

_PAGE = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else 4096


def current_rss() -> int:
    """Current RSS of this process in bytes."""
    try:
        with open("/proc/self/statm", "rb") as fh:
            return int(fh.read().split()[1]) * _PAGE
    except OSError:
        # no /proc: fall back to the lifetime peak
        return lifetime_peak_rss()


def lifetime_peak_rss() -> int:
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return peak if sys.platform == "darwin" else peak * 1024


class RssSampler:
    """Background thread recording the peak RSS every ``period`` seconds.

    ``reset()`` starts a new measurement window from the current RSS, so one
    long-lived process can report a peak per experiment.
    """

    def __init__(self, period: float = SAMPLE_PERIOD):
        self.period = period
        self._lock = threading.Lock()
        self._peak = current_rss()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="rss-sampler", daemon=True)

    def start(self) -> RssSampler:
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.wait(self.period):
            self.sample()

    def sample(self) -> int:
        rss = current_rss()
        with self._lock:
            if rss > self._peak:
                self._peak = rss
        return rss

    @property
    def peak(self) -> int:
        self.sample()
        with self._lock:
            return self._peak

    def reset(self) -> None:
        with self._lock:
            self._peak = current_rss()

    def stop(self) -> int:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join()
        return self.peak

    def __enter__(self) -> RssSampler:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
