"""Regeneration times of a finite trajectory and their increments.

A regeneration time is a time ``n >= 1`` at which the walk stands strictly
right of everything it visited before and never again goes below its current
position.  On a finite path the second condition can only be checked on the
observed future, so a candidate is kept only once the walk has also climbed
``D`` sites above it (the confirmation margin); candidates that never collect
the margin are counted in ``unconfirmed_tail_dropped``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rwre.walk import WalkPath, read_trajectory


@dataclass
class RegenerationRecord:
    times: np.ndarray
    positions: np.ndarray
    confirmation_distance: int
    unconfirmed_tail_dropped: int = 0

    def __len__(self):
        return len(self.times)


@dataclass
class IncrementSample:
    dt: np.ndarray
    dx: np.ndarray
    diagnostic: str = ""

    def __len__(self):
        return len(self.dt)


def _as_positions(path: WalkPath | np.ndarray) -> np.ndarray:
    return np.asarray(path.positions if isinstance(path, WalkPath) else path, dtype=np.int64)


def detect_regenerations(path: WalkPath | np.ndarray, D: int) -> RegenerationRecord:
    """All confirmed regeneration times of ``path``.

    Prefix maxima and suffix minima/maxima are built with cumulative
    reductions, so the pass is O(n).
    """
    if D < 1:
        raise ValueError(f"confirmation distance must be >= 1, got {D}")
    x = _as_positions(path)
    n = len(x)
    if n < 3:
        return RegenerationRecord(np.empty(0, np.int64), np.empty(0, np.int64), D)
    prev_max = np.maximum.accumulate(x)[:-1]  # max of x[0..k-1] for time k = 1..n-1
    rev = x[::-1]
    # min / max over x[k+1..n-1] for k = 1..n-1; the last time has no observed future
    fut_min = np.minimum.accumulate(rev)[::-1][2:]
    fut_max = np.maximum.accumulate(rev)[::-1][2:]
    xs = x[1:-1]
    candidates = (xs > prev_max[:-1]) & (xs <= fut_min)
    confirmed = candidates & (fut_max >= xs + D)
    times = np.flatnonzero(confirmed) + 1
    dropped = int(np.count_nonzero(candidates & ~confirmed))
    # the final time is a candidate whenever it is a strict running maximum
    if x[-1] > prev_max[-1]:
        dropped += 1
    return RegenerationRecord(times, x[times], D, dropped)


def increments(record: RegenerationRecord) -> IncrementSample:
    """Time and space increments between consecutive regenerations, first block excluded.

    The first block (start to the first regeneration) has a different law
    from the later ones, so only ``k >= 2`` enters.
    """
    if len(record) < 3:
        return IncrementSample(
            np.empty(0, np.int64), np.empty(0, np.int64),
            f"only {len(record)} confirmed regenerations, need at least 3",
        )
    return IncrementSample(np.diff(record.times)[1:], np.diff(record.positions)[1:])


def ratio_estimate(sample: IncrementSample) -> tuple[float, float]:
    """Mean space increment over mean time increment, with a delta-method standard error."""
    n = len(sample)
    if n == 0:
        return float("nan"), float("nan")
    dx = sample.dx.astype(float)
    dt = sample.dt.astype(float)
    r = dx.mean() / dt.mean()
    if n < 2:
        return float(r), float("inf")
    resid = dx - r * dt
    se = resid.std(ddof=1) / (np.sqrt(n) * dt.mean())
    return float(r), float(se)


def block_halves_check(sample: IncrementSample, n_sigma: float = 4.0) -> dict:
    """Compare first-half and second-half mean time increments.

    A flag, not an error: heavy-tailed increments fail it routinely.
    """
    dt = sample.dt.astype(float)
    h = len(dt) // 2
    if h < 2:
        return {"ok": True, "z": 0.0, "note": "too few increments"}
    a, b = dt[:h], dt[h:]
    se = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    z = float(abs(a.mean() - b.mean()) / se) if se > 0 else 0.0
    return {"ok": z < n_sigma, "z": z, "note": ""}


@dataclass
class ScanReport:
    source: str
    steps: int
    record: RegenerationRecord
    sample: IncrementSample
    ratio: float
    ratio_se: float
    header: dict = field(default_factory=dict)


def scan_trajectory(path: str | Path, D: int | None = None) -> ScanReport:
    """Offline scan of a trajectory dump written by :func:`rwre.walk.write_trajectory`."""
    walk, header = read_trajectory(path)
    if D is None:
        D = int(header.get("D", 2))
    record = detect_regenerations(walk, D)
    sample = increments(record)
    r, se = ratio_estimate(sample)
    return ScanReport(str(path), len(walk) - 1, record, sample, r, se, header)
