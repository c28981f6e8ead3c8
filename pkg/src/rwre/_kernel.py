"""Compiled stepping loop shared by all walk drivers."""

import numba as nb
import numpy as np

HIT = 0
CAP = 1
EDGE = 2
REFILL = 3

RUN = 0
AT_OR_RIGHT = 1
EXACT = 2


@nb.njit(cache=True, nogil=True)
def advance(cum, lo, L, R, pos, t, u, ui, mode, target, cap, tally, path, record):
    """Step until the stop rule fires, the time cap is hit, or input runs out.

    One uniform is consumed per step.  Returns ``(status, pos, t, ui)``;
    ``EDGE`` means ``pos`` is too close to the window edge to step safely and
    ``REFILL`` means ``u`` is exhausted.  ``tally`` is aligned with the
    window and counts arrivals; ``path[k]`` receives the position reached
    with ``u[k]`` when ``record`` is set.
    """
    n = cum.shape[0]
    while True:
        if mode == AT_OR_RIGHT and pos >= target:
            return HIT, pos, t, ui
        if mode == EXACT and pos == target:
            return HIT, pos, t, ui
        if t >= cap:
            return CAP, pos, t, ui
        i = pos - lo
        if i - L < 0 or i + R >= n:
            return EDGE, pos, t, ui
        if ui >= u.shape[0]:
            return REFILL, pos, t, ui
        x = u[ui]
        j = 0
        while cum[i, j] <= x:
            j += 1
        pos += j - L
        tally[pos - lo] += 1
        if record:
            path[ui] = pos
        ui += 1
        t += 1


@nb.njit(cache=True, nogil=True)
def cumulative_rows(probs):
    """Row-wise cumulative sums, pinned to 1 from the last charged column on."""
    n, k = probs.shape
    out = np.empty((n, k))
    for i in range(n):
        last = k - 1
        while last > 0 and probs[i, last] <= 0.0:
            last -= 1
        s = 0.0
        for j in range(k):
            s += probs[i, j]
            out[i, j] = 1.0 if j >= last else s
    return out
