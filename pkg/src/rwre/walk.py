"""Quenched simulation of the walk in a realized environment.

Time is counted from 0: the start position is visit number one, so
occupation tallies over a run that stopped at time ``t`` sum to ``t + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rwre import _kernel as K
from rwre.env import EnvironmentWindow

DEFAULT_STEP_CAP = 10_000_000
_MIN_CHUNK = 64
_MAX_CHUNK = 1 << 16


@dataclass
class WalkPath:
    start: int
    positions: np.ndarray
    lineage: str = ""

    def __len__(self):
        return len(self.positions)


@dataclass
class HittingResult:
    """Outcome of a stopped run; ``time``/``position`` are taken at the cap when censored."""

    hit: bool
    time: int
    position: int
    cap: int
    tally_lo: int
    counts: np.ndarray = field(repr=False)

    @property
    def kind(self) -> str:
        return "Hit" if self.hit else "Censored"

    def occupation(self, site: int) -> int:
        i = site - self.tally_lo
        return int(self.counts[i]) if 0 <= i < len(self.counts) else 0

    @property
    def tallies(self) -> dict[int, int]:
        nz = np.flatnonzero(self.counts)
        return {int(i) + self.tally_lo: int(self.counts[i]) for i in nz}


@dataclass
class OccupationCount:
    count: int
    censored: bool
    time: int


class Walk:
    """A walk in a fixed environment that can be stopped and resumed.

    Each call to :meth:`run` continues from where the previous one stopped,
    consuming the same uniform stream, so nested stopping rules (a barrier,
    then a farther barrier) see one trajectory.
    """

    def __init__(
        self,
        window: EnvironmentWindow,
        start: int,
        rng: np.random.Generator,
        record: bool = False,
        lineage: str = "",
    ):
        self.window = window
        self.rng = rng
        self.record = record
        self.lineage = lineage
        self.start = int(start)
        self.pos = int(start)
        self.t = 0
        L, R = window.support.L, window.support.R
        window.ensure(start - L, start + R)
        self._lo, _ = window.snapshot()
        self._tally = np.zeros(len(window), dtype=np.int64)
        self._tally[start - self._lo] = 1
        self._u = np.empty(0)
        self._ui = 0
        self._chunk = _MIN_CHUNK
        self._pathbuf = np.empty(0, dtype=np.int64)
        self._pieces = [np.array([start], dtype=np.int64)] if record else []

    def _realign(self, lo: int, n: int) -> None:
        if lo == self._lo and n == len(self._tally):
            return
        new = np.zeros(n, dtype=np.int64)
        off = self._lo - lo
        new[off : off + len(self._tally)] = self._tally
        self._tally, self._lo = new, lo

    def run(self, mode: int, target: int, cap: int) -> bool:
        """Advance until the stop rule holds (returns True) or ``t == cap``."""
        L, R = self.window.support.L, self.window.support.R
        while True:
            lo, cum = self.window.snapshot()
            self._realign(lo, len(cum))
            ui0 = self._ui
            status, self.pos, self.t, self._ui = K.advance(
                cum, lo, L, R, self.pos, self.t, self._u, self._ui,
                mode, target, cap, self._tally, self._pathbuf, self.record,
            )
            if self.record and self._ui > ui0:
                self._pieces.append(self._pathbuf[ui0 : self._ui].copy())
            if status == K.HIT:
                return True
            if status == K.CAP:
                return False
            if status == K.EDGE:
                self.window.ensure(self.pos - L, self.pos + R, grow=True)
            else:
                self._u = self.rng.random(self._chunk)
                self._ui = 0
                if self.record:
                    self._pathbuf = np.empty(self._chunk, dtype=np.int64)
                self._chunk = min(2 * self._chunk, _MAX_CHUNK)

    def occupation(self, site: int) -> int:
        i = site - self._lo
        return int(self._tally[i]) if 0 <= i < len(self._tally) else 0

    @property
    def positions(self) -> np.ndarray:
        if not self.record:
            raise ValueError("walk was not recorded")
        return np.concatenate(self._pieces)

    def path(self) -> WalkPath:
        return WalkPath(self.start, self.positions, self.lineage)

    def result(self, hit: bool, cap: int) -> HittingResult:
        return HittingResult(hit, self.t, self.pos, cap, self._lo, self._tally.copy())


def step(window: EnvironmentWindow, pos: int, rng: np.random.Generator) -> int:
    """One step from ``pos``; uses the same inversion rule as the compiled loop."""
    if pos not in window:
        window.ensure(pos, pos)
    lo, cum = window.snapshot()
    j = int(np.searchsorted(cum[pos - lo], rng.random(), side="right"))
    return pos + j - window.support.L


def _check_cap(step_cap: int) -> None:
    if step_cap <= 0:
        raise ValueError(f"step_cap must be positive, got {step_cap}")


def run_until_at_or_right_of(
    window: EnvironmentWindow,
    start: int,
    x: int,
    step_cap: int,
    rng: np.random.Generator,
) -> HittingResult:
    """Run until the first time the walk is at or right of ``x``."""
    _check_cap(step_cap)
    w = Walk(window, start, rng)
    return w.result(w.run(K.AT_OR_RIGHT, x, step_cap), step_cap)


def run_until_hit_exact(
    window: EnvironmentWindow,
    start: int,
    x: int,
    step_cap: int,
    rng: np.random.Generator,
) -> HittingResult:
    """Run until the first time the walk is exactly at ``x``."""
    _check_cap(step_cap)
    w = Walk(window, start, rng)
    return w.result(w.run(K.EXACT, x, step_cap), step_cap)


def occupation_before_level(
    window: EnvironmentWindow,
    start: int,
    site: int,
    barrier: int,
    step_cap: int,
    rng: np.random.Generator,
) -> OccupationCount:
    """Visits to ``site`` at times strictly before the walk first reaches ``[barrier, inf)``."""
    if site >= barrier:
        raise ValueError(f"site {site} must lie left of the barrier {barrier}")
    _check_cap(step_cap)
    w = Walk(window, start, rng)
    hit = w.run(K.AT_OR_RIGHT, barrier, step_cap)
    # the stopping position is >= barrier > site, so it never adds to the count
    return OccupationCount(w.occupation(site), not hit, w.t)


def simulate_path(
    window: EnvironmentWindow,
    start: int,
    n_steps: int,
    rng: np.random.Generator,
    lineage: str = "",
) -> WalkPath:
    w = Walk(window, start, rng, record=True, lineage=lineage)
    w.run(K.RUN, 0, n_steps)
    return w.path()


def write_trajectory(
    path: str | Path, walk: WalkPath, seed: int, law_hash: str, extra: dict | None = None
) -> None:
    """Dump a path: ``#``-prefixed ``key=value`` header lines, then one position per line."""
    header = f"# seed={seed}\n# law={law_hash}\n# start={walk.start}\n# lineage={walk.lineage}\n"
    header += "".join(f"# {k}={v}\n" for k, v in (extra or {}).items())
    body = "\n".join(map(str, walk.positions.tolist()))
    Path(path).write_text(header + body + "\n")


def read_trajectory(path: str | Path) -> tuple[WalkPath, dict[str, str]]:
    header: dict[str, str] = {}
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key.strip()] = val.strip()
        else:
            values.append(int(line))
    positions = np.asarray(values, dtype=np.int64)
    start = int(header.get("start", positions[0] if len(positions) else 0))
    return WalkPath(start, positions, header.get("lineage", "")), header
