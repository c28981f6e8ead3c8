"""Cascades of finite walks and the walk coming in from minus infinity.

Sites are grouped into levels ``((k-1)R, kR]``.  A walk cannot jump over a
level to its right, so the walk from site ``a``, stopped when it first
enters the next level, always lands in level ``level_of(a) + 1``.  A cascade
runs one such finite walk from every site, each driven by its own stream
keyed by ``(seed, site)``; splicing them along landing points gives a walk
from any start.  When the ``R`` walks from one level all land at the same
site ``x`` (a coalescence at ``x``), every spliced walk from further left
passes through ``x`` and agrees with the walk from ``x`` afterwards.  The
occupation count of a site ``s`` is therefore the same for all starts left
of the last coalescence before ``s``, and that common value is one sample of
the bi-infinite occupation count.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from rwre import _kernel as K
from rwre._rng import derive_seed, stream
from rwre.env import EnvironmentLaw, EnvironmentWindow
from rwre.walk import DEFAULT_STEP_CAP, Walk, WalkPath


class NoCoalescence(RuntimeError):
    """No coalescence point inside the searched levels; widen the search."""


class CascadeRejected(RuntimeError):
    """Too many finite walks of a cascade were censored."""


def level_of(x: int, R: int) -> int:
    """Index ``k`` of the level ``((k-1)R, kR]`` containing ``x``."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    return -((-x) // R)


def level_sites(k: int, R: int) -> range:
    return range((k - 1) * R + 1, k * R + 1)


@dataclass
class FiniteWalk:
    start: int
    positions: np.ndarray
    censored: bool

    @property
    def landing(self) -> int:
        return int(self.positions[-1])

    @property
    def steps(self) -> int:
        return len(self.positions) - 1


@dataclass(frozen=True)
class CoalescencePoint:
    site: int
    level: int


@dataclass
class Nbar0Sample:
    value: int
    x_star: int
    barrier: int
    censored: bool
    site: int = 0
    levels_searched: int = 0


class Cascade:
    """Finite walks from every site, built on demand and cached.

    The walk from ``a`` depends only on the environment and on
    ``(seed, a)``, so results do not depend on the order of construction.
    """

    def __init__(self, window: EnvironmentWindow, seed: int, step_cap: int = DEFAULT_STEP_CAP):
        self.window = window
        self.seed = int(seed)
        self.step_cap = int(step_cap)
        self.R = window.support.R
        self._walks: dict[int, FiniteWalk] = {}
        self.lo: int | None = None
        self.hi: int | None = None

    def walk_from(self, a: int) -> FiniteWalk:
        a = int(a)
        fw = self._walks.get(a)
        if fw is None:
            top = level_of(a, self.R) * self.R
            w = Walk(self.window, a, stream(self.seed, "cascade-site", a), record=True)
            hit = w.run(K.AT_OR_RIGHT, top + 1, self.step_cap)
            fw = FiniteWalk(a, w.positions, not hit)
            self._walks[a] = fw
        return fw

    def build(self, lo: int, hi: int) -> None:
        for a in range(lo, hi + 1):
            self.walk_from(a)
        self.lo = lo if self.lo is None else min(self.lo, lo)
        self.hi = hi if self.hi is None else max(self.hi, hi)

    def censored_fraction(self) -> float:
        if not self._walks:
            return 0.0
        return sum(fw.censored for fw in self._walks.values()) / len(self._walks)

    def coalescence_at_level(self, k: int, backtrack: int | None = None) -> int | None:
        """Coalescence site in level ``k``, or None.

        With ``backtrack`` set, additionally require that none of the walks
        from level ``k - 1`` reached level ``k - backtrack`` (a stricter event,
        usable as a cheap pre-filter).
        """
        landing = None
        floor = (k - backtrack) * self.R if backtrack is not None else None
        for a in level_sites(k - 1, self.R):
            fw = self.walk_from(a)
            if fw.censored:
                return None
            if landing is None:
                landing = fw.landing
            elif fw.landing != landing:
                return None
            if floor is not None and fw.positions.min() <= floor:
                return None
        return landing

    def route(self, start: int) -> Iterator[FiniteWalk]:
        """Finite walks spliced into the walk started at ``start``."""
        a = int(start)
        while True:
            fw = self.walk_from(a)
            yield fw
            if fw.censored:
                return
            a = fw.landing


def build_cascade(
    law: EnvironmentLaw,
    lo: int,
    hi: int,
    seed: int,
    step_cap: int = DEFAULT_STEP_CAP,
    max_censored_fraction: float = 0.01,
) -> Cascade:
    if lo >= hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    window = EnvironmentWindow(law, derive_seed(seed, "env"))
    cascade = Cascade(window, derive_seed(seed, "cascade"), step_cap)
    cascade.build(lo, hi)
    frac = cascade.censored_fraction()
    if frac > max_censored_fraction:
        raise CascadeRejected(
            f"{frac:.3%} of the finite walks in [{lo}, {hi}] hit the step cap {step_cap}"
            f" (threshold {max_censored_fraction:.3%})"
        )
    return cascade


def complete_levels(cascade: Cascade) -> range:
    """Levels ``k`` whose preceding level lies entirely inside the built range."""
    R = cascade.R
    # level j lies in [lo, hi] iff (j-1)R + 1 >= lo and jR <= hi
    j_first = level_of(cascade.lo - 1, R) + 1
    j_last = cascade.hi // R
    return range(j_first + 1, j_last + 2)


def find_coalescences(cascade: Cascade, backtrack: int | None = None) -> list[CoalescencePoint]:
    """All coalescence points whose preceding level is covered by the built range."""
    if cascade.lo is None:
        raise ValueError("cascade has no built range; call build() first")
    out = []
    for k in complete_levels(cascade):
        x = cascade.coalescence_at_level(k, backtrack)
        if x is not None:
            out.append(CoalescencePoint(x, k))
    return out


def coalescence_frequency(cascade: Cascade) -> float:
    levels = complete_levels(cascade)
    return len(find_coalescences(cascade)) / len(levels) if len(levels) else 0.0


def concatenated_walk(cascade: Cascade, from_site: int, n_steps: int) -> WalkPath:
    """First ``n_steps`` steps of the spliced walk from ``from_site``.

    Stops early if a finite walk on the route was censored.
    """
    pieces, total = [], 0
    for fw in cascade.route(from_site):
        body = fw.positions if fw.censored else fw.positions[:-1]
        pieces.append(body)
        total += len(body)
        if total > n_steps or fw.censored:
            break
    positions = np.concatenate(pieces)[: n_steps + 1]
    return WalkPath(from_site, positions, f"cascade:{cascade.seed}")


def spliced_hitting_time(cascade: Cascade, start: int, x: int) -> int | None:
    """First time the spliced walk from ``start`` is at or right of ``x``; None if censored."""
    t = 0
    for fw in cascade.route(start):
        ahead = np.flatnonzero(fw.positions >= x)
        if len(ahead):
            return t + int(ahead[0])
        if fw.censored:
            return None
        t += fw.steps
    return None


def spliced_occupation(cascade: Cascade, start: int, site: int, barrier: int) -> tuple[int, bool]:
    """Visits to ``site`` by the spliced walk from ``start`` before it reaches ``[barrier, inf)``."""
    count = 0
    for fw in cascade.route(start):
        body = fw.positions if fw.censored else fw.positions[:-1]
        ahead = np.flatnonzero(body >= barrier)
        if len(ahead):
            return count + int(np.count_nonzero(body[: ahead[0]] == site)), False
        count += int(np.count_nonzero(body == site))
        if fw.censored:
            return count, True
        if fw.landing >= barrier:
            return count, False
    raise AssertionError("unreachable")


def rightmost_coalescence(cascade: Cascade, site: int, search_cap_levels: int) -> tuple[int, int]:
    """Rightmost coalescence in a level entirely left of ``site``; returns ``(x, levels searched)``."""
    k0 = level_of(site, cascade.R) - 1
    for i in range(search_cap_levels):
        x = cascade.coalescence_at_level(k0 - i)
        if x is not None:
            return x, i + 1
    raise NoCoalescence(
        f"no coalescence in the {search_cap_levels} levels left of site {site}"
    )


def sample_Nbar0(
    law: EnvironmentLaw,
    seed: int,
    search_cap_levels: int,
    barrier: int,
    step_cap: int = DEFAULT_STEP_CAP,
    site: int = 0,
) -> Nbar0Sample:
    """One sample of the bi-infinite walk's occupation count at ``site``.

    Fresh environment and cascade per seed.  Visits are counted before the
    walk reaches ``site + barrier``; a censored finite walk on the route
    makes the sample a lower bound (``censored=True``).
    """
    if search_cap_levels < 1 or barrier < 1:
        raise ValueError("search_cap_levels and barrier must be positive")
    window = EnvironmentWindow(law, derive_seed(seed, "env"))
    cascade = Cascade(window, derive_seed(seed, "cascade"), step_cap)
    x_star, searched = rightmost_coalescence(cascade, site, search_cap_levels)
    value, censored = spliced_occupation(cascade, x_star, site, site + barrier)
    return Nbar0Sample(value, x_star, barrier, censored, site, searched)
