"""Exact and bracketed reference values.

* Nearest-neighbor i.i.d. environments: the classical moment criteria on
  ``rho = (1 - p) / p`` decide the regime and give the speed.
* Deterministic (homogeneous or periodic) environments: expected hitting
  times and expected visit counts solve banded linear systems on a
  left-truncated state space.  Each quantity is solved twice with two
  different left boundary treatments that bound the true value from below
  and from above; the truncation is doubled until the bracket closes.
"""

from __future__ import annotations

import enum
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from rwre.env import Atomic, EnvironmentLaw, NearestNeighbor, Periodic, SiteLaw


class UnsupportedLaw(ValueError):
    pass


class SingularSystem(ArithmeticError):
    pass


class Regime(str, enum.Enum):
    TRANSIENT_RIGHT_BALLISTIC = "TransientRightBallistic"
    TRANSIENT_RIGHT_ZERO_SPEED = "TransientRightZeroSpeed"
    TRANSIENT_LEFT_BALLISTIC = "TransientLeftBallistic"
    TRANSIENT_LEFT_ZERO_SPEED = "TransientLeftZeroSpeed"
    RECURRENT = "Recurrent"


@dataclass
class NNOracleResult:
    regime: Regime
    v: float
    E_rho: float
    E_log_rho: float
    E_inv_rho: float

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "v": self.v,
            "E_rho": self.E_rho,
            "E_log_rho": self.E_log_rho,
            "E_inv_rho": self.E_inv_rho,
        }


def nn_solomon(law: EnvironmentLaw, tol: float = 1e-12) -> NNOracleResult:
    """Regime and speed of a nearest-neighbor walk in an i.i.d. atomic environment.

    Transient to the right iff ``E[log rho] < 0``; then the speed is
    ``(1 - E[rho]) / (1 + E[rho])`` when ``E[rho] < 1`` and 0 otherwise.
    The left-transient case is the mirror image with ``1/rho``.
    """
    if not isinstance(law, NearestNeighbor):
        raise UnsupportedLaw(f"nearest-neighbor oracle needs a NearestNeighbor law, got {type(law).__name__}")
    ps = np.asarray(law.ps)
    w = np.asarray(law.weights)
    keep = w > 0
    ps, w = ps[keep], w[keep]
    if np.any((ps <= 0) | (ps >= 1)):
        raise UnsupportedLaw("every charged atom needs p strictly inside (0, 1)")
    rho = (1 - ps) / ps
    E_rho = float(np.dot(w, rho))
    E_inv = float(np.dot(w, 1 / rho))
    E_log = float(np.dot(w, np.log(rho)))
    if E_log < -tol:
        if E_rho < 1:
            return NNOracleResult(Regime.TRANSIENT_RIGHT_BALLISTIC, (1 - E_rho) / (1 + E_rho), E_rho, E_log, E_inv)
        return NNOracleResult(Regime.TRANSIENT_RIGHT_ZERO_SPEED, 0.0, E_rho, E_log, E_inv)
    if E_log > tol:
        if E_inv < 1:
            return NNOracleResult(Regime.TRANSIENT_LEFT_BALLISTIC, -(1 - E_inv) / (1 + E_inv), E_rho, E_log, E_inv)
        return NNOracleResult(Regime.TRANSIENT_LEFT_ZERO_SPEED, 0.0, E_rho, E_log, E_inv)
    return NNOracleResult(Regime.RECURRENT, 0.0, E_rho, E_log, E_inv)


def homogeneous_velocity(site_law: SiteLaw | EnvironmentLaw) -> float:
    """Mean jump of a deterministic homogeneous environment."""
    if isinstance(site_law, EnvironmentLaw):
        sls = site_law.essential_site_laws()
        if not isinstance(site_law, (Atomic, NearestNeighbor, Periodic)) or len(set(sls)) != 1:
            raise UnsupportedLaw("homogeneous_velocity needs a single-atom law")
        site_law = sls[0]
    v = site_law.mean
    if v <= 0:
        warnings.warn(f"mean jump {v} is not positive; the walk is not transient to the right", stacklevel=2)
    return v


@dataclass
class LinearSystemResult:
    value: float
    truncation: int
    lower: float
    upper: float
    converged: bool
    certified: bool = True

    @property
    def bracket(self) -> tuple[float, float]:
        return self.lower, self.upper

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "M": self.truncation,
            "bracket": [self.lower, self.upper],
            "converged": self.converged,
            "certified": self.certified,
        }


def _as_laws(laws: SiteLaw | Sequence[SiteLaw] | EnvironmentLaw) -> list[SiteLaw]:
    if isinstance(laws, SiteLaw):
        return [laws]
    if isinstance(laws, Periodic):
        return list(laws.laws)
    if isinstance(laws, EnvironmentLaw):
        sls = laws.essential_site_laws()
        if isinstance(laws, (Atomic, NearestNeighbor)) and len(set(sls)) == 1:
            return sls[:1]
        raise UnsupportedLaw("linear-system oracle needs a deterministic (homogeneous or periodic) environment")
    laws = list(laws)
    if not laws or any(s.support != laws[0].support for s in laws):
        raise UnsupportedLaw("need a non-empty list of site laws with one shared support")
    return laws


class _Chain:
    """Generator rows ``I - P`` restricted to sites ``[first, last]`` in banded storage."""

    def __init__(self, laws: list[SiteLaw], first: int, last: int):
        self.laws = laws
        self.L, self.R = laws[0].support.L, laws[0].support.R
        self.first, self.last = first, last
        n = last - first + 1
        self.n = n
        table = np.array([s.probs for s in laws])
        sites = np.arange(first, last + 1)
        self.P = table[sites % len(laws)]  # P[i, j] = mass of offset j - L at site first + i
        ab = np.zeros((self.L + self.R + 1, n))
        for j, off in enumerate(range(-self.L, self.R + 1)):
            # entry (i, i + off) lives at ab[R - off, i + off]
            col = np.arange(n) + off
            ok = (col >= 0) & (col < n)
            ab[self.R - off, col[ok]] -= self.P[ok, j]
        ab[self.R] += 1.0
        self.ab = ab

    def exits(self) -> list[tuple[np.ndarray, np.ndarray, int]]:
        """``(rows, masses, landing offset)`` of one-step jumps leaving the truncation on the left."""
        out = []
        rows = np.arange(self.n)
        for j, off in enumerate(range(-self.L, 0)):
            lands = self.first + rows + off
            sel = lands < self.first
            if sel.any():
                out.append((rows[sel], self.P[sel, j], off))
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        try:
            with np.errstate(all="raise"):
                x = solve_banded((self.L, self.R), self.ab, rhs)
        except (LinAlgError, FloatingPointError) as exc:
            raise SingularSystem(f"truncated system on [{self.first}, {self.last}] is singular") from exc
        if not np.all(np.isfinite(x)):
            raise SingularSystem(f"truncated system on [{self.first}, {self.last}] is singular")
        return x


def _check_drift(laws: list[SiteLaw]) -> float:
    drift = float(np.mean([s.mean for s in laws]))
    if drift <= 0:
        raise UnsupportedLaw(f"period-averaged drift {drift} is not positive")
    return drift


def _bracketed(solve_at, M0: int, tol: float, max_M: int) -> LinearSystemResult:
    M = M0
    while True:
        lower, upper, certified = solve_at(M)
        if upper - lower < tol or 2 * M > max_M:
            lower, upper = float(lower), float(upper)
            converged = bool(upper - lower < tol)
            return LinearSystemResult(0.5 * (lower + upper), M, lower, upper, converged, certified)
        M *= 2


def expected_hit_right_linear(
    laws: SiteLaw | Sequence[SiteLaw] | EnvironmentLaw,
    M: int | None = None,
    tol: float = 1e-10,
    max_M: int = 1 << 17,
) -> LinearSystemResult:
    """Expected time for the walk from 0 to reach ``[1, inf)``.

    States ``[-M, 0]``; ``h = 0`` on ``[1, inf)``.  Jumps below ``-M`` are
    either killed (``h = 0`` there, a lower bound) or charged the penalty
    ``(R - y) / mu`` where ``mu`` is the smallest site drift: that linear
    function dominates the true expected time whenever every site drifts
    right, which makes the second solve an upper bound.  Without a positive
    minimum drift the period-averaged drift is used and the bracket is
    marked uncertified.
    """
    laws = _as_laws(laws)
    L, R = laws[0].support.L, laws[0].support.R
    drift = _check_drift(laws)
    mu_min = min(s.mean for s in laws)
    certified = mu_min > 0
    mu = mu_min if certified else drift
    M0 = max(L + R, M or 0)

    def solve_at(m):
        chain = _Chain(laws, -m, 0)
        lower = chain.solve(np.ones(chain.n))
        rhs = np.ones(chain.n)
        for rows, mass, off in chain.exits():
            y = chain.first + rows + off
            rhs[rows] += mass * (R - y) / mu
        upper = chain.solve(rhs)
        return lower[-1], upper[-1], certified

    return _bracketed(solve_at, M0, tol, max_M)


def expected_occupation_linear(
    laws: SiteLaw | Sequence[SiteLaw] | EnvironmentLaw,
    barrier: int,
    M: int | None = None,
    tol: float = 1e-10,
    max_M: int = 1 << 17,
) -> LinearSystemResult:
    """Expected visits to 0 (time 0 included) before the walk from 0 reaches ``[barrier, inf)``.

    States ``[-M, barrier - 1]``.  Lower bound: jumps below ``-M`` are
    killed.  Upper bound: they are sent straight back to 0, which can only
    add visits because from anywhere the expected number of further visits
    is at most the value at 0 itself.
    """
    if barrier < 1:
        raise ValueError(f"barrier must be >= 1, got {barrier}")
    laws = _as_laws(laws)
    L, R = laws[0].support.L, laws[0].support.R
    _check_drift(laws)
    M0 = max(L + R, M or 0)

    def solve_at(m):
        chain = _Chain(laws, -m, barrier - 1)
        i0 = m  # row of site 0
        e0 = np.zeros(chain.n)
        e0[i0] = 1.0
        g = chain.solve(e0)
        leak = np.zeros(chain.n)
        for rows, mass, _ in chain.exits():
            np.add.at(leak, rows, mass)
        w = chain.solve(leak)  # probability of leaving on the left before the barrier
        lower = g[i0]
        upper = lower / (1.0 - w[i0])
        return lower, upper, True

    return _bracketed(solve_at, M0, tol, max_M)
