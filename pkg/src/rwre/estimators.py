"""Annealed Monte Carlo estimators and the ballisticity verdict.

Replica ``r`` draws its environment from ``(seed, "replica", r, "env")`` and
its walk from ``(seed, "replica", r, "walk")``.  Every estimator uses these
same keys, so estimates computed with one seed are paired replica by
replica, and results do not depend on how replicas are spread over workers.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from rwre import _kernel as K
from rwre._rng import derive_seed, stream
from rwre.cascade import NoCoalescence, sample_Nbar0
from rwre.env import (
    Atomic,
    ConfigError,
    EnvironmentLaw,
    EnvironmentWindow,
    NearestNeighbor,
    Periodic,
)
from rwre.oracle import Regime, nn_solomon
from rwre.regen import detect_regenerations, increments
from rwre.walk import Walk

LOWER_BOUND = "LOWER_BOUND"
UPPER_BOUND = "UPPER_BOUND"
DIVERGING = "DIVERGING"
DECAYING = "DECAYING"
INCONCLUSIVE = "INCONCLUSIVE"

MIN_INCREMENTS = 10
MAX_SEARCH_DOUBLINGS = 6


class NotTransientRight(RuntimeError):
    """The law failed the transience-to-the-right diagnostic."""


@dataclass(frozen=True)
class Budget:
    n_steps: int = 100_000
    replicas: int = 1000
    step_cap: int = 10_000
    barrier: int = 64
    D: int | None = None
    samples: int = 1000
    search_cap_levels: int = 64
    cascade_levels: int = 1000
    cascade_step_cap: int = 1_000_000
    hitting_replicas: int | None = None

    @property
    def n_hitting(self) -> int:
        """Replicas for the hitting-time and occupation estimators."""
        return self.hitting_replicas or self.replicas

    def __post_init__(self):
        problems = [
            f"budget.{k} must be a positive integer, got {v!r}"
            for k, v in asdict(self).items()
            if v is not None and (not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1)
        ]
        if problems:
            raise ConfigError(problems)

    def scaled(self, factor: int) -> "Budget":
        """Budget with replica and sample counts multiplied by ``factor``."""
        d = asdict(self)
        d.update(replicas=self.replicas * factor, samples=self.samples * factor)
        if self.hitting_replicas is not None:
            d["hitting_replicas"] = self.hitting_replicas * factor
        return Budget(**d)


@dataclass(frozen=True)
class Thresholds:
    n_sigma: float = 4.0
    max_censored: float = 0.01
    min_growth: float = 0.05
    decay_exponent: float = -0.1

    def __post_init__(self):
        problems = []
        if not self.n_sigma > 0:
            problems.append(f"thresholds.n_sigma must be positive, got {self.n_sigma}")
        if not 0 <= self.max_censored <= 1:
            problems.append(f"thresholds.max_censored must lie in [0, 1], got {self.max_censored}")
        if not self.min_growth >= 0:
            problems.append(f"thresholds.min_growth must be non-negative, got {self.min_growth}")
        if not self.decay_exponent < 0:
            problems.append(f"thresholds.decay_exponent must be negative, got {self.decay_exponent}")
        if problems:
            raise ConfigError(problems)


@dataclass
class EstimateWithCI:
    point: float
    stderr: float
    n: int
    censored_fraction: float
    method: str
    flags: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    raw: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.stderr >= 0 and not math.isnan(self.stderr):
            raise ValueError(f"stderr must be non-negative, got {self.stderr}")
        if not 0.0 <= self.censored_fraction <= 1.0:
            raise ValueError(f"censored_fraction must lie in [0, 1], got {self.censored_fraction}")

    @property
    def is_lower_bound(self) -> bool:
        return LOWER_BOUND in self.flags

    @property
    def is_upper_bound(self) -> bool:
        return UPPER_BOUND in self.flags

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "point": self.point,
            "stderr": self.stderr,
            "n": self.n,
            "censored_fraction": self.censored_fraction,
            "flags": list(self.flags),
            "diagnostics": _plain(self.diagnostics),
        }


class Verdict(str, enum.Enum):
    BALLISTIC = "Ballistic"
    ZERO_SPEED = "ZeroSpeed"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class BallisticityVerdict:
    verdict: Verdict
    evidence: dict[str, EstimateWithCI]
    reasons: list[str]
    transience: dict

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reasons": list(self.reasons),
            "transience": _plain(self.transience),
            "evidence": {k: v.to_dict() for k, v in self.evidence.items()},
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# replica plumbing


def _map(fn: Callable[[int], object], n: int, workers: int) -> list:
    """``[fn(0), ..., fn(n-1)]``; results come back in index order."""
    if workers <= 1 or n <= 1:
        return [fn(r) for r in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


class _Replicas:
    def __init__(self, law: EnvironmentLaw, seed: int, quenched: bool = False):
        self.law = law
        self.seed = int(seed)
        self._shared = EnvironmentWindow(law, derive_seed(seed, "quenched", "env")) if quenched else None

    def window(self, r: int) -> EnvironmentWindow:
        if self._shared is not None:
            return self._shared
        return EnvironmentWindow(self.law, derive_seed(self.seed, "replica", r, "env"))

    def walk(self, r: int, record: bool = False) -> Walk:
        return Walk(self.window(r), 0, stream(self.seed, "replica", r, "walk"), record=record)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), float("inf") if len(x) == 1 else float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _check_positive(**kw) -> None:
    bad = [f"{k} must be >= 1, got {v}" for k, v in kw.items() if v < 1]
    if bad:
        raise ConfigError(bad)


def _ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """``mean(num) / mean(den)`` over paired replicas with a delta-method error."""
    r = num.mean() / den.mean()
    resid = num - r * den
    return float(r), float(resid.std(ddof=1) / (math.sqrt(len(num)) * abs(den.mean())))


# ---------------------------------------------------------------------------
# velocity


def estimate_velocity_slope(
    law: EnvironmentLaw,
    n_steps: int,
    replicas: int,
    seed: int,
    *,
    workers: int = 1,
    quenched: bool = False,
    thresholds: Thresholds | None = None,
) -> EstimateWithCI:
    """Mean of ``X_n / n`` over replicas.

    Positions are also read off at ``n/4`` and ``n/2``.  A speed that is
    really zero shows up as ``X_t / t`` shrinking along these checkpoints;
    the fitted power of that decay is reported and flagged ``DECAYING`` when
    it is clearly negative.
    """
    _check_positive(n_steps=n_steps, replicas=replicas)
    th = thresholds or Thresholds()
    reps = _Replicas(law, seed, quenched)
    checkpoints = sorted({max(1, n_steps // 4), max(1, n_steps // 2), n_steps})

    def one(r):
        w = reps.walk(r)
        out = []
        for t in checkpoints:
            w.run(K.RUN, 0, t)
            out.append(w.pos)
        return out

    X = np.array(_map(one, replicas, workers), dtype=float)
    rates = X / np.array(checkpoints, dtype=float)
    point, se = _mean_se(rates[:, -1])
    diag = {"checkpoints": checkpoints, "rate_means": rates.mean(axis=0).tolist()}
    flags = []
    if len(checkpoints) == 3 and replicas >= 2 and rates[:, 0].mean() > 0:
        ratio, ratio_se = _ratio_se(rates[:, -1], rates[:, 0])
        span = checkpoints[-1] / checkpoints[0]
        exponent = math.log(ratio) / math.log(span) if ratio > 0 else float("-inf")
        z = (1.0 - ratio) / ratio_se if ratio_se > 0 else (float("inf") if ratio < 1 else 0.0)
        diag.update(decay_ratio=ratio, decay_ratio_se=ratio_se, decay_exponent=exponent, decay_z=z)
        if exponent < th.decay_exponent and z > th.n_sigma:
            flags.append(DECAYING)
    return EstimateWithCI(
        point, se, replicas, 0.0, "slope", flags, diag,
        raw={"X_n": X[:, -1].astype(np.int64), "rate": rates[:, -1]},
    )


def estimate_velocity_regen(
    law: EnvironmentLaw,
    n_steps: int,
    replicas: int,
    D: int | None,
    seed: int,
    *,
    workers: int = 1,
    quenched: bool = False,
) -> EstimateWithCI:
    """Pooled mean space increment over pooled mean time increment between regenerations.

    Only increments after the first regeneration enter.  ``D`` defaults to
    ``L + R``.
    """
    _check_positive(n_steps=n_steps, replicas=replicas)
    if D is None:
        D = law.support.L + law.support.R
    reps = _Replicas(law, seed, quenched)

    def one(r):
        w = reps.walk(r, record=True)
        w.run(K.RUN, 0, n_steps)
        rec = detect_regenerations(w.positions, D)
        inc = increments(rec)
        dt, dx = inc.dt.astype(float), inc.dx.astype(float)
        h = len(dt) // 2
        # moments only: a full increment list can run to tens of thousands per replica
        return (len(dt), dt.sum(), dx.sum(), dt @ dt, dx @ dx, dt @ dx,
                h, dt[:h].sum(), dt[:h] @ dt[:h], len(rec), rec.unconfirmed_tail_dropped)

    M = np.array(_map(one, replicas, workers), dtype=float)
    n, Sdt, Sdx, Stt, Sxx, Stx, h, Sh, Shh, n_reg, dropped = M.T
    N = int(n.sum())
    diag = {
        "D": D,
        "increments": N,
        "regenerations": int(n_reg.sum()),
        "unconfirmed_tail_dropped": int(dropped.sum()),
    }
    raw = {
        "increments": n.astype(np.int64),
        "sum_dt": Sdt.astype(np.int64),
        "sum_dx": Sdx.astype(np.int64),
        "regenerations": n_reg.astype(np.int64),
    }
    if N < MIN_INCREMENTS:
        diag["note"] = f"only {N} increments, need {MIN_INCREMENTS}"
        return EstimateWithCI(float("nan"), float("nan"), replicas, 0.0, "regen", [INCONCLUSIVE], diag, raw)
    T, X = Sdt.sum(), Sdx.sum()
    r = X / T
    # residuals dx - r dt have mean exactly zero by the choice of r
    ss = Sxx.sum() - 2 * r * Stx.sum() + r * r * Stt.sum()
    se = math.sqrt(max(ss, 0.0) / (N - 1)) / (math.sqrt(N) * (T / N))
    diag["halves_check"] = _halves_from_moments(
        (h.sum(), Sh.sum(), Shh.sum()), (N - h.sum(), T - Sh.sum(), Stt.sum() - Shh.sum())
    )
    return EstimateWithCI(float(r), float(se), replicas, 0.0, "regen", [], diag, raw)


def _halves_from_moments(a, b, n_sigma: float = 4.0) -> dict:
    """Mean time increment of the early half of each path against the late half."""
    (na, sa, qa), (nb, sb, qb) = a, b
    if na < 2 or nb < 2:
        return {"ok": True, "z": 0.0, "note": "too few increments"}
    ma, mb = sa / na, sb / nb
    va = (qa - na * ma * ma) / (na - 1)
    vb = (qb - nb * mb * mb) / (nb - 1)
    se = math.sqrt(max(va / na + vb / nb, 0.0))
    z = float(abs(ma - mb) / se) if se > 0 else 0.0
    return {"ok": z < n_sigma, "z": z, "note": ""}


def sample_Nbar0_batch(
    law: EnvironmentLaw,
    samples: int,
    seed: int,
    search_cap_levels: int,
    barrier: int,
    step_cap: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``samples`` independent bi-infinite occupation counts: (values, censored, x_star).

    A sample whose search window holds no coalescence is retried with the
    window doubled; the result is the same as a direct search with the
    larger window because the cascade is keyed by site.
    """

    def one(s):
        cap = search_cap_levels
        for _ in range(MAX_SEARCH_DOUBLINGS + 1):
            try:
                return sample_Nbar0(law, derive_seed(seed, "nbar", s), cap, barrier, step_cap)
            except NoCoalescence:
                cap *= 2
        raise NoCoalescence(f"sample {s}: no coalescence within {cap // 2} levels")

    res = _map(one, samples, workers)
    values = np.array([x.value for x in res], dtype=np.int64)
    censored = np.array([x.censored for x in res], dtype=bool)
    x_star = np.array([x.x_star for x in res], dtype=np.int64)
    return values, censored, x_star


def estimate_velocity_occupation(
    law: EnvironmentLaw,
    samples: int,
    caps: tuple[int, int, int],
    seed: int,
    *,
    workers: int = 1,
) -> EstimateWithCI:
    """``1 / mean(Nbar0)``; ``caps`` is ``(search_cap_levels, barrier, step_cap)``.

    Censored samples undercount visits, so the result is then an upper bound
    on the speed.
    """
    _check_positive(samples=samples)
    search_cap, barrier, step_cap = caps
    values, censored, x_star = sample_Nbar0_batch(law, samples, seed, search_cap, barrier, step_cap, workers)
    m, se_m = _mean_se(values)
    point = 1.0 / m if m > 0 else float("inf")
    se = se_m / m**2 if m > 0 else float("inf")
    frac = float(censored.mean())
    flags = [UPPER_BOUND] if frac > 0 else []
    diag = {"mean_Nbar0": m, "mean_Nbar0_se": se_m, "barrier": barrier, "search_cap_levels": search_cap}
    return EstimateWithCI(
        point, se, samples, frac, "occupation", flags, diag,
        raw={"value": values, "censored": censored, "x_star": x_star},
    )


# ---------------------------------------------------------------------------
# hitting time and occupation of 0 from the origin


def _z(mean: float, se: float) -> float:
    if mean <= 0:
        return 0.0
    return mean / se if se > 0 else float("inf")


def _doubling(stages: np.ndarray, censored: np.ndarray, th: Thresholds, method: str, stage_labels) -> EstimateWithCI:
    """Estimate at the first stage plus the growth diagnostic across stages.

    DIVERGING needs the mean to grow by more than ``min_growth`` from the
    first to the last stage, and the paired increase to be significant.
    Significance is judged on ``log((1 + last) / (1 + first))`` per replica:
    the raw differences are dominated by a handful of huge replicas exactly
    when the expectation is infinite, which hides the growth they measure.
    """
    first, last = stages[:, 0], stages[:, -1]
    point, se = _mean_se(first)
    means = stages.mean(axis=0)
    growth = float(means[-1] / means[0] - 1.0) if means[0] > 0 else float("inf")
    z_mean = _z(*_mean_se(last - first))
    z_log = _z(*_mean_se(np.log1p(last) - np.log1p(first)))
    k = stages.shape[1]
    growth_slope = float(np.polyfit(np.arange(k), np.log(np.maximum(means, 1e-300)), 1)[0]) if k > 1 else 0.0
    flags = []
    frac = float(censored[:, 0].mean())
    if frac > 0:
        flags.append(LOWER_BOUND)
    if growth > th.min_growth and z_log > th.n_sigma:
        flags.append(DIVERGING)
    diag = {
        "stages": stage_labels,
        "stage_means": means.tolist(),
        "stage_censored": censored.mean(axis=0).tolist(),
        "growth": growth,
        "growth_z": z_log,
        "growth_z_raw": z_mean,
        "log_growth_per_doubling": growth_slope,
    }
    raw = {f"stage{i}": stages[:, i] for i in range(stages.shape[1])}
    raw["censored"] = censored[:, 0]
    return EstimateWithCI(point, se, len(first), frac, method, flags, diag, raw)


def estimate_EH1(
    law: EnvironmentLaw,
    replicas: int,
    step_cap: int,
    seed: int,
    *,
    workers: int = 1,
    quenched: bool = False,
    thresholds: Thresholds | None = None,
    doublings: int = 2,
) -> EstimateWithCI:
    """Mean of ``H_{>=1}`` with censored replicas counted at the cap.

    The walk of each replica is continued to caps ``2c`` and ``4c``; a mean
    that keeps growing under these doublings is flagged ``DIVERGING``.
    """
    _check_positive(replicas=replicas, step_cap=step_cap)
    th = thresholds or Thresholds()
    reps = _Replicas(law, seed, quenched)
    caps = [step_cap << i for i in range(doublings + 1)]

    def one(r):
        w = reps.walk(r)
        vals, cens = [], []
        for c in caps:
            hit = w.run(K.AT_OR_RIGHT, 1, c)
            vals.append(w.t)
            cens.append(not hit)
        return vals, cens

    res = _map(one, replicas, workers)
    stages = np.array([v for v, _ in res], dtype=float)
    censored = np.array([c for _, c in res], dtype=bool)
    return _doubling(stages, censored, th, "EH1", [{"step_cap": c} for c in caps])


def estimate_EN0(
    law: EnvironmentLaw,
    replicas: int,
    barrier: int,
    step_cap: int,
    seed: int,
    *,
    workers: int = 1,
    quenched: bool = False,
    thresholds: Thresholds | None = None,
    doublings: int = 2,
) -> EstimateWithCI:
    """Mean number of visits to 0 before the walk reaches ``[barrier, inf)``.

    Barrier and cap are doubled together for the growth diagnostic; the same
    trajectory is continued, so the stage values are nondecreasing per replica.
    """
    _check_positive(replicas=replicas, barrier=barrier, step_cap=step_cap)
    th = thresholds or Thresholds()
    reps = _Replicas(law, seed, quenched)
    plan = [(barrier << i, step_cap << i) for i in range(doublings + 1)]

    def one(r):
        w = reps.walk(r)
        vals, cens = [], []
        for m, c in plan:
            hit = w.run(K.AT_OR_RIGHT, m, c)
            vals.append(w.occupation(0))
            cens.append(not hit)
        return vals, cens

    res = _map(one, replicas, workers)
    stages = np.array([v for v, _ in res], dtype=float)
    censored = np.array([c for _, c in res], dtype=bool)
    return _doubling(stages, censored, th, "EN0", [{"barrier": m, "step_cap": c} for m, c in plan])


# ---------------------------------------------------------------------------
# transience and the verdict


def transience_diagnostic(
    law: EnvironmentLaw,
    seed: int = 0,
    replicas: int = 200,
    n_steps: int = 20_000,
    n_sigma: float = 4.0,
) -> dict:
    """Check that the walk is transient to the right.

    Exact for nearest-neighbor laws and for laws in which every site drifts
    right; otherwise a Monte Carlo check that the mean position after
    ``n_steps`` is clearly positive.
    """
    if isinstance(law, NearestNeighbor):
        res = nn_solomon(law)
        ok = res.regime in (Regime.TRANSIENT_RIGHT_BALLISTIC, Regime.TRANSIENT_RIGHT_ZERO_SPEED)
        return {"status": "PASS" if ok else "FAIL", "method": "moment criterion", "regime": res.regime.value}
    sls = law.essential_site_laws()
    if isinstance(law, Periodic):
        drift = float(np.mean([s.mean for s in sls]))
        return {"status": "PASS" if drift > 0 else "FAIL", "method": "period drift", "drift": drift}
    if isinstance(law, Atomic) and min(s.mean for s in sls) > 0:
        return {"status": "PASS", "method": "every site drifts right", "min_drift": min(s.mean for s in sls)}
    est = estimate_velocity_slope(law, n_steps, replicas, derive_seed(seed, "transience"))
    z = est.point / est.stderr if est.stderr > 0 else (float("inf") if est.point > 0 else 0.0)
    return {
        "status": "PASS" if z > n_sigma else "FAIL",
        "method": "Monte Carlo mean displacement",
        "mean_rate": est.point,
        "z": z,
    }


def ballisticity_verdict(
    law: EnvironmentLaw,
    budget: Budget,
    seed: int,
    *,
    thresholds: Thresholds | None = None,
    workers: int = 1,
) -> BallisticityVerdict:
    """Ballistic / ZeroSpeed / Inconclusive from the slope, ``E[H>=1]`` and ``E[N0]`` estimates.

    Ballistic: slope clearly positive, not decaying along the checkpoints,
    neither expectation diverging, censoring below threshold.
    ZeroSpeed: ``E[H>=1]`` diverging and the slope either consistent with 0
    or decaying.
    """
    th = thresholds or Thresholds()
    trans = transience_diagnostic(law, seed)
    if trans["status"] != "PASS":
        raise NotTransientRight(f"transience-to-the-right check failed: {trans}")
    slope = estimate_velocity_slope(law, budget.n_steps, budget.replicas, seed, workers=workers, thresholds=th)
    eh1 = estimate_EH1(law, budget.n_hitting, budget.step_cap, seed, workers=workers, thresholds=th)
    en0 = estimate_EN0(law, budget.n_hitting, budget.barrier, budget.step_cap, seed, workers=workers, thresholds=th)
    evidence = {"slope": slope, "EH1": eh1, "EN0": en0}

    reasons = []
    separated = slope.point - th.n_sigma * slope.stderr > 0
    near_zero = abs(slope.point) <= th.n_sigma * slope.stderr
    decaying = DECAYING in slope.flags
    diverging = [k for k in ("EH1", "EN0") if DIVERGING in evidence[k].flags]
    censored_ok = all(e.censored_fraction <= th.max_censored for e in evidence.values())
    reasons.append(f"slope {slope.point:.6g} +/- {slope.stderr:.3g}"
                   + (" separated from 0" if separated else " not separated from 0"))
    if decaying:
        reasons.append(f"X_t/t decays along checkpoints (exponent {slope.diagnostics['decay_exponent']:.3g})")
    if diverging:
        reasons.append(f"diverging under doubling: {', '.join(diverging)}")
    if not censored_ok:
        reasons.append("censored fraction above threshold")

    if separated and not decaying and not diverging and censored_ok:
        verdict = Verdict.BALLISTIC
    elif "EH1" in diverging and (near_zero or decaying):
        verdict = Verdict.ZERO_SPEED
    else:
        verdict = Verdict.INCONCLUSIVE
    return BallisticityVerdict(verdict, evidence, reasons, trans)


def combined_se(*ses: float) -> float:
    return float(math.sqrt(sum(s * s for s in ses)))


def inverse_with_se(est: EstimateWithCI) -> tuple[float, float]:
    """``1 / point`` with a delta-method standard error."""
    if est.point <= 0:
        return float("inf"), float("inf")
    return 1.0 / est.point, est.stderr / est.point**2


__all__: Sequence[str] = [
    "Budget",
    "Thresholds",
    "EstimateWithCI",
    "Verdict",
    "BallisticityVerdict",
    "NotTransientRight",
    "estimate_velocity_slope",
    "estimate_velocity_regen",
    "estimate_velocity_occupation",
    "sample_Nbar0_batch",
    "estimate_EH1",
    "estimate_EN0",
    "transience_diagnostic",
    "ballisticity_verdict",
    "combined_se",
    "inverse_with_se",
]
