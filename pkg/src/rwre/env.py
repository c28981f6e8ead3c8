"""Site laws, i.i.d. environment laws and lazily realized environments.

An environment assigns to every integer site a probability vector over the
jump offsets ``-L..R``.  Environment laws describe the common distribution of
that vector; sites are independent.  :class:`EnvironmentWindow` materializes
an environment on a contiguous interval and can grow in both directions
without changing what was already realized, because every block of sites is
drawn from its own stream keyed by ``(seed, block index)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from rwre._kernel import cumulative_rows
from rwre._rng import stream

PROB_TOL = 1e-12
BLOCK_SIZE = 4096


class ConfigError(ValueError):
    """Invalid law or experiment configuration.

    ``problems`` lists every violated field, not only the first one found.
    """

    def __init__(self, problems: str | Sequence[str]):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class JumpSupport:
    L: int
    R: int

    def __post_init__(self):
        if int(self.L) != self.L or int(self.R) != self.R or self.L < 1 or self.R < 1:
            raise ConfigError(f"jump support needs integers L >= 1 and R >= 1, got L={self.L}, R={self.R}")

    @property
    def width(self) -> int:
        return self.L + self.R + 1

    @property
    def offsets(self) -> range:
        return range(-self.L, self.R + 1)


def _check_probs(probs: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(probs)):
        raise ConfigError(f"{what}: non-finite probability")
    if np.any(probs < 0):
        raise ConfigError(f"{what}: negative probability {probs.min()!r}")
    total = probs.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise ConfigError(f"{what}: probabilities sum to {total!r}, not 1")
    return probs / total


@dataclass(frozen=True)
class SiteLaw:
    """Jump distribution at one site, ``probs[i]`` is the mass of offset ``i - L``."""

    support: JumpSupport
    probs: tuple[float, ...]

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.shape != (self.support.width,):
            raise ConfigError(
                f"site law needs {self.support.width} entries for offsets "
                f"{-self.support.L}..{self.support.R}, got {arr.shape}"
            )
        arr = _check_probs(arr, "site law")
        object.__setattr__(self, "probs", tuple(float(p) for p in arr))

    @classmethod
    def from_offsets(cls, masses: Mapping[int, float], support: JumpSupport) -> "SiteLaw":
        probs = [0.0] * support.width
        for off, p in masses.items():
            off = int(off)
            if not -support.L <= off <= support.R:
                raise ConfigError(f"offset {off} outside [-{support.L}, {support.R}]")
            probs[off + support.L] += float(p)
        return cls(support, tuple(probs))

    @classmethod
    def nearest_neighbor(cls, p: float) -> "SiteLaw":
        return cls(JumpSupport(1, 1), (1.0 - p, 0.0, p))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs)

    def prob(self, offset: int) -> float:
        if not -self.support.L <= offset <= self.support.R:
            return 0.0
        return self.probs[offset + self.support.L]

    @property
    def mean(self) -> float:
        return float(np.dot(self.support.offsets, self.probs))

    def charged_offsets(self) -> list[int]:
        return [off for off, p in zip(self.support.offsets, self.probs) if p > 0]

    def with_support(self, support: JumpSupport) -> "SiteLaw":
        """Same law embedded in a wider offset range."""
        return SiteLaw.from_offsets(dict(zip(self.support.offsets, self.probs)), support)


class EnvironmentLaw:
    """Common law of the i.i.d. site laws."""

    support: JumpSupport

    def sample_block(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def realize_block(self, seed: int, block: int, size: int) -> np.ndarray:
        return self.sample_block(stream(seed, "env-block", block), size)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def essential_site_laws(self) -> list[SiteLaw]:
        """Site laws whose supports cover the law's essential support."""
        raise NotImplementedError

    @property
    def law_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ConfigError("atom weights must be a non-empty list")
    return _check_probs(w, "atom weights")


def _pick(rng: np.random.Generator, weights: np.ndarray, n: int) -> np.ndarray:
    cum = np.cumsum(weights)
    idx = np.searchsorted(cum, rng.random(n), side="right")
    return np.minimum(idx, len(weights) - 1)


@dataclass(frozen=True)
class Atomic(EnvironmentLaw):
    atoms: tuple[SiteLaw, ...]
    weights: tuple[float, ...]
    support: JumpSupport = field(default=None)

    def __post_init__(self):
        if not self.atoms:
            raise ConfigError("atomic law needs at least one atom")
        if len(self.atoms) != len(self.weights):
            raise ConfigError("atomic law: number of weights differs from number of atoms")
        support = self.support or self.atoms[0].support
        if any(a.support != support for a in self.atoms):
            raise ConfigError("atomic law: all atoms must share the same jump support")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", tuple(float(w) for w in _check_weights(self.weights)))
        object.__setattr__(self, "_table", np.array([a.probs for a in self.atoms]))

    @classmethod
    def single(cls, site_law: SiteLaw) -> "Atomic":
        return cls((site_law,), (1.0,))

    def sample_block(self, rng, n):
        return self._table[_pick(rng, np.asarray(self.weights), n)]

    def essential_site_laws(self):
        return [a for a, w in zip(self.atoms, self.weights) if w > 0]

    def to_dict(self):
        return {
            "kind": "atomic",
            "L": self.support.L,
            "R": self.support.R,
            "atoms": [
                {"weight": w, "probs": {str(o): p for o, p in zip(self.support.offsets, a.probs) if p > 0}}
                for a, w in zip(self.atoms, self.weights)
            ],
        }


@dataclass(frozen=True)
class NearestNeighbor(EnvironmentLaw):
    """``p`` is the probability of a +1 step; the rest goes to -1."""

    ps: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.ps or len(self.ps) != len(self.weights):
            raise ConfigError("nearest-neighbor law needs matching non-empty p and weight lists")
        bad = [p for p in self.ps if not 0.0 <= p <= 1.0]
        if bad:
            raise ConfigError(f"nearest-neighbor p values must lie in [0, 1], got {bad}")
        object.__setattr__(self, "ps", tuple(float(p) for p in self.ps))
        object.__setattr__(self, "weights", tuple(float(w) for w in _check_weights(self.weights)))

    @property
    def support(self) -> JumpSupport:
        return JumpSupport(1, 1)

    def sample_block(self, rng, n):
        p = np.asarray(self.ps)[_pick(rng, np.asarray(self.weights), n)]
        return np.column_stack([1.0 - p, np.zeros(n), p])

    def essential_site_laws(self):
        return [SiteLaw.nearest_neighbor(p) for p, w in zip(self.ps, self.weights) if w > 0]

    def to_dict(self):
        return {
            "kind": "nearest_neighbor",
            "atoms": [{"p": p, "weight": w} for p, w in zip(self.ps, self.weights)],
        }


@dataclass(frozen=True)
class DirichletOffsets(EnvironmentLaw):
    """Dirichlet site laws; offsets absent from ``alpha`` carry no mass."""

    alpha: tuple[tuple[int, float], ...]
    support: JumpSupport

    def __post_init__(self):
        alpha = tuple(sorted((int(o), float(a)) for o, a in dict(self.alpha).items()))
        problems = []
        if len(alpha) < 2:
            problems.append("Dirichlet law needs at least two charged offsets")
        for off, a in alpha:
            if not a > 0 or not math.isfinite(a):
                problems.append(f"Dirichlet parameter for offset {off} must be strictly positive, got {a}")
            if not -self.support.L <= off <= self.support.R:
                problems.append(f"Dirichlet offset {off} outside [-{self.support.L}, {self.support.R}]")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "alpha", alpha)

    def sample_block(self, rng, n):
        offs = [o for o, _ in self.alpha]
        draws = rng.dirichlet([a for _, a in self.alpha], size=n)
        out = np.zeros((n, self.support.width))
        out[:, [o + self.support.L for o in offs]] = draws
        return out

    @property
    def mean_site_law(self) -> SiteLaw:
        total = sum(a for _, a in self.alpha)
        return SiteLaw.from_offsets({o: a / total for o, a in self.alpha}, self.support)

    def essential_site_laws(self):
        return [self.mean_site_law]

    def to_dict(self):
        return {
            "kind": "dirichlet",
            "L": self.support.L,
            "R": self.support.R,
            "alpha": {str(o): a for o, a in self.alpha},
        }


@dataclass(frozen=True)
class Periodic(EnvironmentLaw):
    """Deterministic environment: site ``x`` carries ``laws[x mod len(laws)]``."""

    laws: tuple[SiteLaw, ...]

    def __post_init__(self):
        if not self.laws:
            raise ConfigError("periodic environment needs at least one site law")
        if any(s.support != self.laws[0].support for s in self.laws):
            raise ConfigError("periodic environment: site laws must share one jump support")

    @property
    def support(self) -> JumpSupport:
        return self.laws[0].support

    def realize_block(self, seed, block, size):
        table = np.array([s.probs for s in self.laws])
        sites = np.arange(block * size, (block + 1) * size)
        return table[sites % len(self.laws)]

    def essential_site_laws(self):
        return list(self.laws)

    def to_dict(self):
        return {
            "kind": "periodic",
            "L": self.support.L,
            "R": self.support.R,
            "laws": [list(s.probs) for s in self.laws],
        }


class EnvironmentWindow:
    """Environment realized on the block-aligned interval ``[lo, hi]``.

    ``cum[x - lo]`` holds the cumulative sums of the site law at ``x``; only
    these are kept, :attr:`probs` is recovered from them on demand.  Reads are safe from several threads; :meth:`ensure`
    takes a lock and swaps in new arrays.
    """

    def __init__(self, law: EnvironmentLaw, seed: int, block_size: int = BLOCK_SIZE):
        self.law = law
        self.seed = int(seed)
        self.block_size = block_size
        self._lock = threading.Lock()
        # (first block, last block, cum), swapped as one object so readers see a consistent view
        self._snap = (0, -1, np.zeros((0, law.support.width)))

    @property
    def support(self) -> JumpSupport:
        return self.law.support

    @property
    def lo(self) -> int:
        return self._snap[0] * self.block_size

    @property
    def hi(self) -> int:
        return (self._snap[1] + 1) * self.block_size - 1

    @property
    def cum(self) -> np.ndarray:
        return self._snap[2]

    @property
    def probs(self) -> np.ndarray:
        cum = self._snap[2]
        return np.diff(cum, axis=1, prepend=0.0)

    def snapshot(self) -> tuple[int, np.ndarray]:
        """``(lo, cum)`` taken atomically."""
        b_lo, _, cum = self._snap
        return b_lo * self.block_size, cum

    def __len__(self):
        return self._snap[2].shape[0]

    def __contains__(self, x: int) -> bool:
        return len(self) > 0 and self.lo <= x <= self.hi

    def _blocks(self, b_from: int, b_to: int) -> np.ndarray:
        size = self.block_size
        probs = [self.law.realize_block(self.seed, b, size) for b in range(b_from, b_to + 1)]
        return cumulative_rows(np.concatenate(probs))

    def ensure(self, lo: int, hi: int, grow: bool = False) -> None:
        """Realize at least ``[lo, hi]``.

        With ``grow`` the window at least doubles on the side that is
        extended, which keeps repeated extension by a walk linear overall.
        """
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        size = self.block_size
        b_lo, b_hi = lo // size, hi // size
        with self._lock:
            cur_lo, cur_hi, cum = self._snap
            if len(cum) == 0:
                self._snap = (b_lo, b_hi, self._blocks(b_lo, b_hi))
                return
            if b_lo >= cur_lo and b_hi <= cur_hi:
                return
            n_blocks = cur_hi - cur_lo + 1
            new_lo, new_hi = cur_lo, cur_hi
            parts = [cum]
            if b_lo < cur_lo:
                new_lo = min(b_lo, cur_lo - n_blocks) if grow else b_lo
                parts.insert(0, self._blocks(new_lo, cur_lo - 1))
            if b_hi > cur_hi:
                new_hi = max(b_hi, cur_hi + n_blocks) if grow else b_hi
                parts.append(self._blocks(cur_hi + 1, new_hi))
            self._snap = (new_lo, new_hi, np.concatenate(parts))

    def site_law(self, x: int) -> SiteLaw:
        if x not in self:
            self.ensure(x, x)
        lo, cum = self.snapshot()
        return SiteLaw(self.support, tuple(np.diff(cum[x - lo], prepend=0.0)))

    def __getitem__(self, x: int) -> SiteLaw:
        return self.site_law(x)


def realize_window(law: EnvironmentLaw, lo: int, hi: int, seed: int) -> EnvironmentWindow:
    window = EnvironmentWindow(law, seed)
    window.ensure(lo, hi)
    return window


def sample_site_law(law: EnvironmentLaw, site: int, seed: int) -> SiteLaw:
    """Site law at ``site`` in the environment keyed by ``seed``.

    Equal to ``realize_window(law, lo, hi, seed)[site]`` for every window
    containing ``site``.
    """
    block, i = divmod(site, BLOCK_SIZE)
    return SiteLaw(law.support, tuple(law.realize_block(seed, block, BLOCK_SIZE)[i]))


@dataclass
class ConditionReport:
    bounded_jumps: bool
    irreducible: str
    sufficient_only: bool
    drift_range: tuple[float, float]
    notes: list[str]

    @property
    def ok(self) -> bool:
        return self.bounded_jumps and self.irreducible == "PASS"


def validate_conditions(law: EnvironmentLaw) -> ConditionReport:
    """Check bounded jumps, a sufficient irreducibility condition, and drifts.

    The irreducibility check passes when every essential site law charges a
    negative and a positive offset and the gcd of all charged offsets is 1.
    It cannot prove failure of irreducibility; a failed check only means
    "not verified".
    """
    notes = []
    sls = law.essential_site_laws()
    bounded = all(
        all(-law.support.L <= o <= law.support.R for o in s.charged_offsets()) for s in sls
    )
    if not bounded:
        notes.append("an atom charges an offset outside [-L, R]")
    irreducible = "PASS"
    for s in sls:
        offs = s.charged_offsets()
        if not any(o < 0 for o in offs) or not any(o > 0 for o in offs):
            irreducible = "FAIL"
            notes.append(f"site law with charged offsets {offs} cannot move both ways")
            break
    offsets = sorted({o for s in sls for o in s.charged_offsets() if o != 0})
    g = reduce(math.gcd, offsets, 0)
    if g != 1:
        irreducible = "FAIL"
        notes.append(f"charged offsets {offsets} have gcd {g}")
    if isinstance(law, NearestNeighbor) and any(p in (0.0, 1.0) for p in law.ps):
        notes.append("an atom with p in {0, 1} blocks one direction")
    drifts = [s.mean for s in sls]
    return ConditionReport(
        bounded_jumps=bounded,
        irreducible=irreducible,
        sufficient_only=True,
        drift_range=(min(drifts), max(drifts)),
        notes=notes,
    )


def law_from_config(table: Mapping) -> EnvironmentLaw:
    """Build a law from a parsed config table (the ``[law]`` section)."""
    problems = []
    kind = table.get("kind")
    try:
        if kind == "nearest_neighbor":
            atoms = table.get("atoms") or []
            return NearestNeighbor(tuple(a["p"] for a in atoms), tuple(a.get("weight", 1.0) for a in atoms))
        support = JumpSupport(int(table.get("L", 0)), int(table.get("R", 0)))
        if kind == "atomic":
            atoms = table.get("atoms") or []
            sls = tuple(
                SiteLaw.from_offsets({int(k): v for k, v in a["probs"].items()}, support) for a in atoms
            )
            return Atomic(sls, tuple(a.get("weight", 1.0) for a in atoms), support)
        if kind == "dirichlet":
            alpha = table.get("alpha") or {}
            return DirichletOffsets(tuple((int(k), v) for k, v in alpha.items()), support)
        if kind == "periodic":
            return Periodic(
                tuple(SiteLaw.from_offsets({int(k): v for k, v in m.items()}, support) for m in table["laws"])
            )
        problems.append(f"law.kind must be one of atomic, nearest_neighbor, dirichlet, periodic; got {kind!r}")
    except ConfigError as exc:
        problems.extend(f"law: {p}" for p in exc.problems)
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"law: malformed entry ({exc})")
    raise ConfigError(problems)
