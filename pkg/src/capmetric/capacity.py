"""Variational capacities, conductivities, the capacity profile and Hausdorff content."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from collections import OrderedDict
from typing import Iterable, Sequence

import numpy as np

from . import solvers
from .errors import ConstraintError, EnumerationCapError, ParameterError, ValidationError
from .space import DiscreteMMSpace, Domain, ball_mask, candidate_radii

ENUMERATION_CAP = 18


def workers() -> int:
    """Worker count from CAPMETRIC_THREADS (0 = one per core, unset = serial)."""
    raw = os.environ.get("CAPMETRIC_THREADS")
    if raw is None:
        return 1
    n = int(raw)
    return os.cpu_count() or 1 if n == 0 else max(1, n)


def _as_mask(space: DiscreteMMSpace, s) -> np.ndarray:
    if s is None:
        return np.zeros(space.n, dtype=bool)
    arr = np.asarray(s)
    if arr.dtype == bool and arr.shape == (space.n,):
        return arr.copy()
    return space.mask(s)


def _check_p(p: float) -> float:
    p = float(p)
    if not p >= 1 or not math.isfinite(p):
        raise ParameterError(f"p must be >= 1, got {p}")
    return p


@dataclass
class CapacityProblem:
    """cap_p(inner, omega) when ``outer`` is None, else con_p(inner, outer, omega)."""

    domain: Domain
    inner: np.ndarray
    outer: np.ndarray | None = None
    p: float = 2.0

    def __post_init__(self):
        sp = self.domain.space
        self.inner = _as_mask(sp, self.inner)
        if self.outer is not None:
            self.outer = _as_mask(sp, self.outer)
        self.p = _check_p(self.p)
        if np.any(self.inner & ~self.domain.omega):
            raise ConstraintError("inner set must lie inside omega")
        if self.outer is not None:
            if np.any(self.outer & ~self.domain.omega):
                raise ConstraintError("outer set must lie inside omega")
            if np.any(self.inner & ~self.outer):
                raise ConstraintError("inner set must lie inside the outer set")


@dataclass
class CapacityResult:
    value: float
    extremal: np.ndarray
    iterations: int
    residual: float
    certified_lower: float
    converged: bool = True

    def to_dict(self, space: DiscreteMMSpace) -> dict:
        return {
            "value": self.value,
            "extremal": dict(zip(space.vertices, map(float, self.extremal))),
            "residual": self.residual,
            "iterations": self.iterations,
            "certified_lower": self.certified_lower,
            "converged": self.converged,
        }


def _result(sol: solvers.Solution) -> CapacityResult:
    return CapacityResult(sol.value, sol.u, sol.iterations, sol.residual, sol.certified_lower, sol.converged)


def cap_masks(space: DiscreteMMSpace, inner: np.ndarray, omega: np.ndarray, p: float) -> CapacityResult:
    """cap_p(inner, omega): u = 1 on inner, u = 0 off omega, every edge counted."""
    pinned = inner | ~omega
    return _result(solvers.solve(space, pinned, inner.astype(float), np.ones(space.n_edges, dtype=bool), p))


def con_masks(space: DiscreteMMSpace, F: np.ndarray, G: np.ndarray, omega: np.ndarray, p: float) -> CapacityResult:
    """con_p(F, G, omega): u >= 1 on F, u <= 0 on omega minus G, energy on edges inside omega.

    The inequality constraints are pinned to equalities since clamping to
    [0, 1] never increases the energy.
    """
    pinned = F | (omega & ~G)
    e = space.edges
    inside = omega[e[:, 0]] & omega[e[:, 1]]
    return _result(solvers.solve(space, pinned, F.astype(float), inside, p))


def capacity(problem: CapacityProblem) -> CapacityResult:
    if problem.outer is not None:
        return conductivity(problem)
    d = problem.domain
    return cap_masks(d.space, problem.inner, d.omega, problem.p)


def conductivity(problem: CapacityProblem) -> CapacityResult:
    if problem.outer is None:
        raise ConstraintError("conductivity needs an outer set G")
    d = problem.domain
    return con_masks(d.space, problem.inner, problem.outer, d.omega, problem.p)


def global_domain(space: DiscreteMMSpace) -> Domain:
    if not space.boundary:
        raise ValidationError("global capacity needs a far-field boundary")
    return Domain(space, ~space.boundary_mask)


def global_capacity(space: DiscreteMMSpace, K, p: float) -> CapacityResult:
    """cap_p(K, X minus far-field boundary), the stand-in for compactly supported functions."""
    dom = global_domain(space)
    K = _as_mask(space, K)
    if np.any(K & space.boundary_mask):
        raise ConstraintError("K must not meet the far-field boundary")
    return capacity(CapacityProblem(dom, K, None, p))


# subset tables -------------------------------------------------------------------


def check_enumerable(domain: Domain, cap: int = ENUMERATION_CAP) -> None:
    if domain.size > cap:
        raise EnumerationCapError(
            f"omega has {domain.size} vertices, above the enumeration cap {cap}; "
            "raise --enumeration-cap or use --sample N for a sampled profile"
        )


class SubsetTable:
    """Memoized capacity-type values of subsets of Omega, addressed by bitmask.

    Bit i of a mask refers to the i-th vertex of Omega (in space order).
    All enumerating routines share one table per (domain, p) so that equal
    sets always see bit-identical values.
    """

    def __init__(self, domain: Domain, p: float):
        self.domain = domain
        self.space = domain.space
        self.p = _check_p(p)
        self.idx = domain.idx
        self.k = len(self.idx)
        self._cap: dict[tuple[int, int], CapacityResult] = {}
        self._con: dict[tuple[int, int], CapacityResult] = {}
        self._nu = self.space.nu[self.idx]

    @property
    def full(self) -> int:
        return (1 << self.k) - 1

    def mask(self, bits: int) -> np.ndarray:
        m = np.zeros(self.space.n, dtype=bool)
        for i in range(self.k):
            if bits >> i & 1:
                m[self.idx[i]] = True
        return m

    def bits(self, mask: np.ndarray) -> int:
        b = 0
        for i, v in enumerate(self.idx):
            if mask[v]:
                b |= 1 << i
        return b

    def nu_power(self, bits: int, q: float, nu: np.ndarray | None = None) -> float:
        """sum over Omega of nu * 1_E^q; same reduction as ``lq_power`` on a field."""
        nu = self._nu if nu is None else nu[self.idx]
        ind = np.array([(bits >> i) & 1 for i in range(self.k)], dtype=float)
        return float(np.sum(nu * ind ** q))

    def cap(self, inner: int, outer: int | None = None) -> CapacityResult:
        """cap_p(E_inner, E_outer); ``outer=None`` means Omega."""
        outer = self.full if outer is None else outer
        key = (inner, outer)
        r = self._cap.get(key)
        if r is None:
            if inner & ~outer:
                raise ConstraintError("inner set must lie inside the outer set")
            r = cap_masks(self.space, self.mask(inner), self.mask(outer), self.p)
            self._cap[key] = r
        return r

    def con(self, F: int, G: int) -> CapacityResult:
        key = (F, G)
        r = self._con.get(key)
        if r is None:
            if F & ~G:
                raise ConstraintError("F must lie inside G")
            r = con_masks(self.space, self.mask(F), self.mask(G), self.domain.omega, self.p)
            self._con[key] = r
        return r

    def fill(self, keys: Iterable[tuple[int, int | None]], kind: str = "cap") -> None:
        """Evaluate many entries, in parallel when CAPMETRIC_THREADS asks for it."""
        keys = list(keys)
        fn = self.cap if kind == "cap" else self.con
        nw = workers()
        if nw <= 1 or len(keys) < 8:
            for key in keys:
                fn(*key)
            return
        with ThreadPoolExecutor(nw) as ex:
            list(ex.map(lambda key: fn(*key), keys))


_TABLES: "OrderedDict[tuple, SubsetTable]" = OrderedDict()
_TABLES_MAX = 64


def subset_table(domain: Domain, p: float) -> SubsetTable:
    """Shared table for (space, Omega, p); capacities do not depend on nu."""
    key = (id(domain.space), domain.omega.tobytes(), float(p))
    t = _TABLES.get(key)
    if t is None or t.space is not domain.space:
        t = SubsetTable(domain, p)
        _TABLES[key] = t
        while len(_TABLES) > _TABLES_MAX:
            _TABLES.popitem(last=False)
    else:
        _TABLES.move_to_end(key)
    return t


# capacity profile ----------------------------------------------------------------


@dataclass
class StepFunction:
    """Left-open step function: value ``values[i]`` on (breaks[i-1], breaks[i]], breaks[-1] = 0."""

    breaks: np.ndarray
    values: np.ndarray
    witnesses: tuple = ()
    exact: bool = True

    def __call__(self, t: float) -> float:
        if t <= 0 or t > self.breaks[-1] * (1 + 1e-15):
            raise ValueError(f"t={t} outside (0, {self.breaks[-1]}]")
        i = int(np.searchsorted(self.breaks, t, side="left"))
        return float(self.values[min(i, len(self.values) - 1)])

    def refine(self, extra: Sequence[float]) -> "StepFunction":
        """Same function with additional breakpoints."""
        pts = np.unique(np.concatenate([self.breaks, [t for t in extra if 0 < t < self.breaks[-1]]]))
        return StepFunction(pts, np.array([self(t) for t in pts]), exact=self.exact)


def capacity_profile(domain: Domain, p: float, *, relative: str = "omega",
                     enumeration_cap: int = ENUMERATION_CAP, sample: int | None = None,
                     rng_seed: int = 0) -> StepFunction:
    """lambda_p(s) = min{cap_p(G) : G inside Omega, nu(G) >= s} on (0, nu(Omega)].

    ``relative="omega"`` reads cap_p(G) as cap_p(G, Omega); ``"global"`` as
    cap_p(G, X minus the far-field boundary). Exact by enumeration unless
    ``sample`` is given, in which case singletons, Omega and ``sample``
    pseudo-random subsets are used and the result is an upper envelope.
    """
    sp = domain.space
    nu = sp.nu[domain.idx]
    if not np.any(nu > 0):
        raise ValidationError("capacity profile undefined: nu vanishes on omega")
    if relative == "global":
        ref = global_domain(sp)
        if np.any(domain.omega & ~ref.omega):
            raise ConstraintError("omega meets the far-field boundary")
    elif relative == "omega":
        ref = domain
    else:
        raise ParameterError(f"relative must be 'omega' or 'global', got {relative!r}")

    k = domain.size
    exact = sample is None
    if exact:
        check_enumerable(domain, enumeration_cap)
        subsets = range(1, 1 << k)
    else:
        rng = np.random.default_rng(rng_seed)
        picks = {1 << i for i in range(k)} | {(1 << k) - 1}
        for _ in range(sample):
            picks.add(int(sum(1 << i for i in range(k) if rng.random() < 0.5)) or 1)
        subsets = sorted(picks)

    table = subset_table(domain, p)
    ref_table = subset_table(ref, p) if ref is not domain else table
    best: dict[float, tuple[float, int]] = {}
    for bits in subsets:
        m = table.nu_power(bits, 1.0)
        if m <= 0:
            continue
        if ref is domain:
            c = table.cap(bits).value
        else:
            c = ref_table.cap(ref_table.bits(table.mask(bits))).value
        if m not in best or c < best[m][0]:
            best[m] = (c, bits)
    masses = np.array(sorted(best))
    vals = np.array([best[m][0] for m in masses])
    wit = [best[m][1] for m in masses]
    # suffix minimum: lambda(s) for s in (m_{i-1}, m_i] is the min over masses >= m_i
    out_v = vals.copy()
    out_w = list(wit)
    for i in range(len(vals) - 2, -1, -1):
        if out_v[i + 1] < out_v[i]:
            out_v[i] = out_v[i + 1]
            out_w[i] = out_w[i + 1]
    witnesses = tuple(sp.ids(table.mask(b)) for b in out_w)
    return StepFunction(masses, out_v, witnesses, exact)


# Hausdorff content -----------------------------------------------------------------


@dataclass
class Ball:
    center: str
    radius: float
    members: frozenset[str]
    cost: float


@dataclass
class ContentResult:
    value: float
    cover: list[Ball] = field(default_factory=list)


def candidate_balls(space: DiscreteMMSpace, r_max: float | None = None,
                    allowed: np.ndarray | None = None) -> list[tuple[int, float, np.ndarray, float]]:
    """(center, radius, member mask, mu(B)/r) for every distinct candidate ball.

    For a fixed member set mu(B)/r is smallest at the largest radius giving
    that set, which is always a pairwise distance or ``r_max``.
    """
    r_max = space.diameter if r_max is None else float(r_max)
    if not r_max > 0:
        raise ParameterError("r_max must be positive")
    radii = np.unique(np.concatenate([candidate_radii(space, r_max), [r_max]]))
    best: dict[bytes, tuple[int, float, np.ndarray, float]] = {}
    for x in range(space.n):
        for r in radii:
            m = ball_mask(space, x, r)
            if allowed is not None and np.any(m & ~allowed):
                continue
            cost = float(space.mu[m].sum() / r)
            key = np.packbits(m).tobytes()
            if key not in best or cost < best[key][3]:
                best[key] = (x, float(r), m, cost)
    return sorted(best.values(), key=lambda b: (b[3], b[0], b[1]))


def content_cover(space: DiscreteMMSpace, K, r_max: float | None = None,
                  allowed: np.ndarray | None = None) -> ContentResult:
    """Exact minimal sum of mu(B)/r over ball covers of K (weighted set cover).

    Solved by branch and bound over the uncovered-element bitmask with
    memoization; ``allowed`` restricts balls to lie inside a vertex mask.
    """
    K = _as_mask(space, K)
    if not K.any():
        return ContentResult(0.0, [])
    kidx = np.flatnonzero(K)
    balls = candidate_balls(space, r_max, allowed)
    cands = []
    for b in balls:
        cov = 0
        for i, v in enumerate(kidx):
            if b[2][v]:
                cov |= 1 << i
        if cov:
            cands.append((cov, b[3], b))
    # drop dominated candidates (covering a subset at no smaller cost)
    cands.sort(key=lambda c: (c[1], -bin(c[0]).count("1")))
    kept = []
    for cov, cost, b in cands:
        if not any((cov & ~c2) == 0 and c2cost <= cost for c2, c2cost, _ in kept):
            kept.append((cov, cost, b))
    full = (1 << len(kidx)) - 1
    covers_of = [[j for j, c in enumerate(kept) if c[0] >> i & 1] for i in range(len(kidx))]
    if any(not c for c in covers_of):
        raise ValidationError("K cannot be covered by the allowed balls")
    cheapest = [min(kept[j][1] for j in c) for c in covers_of]

    memo: dict[int, tuple[float, tuple[int, ...]]] = {}

    def lower(unc: int) -> float:
        return max((cheapest[i] for i in range(len(kidx)) if unc >> i & 1), default=0.0)

    def best(unc: int, budget: float) -> tuple[float, tuple[int, ...]]:
        if unc == 0:
            return 0.0, ()
        hit = memo.get(unc)
        if hit is not None:
            return hit
        if lower(unc) >= budget:
            return math.inf, ()
        pivot = min((i for i in range(len(kidx)) if unc >> i & 1), key=lambda i: len(covers_of[i]))
        val, pick = math.inf, ()
        for j in covers_of[pivot]:
            cov, cost, _ = kept[j]
            if cost >= min(val, budget):
                continue
            sub, subpick = best(unc & ~cov, min(val, budget) - cost)
            if cost + sub < val:
                val, pick = cost + sub, (j,) + subpick
        if val < math.inf or budget == math.inf:
            memo[unc] = (val, pick)
        return val, pick

    # greedy upper bound seeds the budget
    unc, greedy = full, 0.0
    while unc:
        j = min(range(len(kept)), key=lambda j: kept[j][1] / max(1, bin(kept[j][0] & unc).count("1"))
                if kept[j][0] & unc else math.inf)
        greedy += kept[j][1]
        unc &= ~kept[j][0]
    value, pick = best(full, greedy * (1 + 1e-12) + 1e-300)
    if value == math.inf:
        memo.clear()
        value, pick = best(full, math.inf)
    cover = []
    for j in pick:
        x, r, m, cost = kept[j][2]
        cover.append(Ball(space.vertices[x], r, frozenset(space.ids(m)), cost))
    return ContentResult(float(value), cover)


def hausdorff_content(space: DiscreteMMSpace, K, r_max: float | None = None,
                      allowed: np.ndarray | None = None) -> float:
    return content_cover(space, K, r_max, allowed).value


@dataclass
class RatioEntry:
    members: tuple[str, ...]
    capacity: float
    content: float
    ratio: float


@dataclass
class RatioReport:
    entries: list[RatioEntry]

    @property
    def min_ratio(self) -> float:
        return min((e.ratio for e in self.entries), default=math.nan)

    @property
    def max_ratio(self) -> float:
        return max((e.ratio for e in self.entries), default=math.nan)

    @property
    def constant(self) -> float:
        """Smallest c with cap/c <= H <= c cap over the family."""
        if not self.entries:
            return math.nan
        return max(self.max_ratio, 1.0 / self.min_ratio)


def content_capacity_ratio(space: DiscreteMMSpace, family: Iterable, r_max: float | None = None) -> RatioReport:
    """cap_1(K) / H(K) for each K, with balls kept off the far-field boundary."""
    dom = global_domain(space)
    table = subset_table(dom, 1.0)
    entries = []
    for K in family:
        m = _as_mask(space, K)
        c = table.cap(table.bits(m)).value
        h = hausdorff_content(space, m, r_max, allowed=dom.omega)
        entries.append(RatioEntry(space.ids(m), c, h, c / h if h > 0 else math.inf))
    return RatioReport(entries)
