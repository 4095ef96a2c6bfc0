"""Isocapacitary constants, Sobolev/Hardy/Poincare estimates and extremal constructions.

Exact constants come from enumerating subsets of Omega through the shared
``SubsetTable``; Sobolev-type constants are estimated from below by
maximizing the defining ratio over seeded and random fields, and from above
by the isocapacitary bound of the matching characterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from . import fields
from .capacity import (ENUMERATION_CAP, StepFunction, SubsetTable, capacity_profile, check_enumerable,
                       global_domain, subset_table)
from .errors import ConstraintError, ParameterError, ValidationError
from .space import DiscreteMMSpace, Domain, ball_mask, candidate_radii, dist_to_complement_array

DEFAULT_RESTARTS = 8


def _check_pq(p: float, q: float, regime: str) -> tuple[float, float]:
    p, q = float(p), float(q)
    if not (p >= 1 and q >= 1):
        raise ParameterError("p and q must be >= 1")
    if regime == "le" and not p <= q:
        raise ParameterError(f"this constant needs p <= q, got p={p}, q={q}")
    if regime == "lt" and not q < p:
        raise ParameterError(f"this constant needs q < p, got p={p}, q={q}")
    return p, q


def _nu(domain: Domain, nu) -> np.ndarray:
    return domain.space.nu if nu is None else np.asarray(nu, dtype=float)


@dataclass
class IsocapConstant:
    value: float
    witness: object
    mode: str
    p: float
    q: float
    exact: bool = True
    flags: tuple[str, ...] = ()

    def to_dict(self, rng_seed: int | None = None) -> dict:
        return {"value": self.value, "witness": self.witness, "mode": self.mode, "p": self.p,
                "q": self.q, "rng_seed": rng_seed, "enumeration_exact": self.exact,
                "flags": list(self.flags)}


# subset constants ----------------------------------------------------------------


def subset_ratio(table: SubsetTable, bits: int, p: float, q: float, nu: np.ndarray) -> float:
    """nu(E)^(p/q) / cap_p(E, Omega), with 0/0 read as 0."""
    m = table.nu_power(bits, q, nu)
    if m == 0:
        return 0.0
    c = table.cap(bits).value
    return math.inf if c == 0 else m ** (p / q) / c


def gamma_subset(domain: Domain, p: float, q: float, *, nu=None,
                 enumeration_cap: int = ENUMERATION_CAP) -> IsocapConstant:
    """sup over nonempty E in Omega of nu(E)^(p/q) / cap_p(E, Omega)."""
    p, q = _check_pq(p, q, "le")
    check_enumerable(domain, enumeration_cap)
    nu = _nu(domain, nu)
    table = subset_table(domain, p)
    best, wit = 0.0, ()
    for bits in range(1, table.full + 1):
        r = subset_ratio(table, bits, p, q, nu)
        if r > best:
            best, wit = r, domain.space.ids(table.mask(bits))
    flags = ("infinite: a subset of positive mass has zero capacity",) if best == math.inf else ()
    return IsocapConstant(best, wit, "subset", p, q, True, flags)


def gamma_ball(space: DiscreteMMSpace, q: float, *, nu=None) -> IsocapConstant:
    """sup over balls B off the far-field boundary of nu(B)^(1/q) / cap_1(B, X minus boundary)."""
    q = float(q)
    if not q >= 1:
        raise ParameterError("q must be >= 1")
    dom = global_domain(space)
    nu = space.nu if nu is None else np.asarray(nu, dtype=float)
    table = subset_table(dom, 1.0)
    best, wit = -1.0, None
    for x, r, m in ball_list(space):
        val = subset_ratio(table, table.bits(m), 1.0, q, nu)
        if val > best:
            best = val
            wit = {"center": space.vertices[x], "radius": r, "members": list(space.ids(m))}
    if wit is None:
        raise ValidationError("no ball avoids the far-field boundary")
    return IsocapConstant(best, wit, "ball", 1.0, q)


def ball_list(space: DiscreteMMSpace) -> list[tuple[int, float, np.ndarray]]:
    """Distinct balls avoiding the far-field boundary, as (center, radius, mask)."""
    radii = candidate_radii(space)
    out, seen = [], set()
    for x in range(space.n):
        for r in radii:
            m = ball_mask(space, x, r)
            if np.any(m & space.boundary_mask):
                continue
            key = m.tobytes()
            if key not in seen:
                seen.add(key)
                out.append((x, float(r), m))
    return out


# chains ---------------------------------------------------------------------------


def _chain_term(table: SubsetTable, a: int, b: int, p: float, q: float, nu: np.ndarray) -> float:
    """(nu(A)^(p/q) / cap_p(A, B))^(q/(p-q)), the summand of the chain functional."""
    m = table.nu_power(a, 1.0, nu)
    if m == 0:
        return 0.0
    c = table.cap(a, b).value
    if c == 0:
        return math.inf
    return (m ** (p / q) / c) ** (q / (p - q))


def chain_value(domain: Domain, chain: Sequence[Iterable[str]], p: float, q: float, *, nu=None) -> float:
    """[sum_j (nu(A_j)^(p/q) / cap_p(A_j, A_{j+1}))^(q/(p-q))]^((p-q)/q), A_{k+1} = Omega."""
    p, q = _check_pq(p, q, "lt")
    nu = _nu(domain, nu)
    table = subset_table(domain, p)
    bits = [table.bits(domain.space.mask(s)) for s in chain]
    _check_chain(table, bits)
    nxt = bits[1:] + [table.full]
    total = sum(_chain_term(table, a, b, p, q, nu) for a, b in zip(bits, nxt))
    return total ** ((p - q) / q)


def _check_chain(table: SubsetTable, bits: list[int]) -> None:
    for a in bits:
        if a == 0:
            raise ConstraintError("chain sets must be nonempty")
        if a & ~table.full:
            raise ConstraintError("chain sets must lie in omega")
    for a, b in zip(bits, bits[1:]):
        if a & ~b or a == b:
            raise ConstraintError("chain sets must be strictly nested")


def gamma_chain(domain: Domain, p: float, q: float, *, max_chain_length: int | None = 4, nu=None,
                enumeration_cap: int = ENUMERATION_CAP) -> IsocapConstant:
    """Exact sup of the chain functional over strictly nested chains A_1 < ... < A_k in Omega.

    Each link is cap_p(A_j, A_{j+1}) and the last set links to Omega itself
    (A_k = Omega allowed). Solved as a longest path over inclusion pairs;
    ``max_chain_length=None`` removes the length limit.
    """
    p, q = _check_pq(p, q, "lt")
    check_enumerable(domain, enumeration_cap)
    nu = _nu(domain, nu)
    table = subset_table(domain, p)
    full = table.full
    kmax = domain.size if max_chain_length is None else max(1, int(max_chain_length))
    # best[a] = (sum, chain) over chains starting at a with at most k sets
    order = sorted(range(1, full + 1), key=lambda b: -bin(b).count("1"))
    prev: dict[int, tuple[float, tuple[int, ...]]] = {}
    for k in range(1, kmax + 1):
        cur: dict[int, tuple[float, tuple[int, ...]]] = {}
        for a in order:
            val, ch = _chain_term(table, a, full, p, q, nu), (a,)
            if k > 1:
                sub = full & ~a
                b_rest = sub
                while b_rest:
                    b = a | b_rest
                    if b in prev:
                        cand = _chain_term(table, a, b, p, q, nu) + prev[b][0]
                        if cand > val:
                            val, ch = cand, (a,) + prev[b][1]
                    b_rest = (b_rest - 1) & sub
            cur[a] = (val, ch)
        prev = cur
    if not prev:
        return IsocapConstant(0.0, [], "chain", p, q)
    start = max(prev, key=lambda a: (prev[a][0], -a))
    total, ch = prev[start]
    if total == 0:
        return IsocapConstant(0.0, [], "chain", p, q)
    wit = [list(domain.space.ids(table.mask(b))) for b in ch]
    flags = ("infinite: a link has zero capacity",) if total == math.inf else ()
    return IsocapConstant(total ** ((p - q) / q), wit, "chain", p, q, True, flags)


# integral criterion -------------------------------------------------------------------


def integral_from_profile(profile: StepFunction, p: float, q: float) -> float:
    """int_0^{nu(Omega)} t^(s'-1) / lambda(t)^(q/(p-q)) dt in closed form, s' = p/(p-q)."""
    sp = p / (p - q)
    e = q / (p - q)
    lo = 0.0
    total = 0.0
    for hi, lam in zip(profile.breaks, profile.values):
        if hi > lo:
            if lam == 0:
                return math.inf
            total += (hi ** sp - lo ** sp) / sp / lam ** e
        lo = hi
    return float(total)


def integral_criterion(domain: Domain, p: float, q: float, *, nu=None,
                       enumeration_cap: int = ENUMERATION_CAP, relative: str = "omega") -> IsocapConstant:
    p, q = _check_pq(p, q, "lt")
    nu = _nu(domain, nu)
    if not np.any(nu[domain.omega] > 0):
        return IsocapConstant(0.0, {"breaks": [], "values": []}, "integral", p, q)
    prof = capacity_profile(_with_nu(domain, nu), p, relative=relative, enumeration_cap=enumeration_cap)
    val = integral_from_profile(prof, p, q)
    wit = {"breaks": prof.breaks.tolist(), "values": prof.values.tolist()}
    flags = ("infinite: the profile vanishes on an interval",) if val == math.inf else ()
    return IsocapConstant(val, wit, "integral", p, q, True, flags)


def _with_nu(domain: Domain, nu: np.ndarray) -> Domain:
    if nu is domain.space.nu or np.array_equal(nu, domain.space.nu):
        return domain
    return domain.with_nu(nu)


# conductor constant ------------------------------------------------------------------


def gamma_conductor(domain: Domain, p: float, q: float, *, nu=None,
                    enumeration_cap: int = ENUMERATION_CAP) -> IsocapConstant:
    """sup of nu(F)^(p/q) / con_p(F, G, Omega) over F in G in Omega with nu(G) <= nu(Omega)/2."""
    p, q = _check_pq(p, q, "le")
    check_enumerable(domain, enumeration_cap)
    nu = _nu(domain, nu)
    table = subset_table(domain, p)
    half = table.nu_power(table.full, 1.0, nu) / 2
    best, wit = 0.0, None
    for G in range(1, table.full + 1):
        if table.nu_power(G, 1.0, nu) > half:
            continue
        F = G
        while F:
            m = table.nu_power(F, q, nu)
            if m > 0:
                c = table.con(F, G).value
                r = math.inf if c == 0 else m ** (p / q) / c
                if r > best:
                    best = r
                    wit = {"F": list(domain.space.ids(table.mask(F))), "G": list(domain.space.ids(table.mask(G)))}
            F = (F - 1) & G
    flags = ("infinite: a conductor has zero conductivity",) if best == math.inf else ()
    return IsocapConstant(best, wit, "conductor", p, q, True, flags)


def conductors(table: SubsetTable, nu: np.ndarray) -> list[tuple[int, int]]:
    """All (F, G) bit pairs with F nonempty, F in G, nu(G) <= nu(Omega)/2."""
    half = table.nu_power(table.full, 1.0, nu) / 2
    out = []
    for G in range(1, table.full + 1):
        if table.nu_power(G, 1.0, nu) > half:
            continue
        F = G
        while F:
            out.append((F, G))
            F = (F - 1) & G
    return out


# ratio evaluation ------------------------------------------------------------------


def best_constant(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    """argmin over a of sum w |v - a|^q (weighted median for q = 1)."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0 or not np.any(w > 0):
        return 0.0
    v, w = v[w > 0], w[w > 0]
    if q == 1:
        cands = np.unique(v)
        costs = [fields.lq_power(w, v - a, 1.0) for a in cands]
        return float(cands[int(np.argmin(costs))])
    if q == 2:
        return float(np.sum(w * v) / np.sum(w))
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return lo

    def slope(a):
        d = v - a
        return float(np.sum(w * np.abs(d) ** (q - 1) * np.sign(d)))

    return float(brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


@dataclass
class RatioParts:
    numer: float  # sum nu |u - a|^q over Omega
    energy: float
    shift: float = 0.0

    def power(self, p: float, q: float) -> float:
        """The ratio raised to the p-th power: numer^(p/q) / energy."""
        if self.numer == 0:
            return 0.0
        return math.inf if self.energy == 0 else self.numer ** (p / q) / self.energy


def ratio_parts(domain: Domain, u: np.ndarray, p: float, q: float, cls: str = "zero", nu=None) -> RatioParts:
    """Numerator and energy of the Sobolev ratio.

    ``zero``: u is extended by 0 off Omega and every edge counts.
    ``median``: inf over constants a of the centred numerator, energy on
    edges inside Omega only.
    """
    sp = domain.space
    nu = _nu(domain, nu)
    om = domain.omega
    u = np.where(om, np.asarray(u, dtype=float), 0.0)
    if cls == "zero":
        return RatioParts(fields.lq_power(nu[om], u[om], q), fields.energy(sp, u, p))
    if cls == "median":
        a = best_constant(u[om], nu[om], q)
        return RatioParts(fields.lq_power(nu[om], u[om] - a, q),
                          fields.energy(sp, u, p, fields.edges_within(sp, om)), a)
    raise ParameterError(f"unknown function class {cls!r}")


@dataclass
class SobolevEstimate:
    lower: float
    upper: float
    witness: np.ndarray
    seeds_used: int
    restarts: int
    lower_pow: float  # lower ** p computed without roots, used by exact links
    p: float = 2.0
    q: float = 2.0
    cls: str = "zero"
    converged: bool = True
    flags: tuple[str, ...] = ()
    gamma: IsocapConstant | None = None

    def to_dict(self, space: DiscreteMMSpace, rng_seed: int | None = None) -> dict:
        return {"lower": self.lower, "upper": self.upper,
                "witness": dict(zip(space.vertices, map(float, self.witness))),
                "seeds_used": self.seeds_used, "restarts": self.restarts, "p": self.p, "q": self.q,
                "class": self.cls, "converged": self.converged, "flags": list(self.flags),
                "gamma": None if self.gamma is None else self.gamma.to_dict(rng_seed),
                "rng_seed": rng_seed}


def capacity_seeds(domain: Domain, p: float, cls: str, *, enumeration_cap: int = ENUMERATION_CAP,
                   nu=None) -> list[np.ndarray]:
    """Capacity extremals of every subset (zero class) or conductivity extremals (median class)."""
    if domain.size > enumeration_cap:
        return []
    table = subset_table(domain, p)
    if cls == "zero":
        return [table.cap(b).extremal for b in range(1, table.full + 1)]
    return [table.con(F, G).extremal for F, G in conductors(table, _nu(domain, nu))]


def truncation_seeds(seeds: Sequence[np.ndarray], limit: int = 256) -> list[np.ndarray]:
    """Dyadic truncations of seed fields."""
    out = []
    for u in seeds:
        w = fields.dyadic_window(u)
        if w is None:
            continue
        lo, hi = w
        for j in range(lo + 1, hi):
            t = fields.truncate_dyadic(u, j)
            if t.any():
                out.append(t)
            if len(out) >= limit:
                return out
    return out


def _ascend(domain: Domain, x0: np.ndarray, p: float, q: float, cls: str, nu: np.ndarray, max_iter: int):
    """Maximize the log-ratio from x0 with L-BFGS; returns the final field and success flag."""
    sp = domain.space
    om = domain.omega
    idx = domain.idx
    e = sp.edges
    counted = np.ones(sp.n_edges, dtype=bool) if cls == "zero" else fields.edges_within(sp, om)
    w = (sp.mass / sp.length ** p)[counted]
    ec = e[counted]
    nuo = nu[idx]

    def fg(x):
        u = np.zeros(sp.n)
        u[idx] = x
        a = best_constant(x, nuo, q) if cls == "median" else 0.0
        v = x - a
        N = float(np.sum(nuo * np.abs(v) ** q))
        d = u[ec[:, 0]] - u[ec[:, 1]]
        E = float(np.sum(w * np.abs(d) ** p))
        if N <= 0 or E <= 0:
            return 0.0, np.zeros_like(x)
        gN = q * nuo * np.abs(v) ** (q - 1) * np.sign(v)
        ge = w * p * np.abs(d) ** (p - 1) * np.sign(d)
        gE = np.zeros(sp.n)
        np.add.at(gE, ec[:, 0], ge)
        np.add.at(gE, ec[:, 1], -ge)
        f = -math.log(N) / q + math.log(E) / p
        g = -gN / (q * N) + gE[idx] / (p * E)
        return f, g

    bounds = [(0.0, None)] * len(idx) if cls == "zero" else None
    res = minimize(fg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12})
    u = np.zeros(sp.n)
    x = res.x
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    u[idx] = x / scale if scale > 0 else x
    return u, bool(res.success)


def sobolev_constant(domain: Domain, p: float, q: float, cls: str = "zero", *, nu=None, rng_seed: int = 0,
                     restarts: int = DEFAULT_RESTARTS, extra_seeds: Sequence[np.ndarray] = (),
                     enumeration_cap: int = ENUMERATION_CAP, max_iter: int = 500,
                     with_upper: bool = True) -> SobolevEstimate:
    """Lower and upper estimates of the best constant c_S in ||u||_q <= c_S E(u)^(1/p).

    The lower bound is the largest ratio found over the mandatory seeds
    (capacity or conductivity extremals of every enumerated set, their dyadic
    truncations, ``extra_seeds``) and over L-BFGS ascents from the best seeds
    and from ``restarts`` pseudo-random starts. Ties keep the first found.
    """
    p, q = float(p), float(q)
    if not (p >= 1 and q >= 1):
        raise ParameterError("p and q must be >= 1")
    nu = _nu(domain, nu)
    if cls not in ("zero", "median"):
        raise ParameterError(f"unknown function class {cls!r}")
    n = domain.space.n
    if not np.any(nu[domain.omega] > 0):
        return SobolevEstimate(0.0, 0.0, np.zeros(n), 0, 0, 0.0, p, q, cls)

    seeds = capacity_seeds(domain, p, cls, enumeration_cap=enumeration_cap, nu=nu)
    seeds = seeds + truncation_seeds(seeds) + [np.asarray(s, dtype=float) for s in extra_seeds]
    flags = []
    if domain.size > enumeration_cap:
        flags.append("seeding incomplete: omega above the enumeration cap")
    best_pow, best_u = -1.0, np.zeros(n)
    scored = []
    for s in seeds:
        r = ratio_parts(domain, s, p, q, cls, nu).power(p, q)
        scored.append(r)
        if r > best_pow:
            best_pow, best_u = r, np.where(domain.omega, s, 0.0)

    converged = True
    rng = np.random.default_rng(rng_seed)
    starts = []
    top = np.argsort(-np.asarray(scored), kind="stable")[: min(3, len(scored))] if scored else []
    for i in top:
        if np.isfinite(scored[i]):
            starts.append(np.asarray(seeds[i], dtype=float)[domain.idx])
    for _ in range(restarts):
        x = rng.random(domain.size)
        if cls == "median":
            x = x - 0.5
        starts.append(x)
    if math.isfinite(best_pow):
        for x0 in starts:
            u, ok = _ascend(domain, x0.copy(), p, q, cls, nu, max_iter)
            converged &= ok
            r = ratio_parts(domain, u, p, q, cls, nu).power(p, q)
            if r > best_pow:
                best_pow, best_u = r, u
    if not converged:
        flags.append("ascent: some restarts stopped before convergence")

    upper, gamma = math.inf, None
    if with_upper and domain.size <= enumeration_cap:
        upper, gamma = sobolev_upper(domain, p, q, cls, nu=nu, enumeration_cap=enumeration_cap)
    lower = best_pow ** (1.0 / p) if best_pow > 0 else 0.0
    return SobolevEstimate(lower, upper, best_u, len(seeds), len(starts), max(best_pow, 0.0), p, q, cls,
                           converged, tuple(flags), gamma)


def upper_factor(p: float, q: float, cls: str = "zero") -> float:
    """Constant C with c_S <= C * gamma^(1/p) from the matching characterization."""
    if cls == "zero":
        if p <= q:
            return (p * 2.0 ** (2 * p - 1)) ** (1.0 / p)
        return (q * 2.0 ** (2 * q - 1) / (1 - 2.0 ** (-q))) ** (1.0 / q)
    if p <= q:
        return 2.0 ** (1 - 1.0 / p) * (p * 2.0 ** (2 * p - 1)) ** (1.0 / p)
    return math.inf


def sobolev_upper(domain: Domain, p: float, q: float, cls: str = "zero", *, nu=None,
                  enumeration_cap: int = ENUMERATION_CAP) -> tuple[float, IsocapConstant | None]:
    if cls == "zero":
        g = (gamma_subset(domain, p, q, nu=nu, enumeration_cap=enumeration_cap) if p <= q else
             gamma_chain(domain, p, q, nu=nu, max_chain_length=None, enumeration_cap=enumeration_cap))
    elif p <= q:
        g = gamma_conductor(domain, p, q, nu=nu, enumeration_cap=enumeration_cap)
    else:
        return math.inf, None
    return upper_factor(p, q, cls) * g.value ** (1.0 / p), g


# Hardy and Poincare ---------------------------------------------------------------------


def hardy_weights(domain: Domain, p: float) -> np.ndarray:
    """mu(x) / dist(x, complement)^p on Omega, 0 elsewhere."""
    d = dist_to_complement_array(domain)
    out = np.zeros(domain.space.n)
    om = domain.omega
    out[om] = domain.space.mu[om] / d[om] ** p
    return out


def hardy_constant(domain: Domain, p: float, *, rng_seed: int = 0, restarts: int = DEFAULT_RESTARTS,
                   enumeration_cap: int = ENUMERATION_CAP) -> tuple[SobolevEstimate, IsocapConstant]:
    nu_h = hardy_weights(domain, p)
    est = sobolev_constant(domain, p, p, "zero", nu=nu_h, rng_seed=rng_seed, restarts=restarts,
                           enumeration_cap=enumeration_cap)
    g = est.gamma if est.gamma is not None else gamma_subset(domain, p, p, nu=nu_h, enumeration_cap=enumeration_cap)
    return est, g


@dataclass
class PoincareEstimate:
    value: float
    center: str | None
    radius: float
    witness: np.ndarray


def _poincare_masks(space: DiscreteMMSpace, u: np.ndarray, B: np.ndarray, TB: np.ndarray, r: float,
                    p: float) -> float:
    mu = space.mu
    mb = float(mu[B].sum())
    uB = float(np.sum(mu[B] * u[B]) / mb)
    left = float(np.sum(mu[B] * np.abs(u[B] - uB)) / mb)
    if left == 0:
        return 0.0
    g = fields.minimal_upper_gradient(space, u)
    grad = fields.p_energy(space, g, p, fields.edges_within(space, TB)) / float(mu[TB].sum())
    return math.inf if grad == 0 else left / (r * grad ** (1.0 / p))


def poincare_ratio(space: DiscreteMMSpace, u: np.ndarray, center, r: float, p: float, tau: float = 1.0) -> float:
    """mean_B |u - u_B| dmu / (r (mean over tau B of g^p dmu)^(1/p)) for the open ball B(center, r).

    The gradient mean sums mass(e) g(e)^p over edges inside tau B and divides by mu(tau B).
    """
    i = space.index(center)
    u = np.asarray(u, dtype=float)
    return _poincare_masks(space, u, ball_mask(space, i, r), ball_mask(space, i, tau * r), r, p)


def poincare_estimate(space: DiscreteMMSpace, p: float, tau: float = 1.0, *, rng_seed: int = 0,
                      samples: int = 64) -> PoincareEstimate:
    """Lower estimate of the weak (1,p)-Poincare constant from seeded and random fields.

    For a fixed member set the ratio decreases in r, so each ball is taken
    in its limit r -> d^+ at a pairwise distance d: closed balls of radius d
    and tau d, evaluated with r = d.
    """
    p, tau = float(p), float(tau)
    if p < 1 or tau < 1:
        raise ParameterError("need p >= 1 and tau >= 1")
    rng = np.random.default_rng(rng_seed)
    D = space.distances
    balls, seen = [], set()
    for x in range(space.n):
        for r in candidate_radii(space):
            B, TB = D[x] <= r, D[x] <= tau * r
            key = (B.tobytes(), TB.tobytes(), float(r))
            if key not in seen:
                seen.add(key)
                balls.append((x, float(r), B, TB))
    cands = [D[x].copy() for x in range(space.n)]
    cands += [B.astype(float) for _, _, B, _ in balls]
    cands += [rng.standard_normal(space.n) for _ in range(samples)]
    best = PoincareEstimate(0.0, None, 0.0, np.zeros(space.n))
    for u in cands:
        for x, r, B, TB in balls:
            v = _poincare_masks(space, u, B, TB, r, p)
            if v > best.value:
                best = PoincareEstimate(v, space.vertices[x], r, u)
    return best


# extremal constructions -------------------------------------------------------------------


@dataclass
class ChainExtremal:
    u: np.ndarray
    steps: np.ndarray  # lambda_j - lambda_{j+1}
    levels: np.ndarray  # lambda_j
    caps: np.ndarray
    masses: np.ndarray
    parts: list[np.ndarray] = field(default_factory=list)


def build_chain_extremal(domain: Domain, chain: Sequence[Iterable[str]], p: float, q: float, *,
                         nu=None) -> ChainExtremal:
    """u = sum_j d_j u_j with d_j = (nu(A_j) / cap_p(A_j, A_{j+1}))^(1/(p-q)).

    u_j is the capacity extremal of the j-th link, so u equals
    lambda_j = sum_{i >= j} d_i on A_j minus A_{j-1} plateaus and vanishes
    off Omega.
    """
    p, q = _check_pq(p, q, "lt")
    nu = _nu(domain, nu)
    table = subset_table(domain, p)
    bits = [table.bits(domain.space.mask(s)) for s in chain]
    n = domain.space.n
    if not bits:
        return ChainExtremal(np.zeros(n), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
    _check_chain(table, bits)
    nxt = bits[1:] + [table.full]
    masses = np.array([table.nu_power(a, 1.0, nu) for a in bits])
    results = [table.cap(a, b) for a, b in zip(bits, nxt)]
    caps = np.array([r.value for r in results])
    if np.any((caps == 0) & (masses > 0)):
        raise ValidationError("degenerate chain link: zero capacity")
    steps = np.where(masses > 0, (masses / np.where(caps > 0, caps, 1.0)) ** (1.0 / (p - q)), 0.0)
    levels = np.cumsum(steps[::-1])[::-1]
    parts = [r.extremal for r in results]
    u = np.zeros(n)
    for d, uj in zip(steps, parts):
        u = u + d * uj
    return ChainExtremal(u, steps, levels, caps, masses, parts)


@dataclass
class SupExtremal:
    u: np.ndarray
    levels: np.ndarray  # j
    betas: np.ndarray
    lambdas: np.ndarray  # lambda_p(2^j)
    parts: list[np.ndarray]
    fq_sum: float  # sum beta_j^q 2^j
    gp_sum: float  # sum beta_j^p lambda_p(2^j)


def dyadic_levels(masses: np.ndarray, total: float) -> range:
    """j with min positive mass <= 2^j... i.e. floor(log2 m0) <= j <= floor(log2 total)."""
    pos = masses[masses > 0]
    if pos.size == 0 or total <= 0:
        return range(0)
    return range(math.floor(math.log2(float(pos.min()))), math.floor(math.log2(total)) + 1)


def build_sup_extremal(domain: Domain, p: float, q: float, *, nu=None, profile: StepFunction | None = None,
                       enumeration_cap: int = ENUMERATION_CAP) -> SupExtremal:
    """u = max_j beta_j u_j with beta_j = (2^j / lambda_p(2^j))^(1/(p-q)) over the dyadic levels."""
    p, q = _check_pq(p, q, "lt")
    nu = _nu(domain, nu)
    dom = _with_nu(domain, nu)
    if profile is None:
        profile = capacity_profile(dom, p, enumeration_cap=enumeration_cap)
    table = subset_table(domain, p)
    total = table.nu_power(table.full, 1.0, nu)
    js = list(dyadic_levels(nu[domain.omega], total))
    if not js:
        raise ValidationError("no admissible dyadic level")
    betas, lams, parts = [], [], []
    for j in js:
        t = 2.0 ** j
        i = int(np.searchsorted(profile.breaks, t, side="left"))
        lam = float(profile.values[i])
        if lam == 0:
            raise ValidationError("profile vanishes at a dyadic level")
        wbits = table.bits(domain.space.mask(profile.witnesses[i]))
        parts.append(table.cap(wbits).extremal)
        lams.append(lam)
        betas.append((t / lam) ** (1.0 / (p - q)))
    betas = np.array(betas)
    lams = np.array(lams)
    u = np.max([b * uj for b, uj in zip(betas, parts)], axis=0)
    two = np.array([2.0 ** j for j in js])
    return SupExtremal(u, np.array(js), betas, lams, parts, float(np.sum(betas ** q * two)),
                       float(np.sum(betas ** p * lams)))
