"""Theorem checkers: each re-derives a chain of inequalities on a concrete instance.

A checker returns a ``VerificationReport`` whose links are the individual
steps of the argument with both sides evaluated. Links between exactly
computed quantities are marked ``exact`` and must hold with slack >= 0;
solver-dependent links pass when (rhs - lhs) / max(1, |rhs|) >= -tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fields
from .capacity import (ENUMERATION_CAP, SubsetTable, capacity_profile, check_enumerable, content_cover,
                       global_domain, subset_table)
from .constants import (ChainExtremal, IsocapConstant, build_chain_extremal, build_sup_extremal,
                        conductors, gamma_ball, gamma_chain, gamma_conductor, gamma_subset, hardy_weights,
                        integral_from_profile, ratio_parts, sobolev_constant, subset_ratio, upper_factor)
from .errors import ParameterError, ValidationError
from .space import DiscreteMMSpace, Domain, doubling_estimate

TOLERANCE = 1e-9
DEFAULT_SAMPLES = 64
THEOREMS = ("qpey", "capaint", "sobolev-pq", "ball-p1", "qp", "integral", "conductivity", "conint", "hardy")


def _mul(*factors: float) -> float:
    """Product of nonnegative factors; an infinite factor makes the bound vacuous even against 0."""
    if any(math.isinf(f) for f in factors):
        return math.inf
    return math.prod(factors)


@dataclass
class InequalityLink:
    name: str
    lhs: float
    rhs: float
    anchor: str
    exact: bool = False

    @property
    def slack(self) -> float:
        if self.lhs == self.rhs:
            return 0.0
        return self.rhs - self.lhs

    def passes(self, tol: float = TOLERANCE) -> bool:
        if self.lhs <= self.rhs:
            return True
        if self.exact or math.isinf(self.lhs) or math.isnan(self.lhs) or math.isnan(self.rhs):
            return False
        return (self.rhs - self.lhs) / max(1.0, abs(self.rhs)) >= -tol

    def to_dict(self, tol: float) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "anchor": self.anchor, "exact": self.exact, "pass": self.passes(tol)}


@dataclass
class VerificationReport:
    theorem: str
    instance: str
    params: dict
    links: list[InequalityLink] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    tolerance: float = TOLERANCE
    rng_seed: int = 0
    runtime: float | None = None

    @property
    def verdict(self) -> str:
        return "pass" if all(l.passes(self.tolerance) for l in self.links) else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def failures(self) -> list[InequalityLink]:
        return [l for l in self.links if not l.passes(self.tolerance)]

    def add(self, name: str, lhs: float, rhs: float, anchor: str, exact: bool = False) -> InequalityLink:
        link = InequalityLink(name, float(lhs), float(rhs), anchor, exact)
        self.links.append(link)
        return link

    def link(self, name: str) -> InequalityLink:
        for l in self.links:
            if l.name == name:
                return l
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "instance_digest": self.instance, "params": self.params,
                "links": [l.to_dict(self.tolerance) for l in self.links], "notes": list(self.notes),
                "verdict": self.verdict, "runtime_s": self.runtime, "rng_seed": self.rng_seed}


# sample families ---------------------------------------------------------------------


def sample_fields(domain: Domain, p: float, *, n_random: int = DEFAULT_SAMPLES, rng_seed: int = 0,
                  signed: bool = False, max_subsets: int = 63,
                  enumeration_cap: int = ENUMERATION_CAP) -> list[tuple[str, np.ndarray]]:
    """Indicators of subsets, their capacity extremals and dyadic truncations, then random fields.

    All fields vanish off Omega. Subsets are all of them when there are at
    most ``max_subsets``, otherwise singletons and Omega. Random fields take
    values 2^U, U uniform on [-3, 3], on a random part of Omega (signed
    fields draw standard normals instead).
    """
    sp = domain.space
    n = sp.n
    out: list[tuple[str, np.ndarray]] = []
    if domain.size == 0:
        return [("zero", np.zeros(n))]
    k = domain.size
    table = subset_table(domain, p)
    if (1 << k) - 1 <= max_subsets:
        subsets = list(range(1, table.full + 1))
    else:
        subsets = [1 << i for i in range(k)] + [table.full]
    for b in subsets:
        out.append((f"indicator{{{','.join(sp.ids(table.mask(b)))}}}", table.mask(b).astype(float)))
    if k <= enumeration_cap:
        for b in subsets:
            u = table.cap(b).extremal
            name = ",".join(sp.ids(table.mask(b)))
            out.append((f"extremal{{{name}}}", u))
            w = fields.dyadic_window(u)
            if w is not None:
                for j in range(w[0] + 1, w[1]):
                    t = fields.truncate_dyadic(u, j)
                    if t.any() and not np.array_equal(t, table.mask(b)):
                        out.append((f"truncation{{{name}}}[{j}]", t))
    rng = np.random.default_rng(rng_seed)
    idx = domain.idx
    for i in range(n_random):
        u = np.zeros(n)
        if signed:
            u[idx] = rng.standard_normal(k)
        else:
            vals = np.exp2(rng.uniform(-3.0, 3.0, k))
            keep = rng.random(k) < 0.8
            u[idx] = vals * keep
        out.append((f"random[{i}]", u))
    return out


def _report(theorem: str, domain_or_space, params: dict, tol: float, rng_seed: int) -> VerificationReport:
    digest = domain_or_space.digest
    return VerificationReport(theorem, digest, params, tolerance=tol, rng_seed=int(rng_seed))


def _timed(fn: Callable[..., VerificationReport]):
    def wrapper(*args, timing: bool = False, **kwargs):
        t0 = time.perf_counter()
        rep = fn(*args, **kwargs)
        if timing:
            rep.runtime = time.perf_counter() - t0
        return rep

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# shared level machinery ------------------------------------------------------------


@dataclass
class Levels:
    """|u| on Omega split into its distinct levels with the subset bitmask of each superlevel set."""

    thresholds: np.ndarray
    bits: list[int]


def levels(table: SubsetTable, u: np.ndarray) -> Levels:
    ld = fields.level_data(table.domain, u)
    return Levels(ld.thresholds, [table.bits(s) for s in ld.sets])


def level_integral_of(table: SubsetTable, lv: Levels, p: float, value: Callable[[int], float]) -> float:
    """int_0^inf t^(p-1) value(E_t) dt, value evaluated on each distinct superlevel set."""
    vals = np.array([value(b) for b in lv.bits])
    return fields.level_integral(lv.thresholds, vals, p) / p


def superlevel_bits(table: SubsetTable, u: np.ndarray, j: int) -> int:
    a = np.abs(np.asarray(u, dtype=float))
    return table.bits(table.domain.omega & (a >= 2.0 ** j))


def _add_level_chain(rep: VerificationReport, tag: str, table: SubsetTable, u: np.ndarray, p: float,
                     set_value: Callable[[int], float], admissible_energy: Callable[[np.ndarray], float],
                     total_energy: float, what: str) -> float:
    """Links bounding the level integral of a capacity-type set function by 2^(2p-1) energy."""
    lv = levels(table, u)
    integral = level_integral_of(table, lv, p, set_value)
    d_cap = fields.dyadic_sum(u, p, lambda j: set_value(superlevel_bits(table, u, j)))
    d_trunc = fields.dyadic_sum(u, p, lambda j: admissible_energy(fields.truncate_dyadic(u, j)))
    rep.add(f"{tag}:level-integral<=2^(p-1)*dyadic-{what}", integral, 2 ** (p - 1) * d_cap,
            f"level integral of {what} against its dyadic sum")
    rep.add(f"{tag}:dyadic-{what}<=dyadic-truncations", d_cap, d_trunc,
            f"{what} of a superlevel set against its dyadic truncation")
    rep.add(f"{tag}:dyadic-truncations<=2^p*energy", d_trunc, 2 ** p * total_energy,
            "truncation energies live on disjoint bands")
    rep.add(f"{tag}:level-integral<=2^(2p-1)*energy", integral, 2 ** (2 * p - 1) * total_energy,
            f"level integral of {what} bounded by energy")
    return integral


# checkers -----------------------------------------------------------------------------


@_timed
def check_qpey(domain: Domain, p: float, q: float, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
               tolerance: float = TOLERANCE, nu=None) -> VerificationReport:
    """||u||_q <= (p int t^(p-1) nu(E_t)^(p/q) dt)^(1/p), with equality when p = q or u is an indicator."""
    if not 1 <= p <= q:
        raise ParameterError("need 1 <= p <= q")
    nu = domain.space.nu if nu is None else np.asarray(nu, dtype=float)
    rep = _report("qpey", domain, {"p": p, "q": q, "samples": samples}, tolerance, rng_seed)
    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed):
        lhs = fields.lq_norm(domain, u, q, nu)
        rhs = fields.qpey_rhs(domain, u, p, q, nu)
        rep.add(f"{name}:norm<=level-integral", lhs, rhs, "Lq norm against level-set integral")
        if p == q or name.startswith("indicator"):
            rep.add(f"{name}:level-integral<=norm", rhs, lhs, "equality case")
    return rep


@_timed
def check_capaint(domain: Domain, p: float, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
                  tolerance: float = TOLERANCE) -> VerificationReport:
    """int_0^inf t^(p-1) cap_p(E_t, Omega) dt <= 2^(2p-1) E(u) for u vanishing off Omega."""
    rep = _report("capaint", domain, {"p": p, "samples": samples}, tolerance, rng_seed)
    table = subset_table(domain, p)
    sp = domain.space
    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed):
        a = np.abs(u)
        _add_level_chain(rep, name, table, a, p, lambda b: table.cap(b).value,
                         lambda v: fields.energy(sp, v, p), fields.energy(sp, a, p), "capacity")
    return rep


@_timed
def check_conint(domain: Domain, p: float, G, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
                 tolerance: float = TOLERANCE) -> VerificationReport:
    """int_0^inf t^(p-1) con_p(E_t, G, Omega) dt <= 2^(2p-1) E_Omega(u) for u vanishing off G."""
    sp = domain.space
    gmask = G if (isinstance(G, np.ndarray) and G.dtype == bool) else sp.mask(G)
    if np.any(gmask & ~domain.omega):
        raise ValidationError("G must lie in omega")
    rep = _report("conint", domain, {"p": p, "G": list(sp.ids(gmask)), "samples": samples}, tolerance, rng_seed)
    table = subset_table(domain, p)
    gbits = table.bits(gmask)
    inside = fields.edges_within(sp, domain.omega)
    if not gmask.any():
        rep.notes.append("G is empty: every admissible field vanishes")
        return rep
    for name, u in sample_fields(Domain(sp, gmask), p, n_random=samples, rng_seed=rng_seed):
        a = np.abs(u)
        _add_level_chain(rep, name, table, a, p, lambda b: table.con(b, gbits).value,
                         lambda v: fields.energy(sp, v, p, inside), fields.energy(sp, a, p, inside),
                         "conductivity")
    return rep


@dataclass
class Frozen:
    """Constants carried over from another instance (failure injection)."""

    gamma: float
    lower_pow: float


def _isocap_links(rep: VerificationReport, domain: Domain, table: SubsetTable, p: float, q: float,
                  nu: np.ndarray, gamma: float, lower_pow: float) -> None:
    for b in range(1, table.full + 1):
        r = subset_ratio(table, b, p, q, nu)
        name = ",".join(domain.space.ids(table.mask(b)))
        rep.add(f"subset{{{name}}}:isocapacitary", r, gamma, "subset ratio below the isocapacitary constant",
                exact=True)
        rep.add(f"subset{{{name}}}:seeded-sobolev", r, lower_pow,
                "subset ratio below the seeded Sobolev ratio", exact=True)


@_timed
def check_sobolev_pq(domain: Domain, p: float, q: float, *, nu=None, samples: int = DEFAULT_SAMPLES,
                     rng_seed: int = 0, restarts: int = 4, tolerance: float = TOLERANCE,
                     enumeration_cap: int = ENUMERATION_CAP, frozen: Frozen | None = None,
                     theorem: str = "sobolev-pq") -> VerificationReport:
    """Both directions of the isocapacitary characterization for p <= q, plus the sandwich."""
    if not 1 <= p <= q:
        raise ParameterError("need 1 <= p <= q")
    check_enumerable(domain, enumeration_cap)
    sp = domain.space
    nu = sp.nu if nu is None else np.asarray(nu, dtype=float)
    rep = _report(theorem, domain, {"p": p, "q": q, "samples": samples, "restarts": restarts,
                                    "frozen": frozen is not None}, tolerance, rng_seed)
    table = subset_table(domain, p)
    g = gamma_subset(domain, p, q, nu=nu, enumeration_cap=enumeration_cap)
    est = sobolev_constant(domain, p, q, "zero", nu=nu, rng_seed=rng_seed, restarts=restarts,
                           enumeration_cap=enumeration_cap, with_upper=False)
    gamma = g.value if frozen is None else frozen.gamma
    lower_pow = est.lower_pow if frozen is None else frozen.lower_pow
    factor = p * 2.0 ** (2 * p - 1)
    rep.params.update({"gamma": gamma, "c_S_lower": lower_pow ** (1 / p) if lower_pow > 0 else 0.0,
                       "c_S_upper": _mul(gamma, factor) ** (1 / p)})

    # (a) witness of gamma and of the Sobolev lower bound reproduce their values
    if g.witness:
        wb = table.bits(sp.mask(g.witness))
        r = subset_ratio(table, wb, p, q, nu)
        rep.add("gamma:witness<=gamma", r, gamma, "isocapacitary witness reproduces the constant", exact=True)
        rep.add("gamma<=gamma:witness", gamma, r, "isocapacitary witness reproduces the constant", exact=True)
    wr = ratio_parts(domain, est.witness, p, q, "zero", nu).power(p, q)
    rep.add("c_S:witness-ratio>=lower", est.lower_pow, wr, "Sobolev witness reproduces the lower bound", exact=True)
    # (c) every subset obeys the isocapacitary inequality with gamma and with c_S_lower^p
    _isocap_links(rep, domain, table, p, q, nu, gamma, lower_pow)
    # (d) sandwich
    rep.add("sandwich:gamma<=c_S_lower^p", gamma, lower_pow, "seeded lower bound dominates gamma", exact=True)
    rep.add("sandwich:c_S_lower^p<=gamma*p*2^(2p-1)", lower_pow, _mul(gamma, factor), "isocapacitary upper bound")
    # (b) sampled fields through the level-set argument
    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed):
        a = np.abs(u)
        norm_p = fields.lq_power(nu[domain.omega], a[domain.omega], q) ** (p / q)
        qp = fields.qpey_rhs(domain, a, p, q, nu) ** p
        lv = levels(table, a)
        icap = level_integral_of(table, lv, p, lambda b: table.cap(b).value)
        e = fields.energy(sp, a, p)
        rep.add(f"{name}:norm^p<=level-integral", norm_p, qp, "Lq norm against level-set integral")
        rep.add(f"{name}:level-integral<=gamma*p*capacity-integral", qp, _mul(gamma, p, icap),
                "isocapacitary inequality on every level set")
        rep.add(f"{name}:capacity-integral<=2^(2p-1)*energy", icap, 2 ** (2 * p - 1) * e,
                "level integral of capacity bounded by energy")
        rep.add(f"{name}:norm^p<=gamma*p*2^(2p-1)*energy", norm_p, _mul(gamma, factor, e), "Sobolev inequality")
    return rep


@_timed
def check_hardy(domain: Domain, p: float, **kwargs) -> VerificationReport:
    """The p = q characterization with nu replaced by mu / dist(., complement)^p."""
    kwargs.pop("theorem", None)
    return check_sobolev_pq(domain, p, p, nu=hardy_weights(domain, p), theorem="hardy", **kwargs)


@_timed
def check_ball_criterion(space: DiscreteMMSpace, q: float, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
                         tolerance: float = TOLERANCE, family: Sequence | None = None,
                         max_family: int = 255) -> VerificationReport:
    """p = 1: balls suffice in the isocapacitary inequality, via Hausdorff content."""
    dom = global_domain(space)
    nu = space.nu
    table = subset_table(dom, 1.0)
    g = gamma_ball(space, q)
    c_d = doubling_estimate(space)
    rep = _report("ball-p1", space, {"q": q, "samples": samples}, tolerance, rng_seed)
    gamma = g.value
    wb = table.bits(space.mask(g.witness["members"]))
    r = subset_ratio(table, wb, 1.0, q, nu)
    rep.add("gamma_ball:witness<=gamma", r, gamma, "ball witness reproduces the constant", exact=True)
    rep.add("gamma_ball<=gamma_ball:witness", gamma, r, "ball witness reproduces the constant", exact=True)

    if family is None:
        if table.full <= max_family:
            fam_bits = list(range(1, table.full + 1))
        else:
            rng = np.random.default_rng(rng_seed)
            fam_bits = sorted({1 << i for i in range(dom.size)} | {table.full} |
                              {int(rng.integers(1, table.full + 1)) for _ in range(max_family)})
    else:
        fam_bits = [table.bits(space.mask(K)) for K in family]
    samples_ = sample_fields(dom, 1.0, n_random=samples, rng_seed=rng_seed, max_subsets=max_family)
    for _, u in samples_:
        for b in levels(table, np.abs(u)).bits:
            if b not in fam_bits:
                fam_bits.append(b)

    content: dict[int, float] = {}
    worst_ratio = 0.0
    for b in fam_bits:
        K = table.mask(b)
        name = ",".join(space.ids(K))
        cov = content_cover(space, K, allowed=dom.omega)
        content[b] = cov.value
        nuK = table.nu_power(b, 1.0, nu) ** (1.0 / q)
        balls_nu = sum(table.nu_power(table.bits(space.mask(B.members)), 1.0, nu) ** (1.0 / q) for B in cov.cover)
        balls_cap = sum(table.cap(table.bits(space.mask(B.members))).value for B in cov.cover)
        rep.add(f"K{{{name}}}:nu(K)^(1/q)<=sum-over-cover", nuK, balls_nu, "subadditivity over the optimal cover")
        rep.add(f"K{{{name}}}:cover<=gamma_ball*sum-cap", balls_nu, _mul(gamma, balls_cap),
                "ball isocapacitary inequality")
        for i, B in enumerate(cov.cover):
            cb = table.cap(table.bits(space.mask(B.members))).value
            mu_b = float(space.mu[space.mask(B.members)].sum())
            rep.add(f"K{{{name}}}:ball[{i}]:cap<=c_D*mu/r", cb, c_d * mu_b / B.radius,
                    "tent function bound with the measured doubling constant")
        rep.add(f"K{{{name}}}:nu(K)^(1/q)<=gamma_ball*c_D*content", nuK, _mul(gamma, c_d, cov.value),
                "content form of the isocapacitary inequality")
        cap_k = table.cap(b).value
        if cap_k > 0:
            worst_ratio = max(worst_ratio, cov.value / cap_k)
    rep.params.update({"gamma_ball": gamma, "c_D": c_d, "content_over_capacity": worst_ratio,
                       "family_size": len(fam_bits)})

    for name, u in samples_:
        a = np.abs(u)
        lv = levels(table, a)
        norm = fields.lq_power(nu[dom.omega], a[dom.omega], q) ** (1.0 / q)
        qp = fields.qpey_rhs(dom, a, 1.0, q, nu)
        icont = level_integral_of(table, lv, 1.0, lambda b: content[b])
        icap = level_integral_of(table, lv, 1.0, lambda b: table.cap(b).value)
        e = fields.energy(space, a, 1.0)
        rep.add(f"{name}:norm<=level-integral", norm, qp, "Lq norm against level-set integral")
        rep.add(f"{name}:level-integral<=gamma_ball*c_D*content-integral", qp, _mul(gamma, c_d, icont),
                "content form on every level set")
        rep.add(f"{name}:content-integral<=ratio*capacity-integral", icont, worst_ratio * icap,
                "measured content-capacity comparability")
        rep.add(f"{name}:capacity-integral<=2*energy", icap, 2 * e, "level integral of capacity bounded by energy")
        rep.add(f"{name}:norm<=2*gamma_ball*c_D*ratio*energy", norm, _mul(2, gamma, c_d, worst_ratio, e),
                "Sobolev inequality for p = 1")
    return rep


@dataclass
class Run:
    lo: int | None  # lowest dyadic index of the run, None for the bottom run
    hi: int
    bits: int
    outer: int


def dyadic_runs(table: SubsetTable, u: np.ndarray) -> list[Run]:
    """Maximal runs of dyadic indices j with the same superlevel set {|u| >= 2^j}, bottom first."""
    w = fields.dyadic_window(u)
    if w is None:
        return []
    lo, hi = w
    runs: list[Run] = []
    for j in range(lo, hi):
        b = superlevel_bits(table, u, j)
        if b == 0:
            break
        if runs and runs[-1].bits == b:
            runs[-1].hi = j
        else:
            outer = runs[-1].bits if runs else table.full
            runs.append(Run(None if not runs else j, j, b, outer))
    return runs


@_timed
def check_qp(domain: Domain, p: float, q: float, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
             restarts: int = 2, max_chain_length: int = 3, tolerance: float = TOLERANCE,
             enumeration_cap: int = ENUMERATION_CAP, nu=None) -> VerificationReport:
    """q < p: the chain constant controls the Sobolev constant in both directions."""
    if not 1 <= q < p:
        raise ParameterError("need 1 <= q < p")
    check_enumerable(domain, enumeration_cap)
    sp = domain.space
    nu = sp.nu if nu is None else np.asarray(nu, dtype=float)
    table = subset_table(domain, p)
    rep = _report("qp", domain, {"p": p, "q": q, "samples": samples, "max_chain_length": max_chain_length},
                  tolerance, rng_seed)
    g_all = gamma_chain(domain, p, q, nu=nu, max_chain_length=None, enumeration_cap=enumeration_cap)
    gamma = g_all.value
    e_exp = q / (p - q)
    const = q * 2.0 ** (2 * q - 1) / (1 - 2.0 ** (-q))
    rep.params.update({"gamma_chain": gamma})

    # direction (i): sampled fields
    om = domain.omega
    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed):
        a = np.abs(u)
        runs = dyadic_runs(table, a)
        if not runs:
            continue
        e = fields.energy(sp, a, p)
        integral = fields.lq_power(nu[om], a[om], q)
        d = fields.dyadic_sum(a, q, lambda j: table.nu_power(superlevel_bits(table, a, j), 1.0, nu))
        run_mass = sum(2.0 ** (r.hi * q) * table.nu_power(r.bits, 1.0, nu) for r in runs)
        caps, truncs, chain_sum = [], [], 0.0
        for r in runs:
            c = table.cap(r.bits, r.outer).value
            lo_v = 0.0 if r.lo is None else 2.0 ** (r.lo - 1)
            v = fields.truncate_band(a, lo_v, 2.0 ** r.hi)
            ev = fields.energy(sp, v, p)
            rep.add(f"{name}:run[{r.hi}]:cap<=truncation-energy", c, ev, "band truncation is admissible")
            caps.append(c)
            truncs.append(ev)
            m = table.nu_power(r.bits, 1.0, nu)
            chain_sum += 0.0 if m == 0 else (math.inf if c == 0 else (m ** (p / q) / c) ** e_exp)
        weighted_caps = sum(2.0 ** (r.hi * p) * c for r, c in zip(runs, caps))
        weighted_truncs = sum(2.0 ** (r.hi * p) * t for r, t in zip(runs, truncs))
        holder = weighted_caps ** (q / p) * chain_sum ** ((p - q) / p)
        rep.add(f"{name}:integral<=q*2^(q-1)*dyadic-sum", integral, q * 2 ** (q - 1) * d,
                "dyadic layer-cake bound")
        rep.add(f"{name}:dyadic-sum<=run-sum/(1-2^-q)", d, run_mass / (1 - 2.0 ** (-q)), "geometric sum per run")
        rep.add(f"{name}:run-sum<=holder", run_mass, holder, "Hoelder split against the run chain")
        rep.add(f"{name}:run-chain<=gamma_chain", chain_sum, gamma ** e_exp, "run chain is a competitor")
        rep.add(f"{name}:weighted-caps<=weighted-truncations", weighted_caps, weighted_truncs,
                "capacity below truncation energy")
        rep.add(f"{name}:weighted-truncations<=2^p*energy", weighted_truncs, 2 ** p * e,
                "truncations on disjoint bands")
        rep.add(f"{name}:integral<=C*gamma^(q/p)*energy^(q/p)", integral, const * _mul(gamma, e) ** (q / p),
                "Sobolev inequality for q < p")

    # direction (ii): extremals of enumerated chains
    chains = enumerate_chains(table, max_chain_length)
    built: list[tuple[str, ChainExtremal]] = []
    for ch in chains:
        ids = [list(sp.ids(table.mask(b))) for b in ch]
        ce = build_chain_extremal(domain, ids, p, q, nu=nu)
        built.append(("chain" + "<".join("{" + ",".join(s) + "}" for s in ids), ce))
    est = sobolev_constant(domain, p, q, "zero", nu=nu, rng_seed=rng_seed, restarts=restarts,
                           extra_seeds=[ce.u for _, ce in built], enumeration_cap=enumeration_cap,
                           with_upper=False)
    rep.params.update({"c_S_lower": est.lower})
    for name, ce in built:
        if not np.any(ce.masses > 0):
            rep.notes.append(f"{name}: all sets have zero mass, skipped")
            continue
        u = ce.u
        integral = fields.lq_power(nu[om], u[om], q)
        nxt = np.concatenate([ce.levels[1:], [0.0]])
        cav = float(np.sum(ce.masses * (ce.levels ** q - nxt ** q)))
        s_mass = float(np.sum(ce.masses * ce.steps ** q))
        s_cap = float(np.sum(ce.steps ** p * ce.caps))
        k = bands_per_edge(sp, ce.parts)
        e = fields.energy(sp, u, p)
        chain_gamma = s_mass ** ((p - q) / q)
        rp = ratio_parts(domain, u, p, q, "zero", nu).power(p, q)
        rep.add(f"{name}:cavalieri-lower<=integral", cav, integral, "plateau values bound the integral below")
        rep.add(f"{name}:step-sum<=cavalieri-lower", s_mass, cav, "superadditivity of t^q")
        rep.add(f"{name}:step-sum=energy-sum", s_mass, s_cap, "steps balance mass against capacity")
        rep.add(f"{name}:energy-sum=step-sum", s_cap, s_mass, "steps balance mass against capacity")
        rep.add(f"{name}:energy<=K^(p-1)*energy-sum", e, k ** (p - 1) * s_cap, "energy of the layered extremal")
        rep.add(f"{name}:chain/K^(p-1)<=ratio^p", chain_gamma / k ** (p - 1), rp, "ratio of the layered extremal")
        rep.add(f"{name}:ratio^p<=c_S_lower^p", rp, est.lower_pow, "extremal is a seed", exact=True)
        rep.add(f"{name}:chain<=K^(p-1)*c_S_lower^p", chain_gamma, _mul(k ** (p - 1), est.lower_pow),
                "chain functional bounded by the Sobolev constant")
    return rep


def enumerate_chains(table: SubsetTable, max_len: int) -> list[tuple[int, ...]]:
    """All strictly nested chains of nonempty subsets with at most ``max_len`` sets, in canonical order."""
    out: list[tuple[int, ...]] = []

    def extend(ch: tuple[int, ...]):
        out.append(ch)
        if len(ch) >= max_len:
            return
        last = ch[-1]
        sub = table.full & ~last
        ext = []
        b = sub
        while b:
            ext.append(last | b)
            b = (b - 1) & sub
        for nb in sorted(ext):
            extend(ch + (nb,))

    for a in range(1, table.full + 1):
        extend((a,))
    return out


def bands_per_edge(space: DiscreteMMSpace, parts: Sequence[np.ndarray]) -> int:
    """Largest number of layer functions that vary across a single edge."""
    if not parts:
        return 1
    e = space.edges
    varies = np.array([u[e[:, 0]] != u[e[:, 1]] for u in parts])
    return max(1, int(varies.sum(axis=0).max()))


def _profile_integral(profile, a: float, b: float, p: float, q: float) -> float:
    """int_a^b t^(s'-1) lambda(t)^(-q/(p-q)) dt for the step profile."""
    sp_ = p / (p - q)
    e = q / (p - q)
    lo = 0.0
    total = 0.0
    for hi, lam in zip(profile.breaks, profile.values):
        x0, x1 = max(lo, a), min(hi, b)
        if x1 > x0:
            if lam == 0:
                return math.inf
            total += (x1 ** sp_ - x0 ** sp_) / sp_ / lam ** e
        lo = hi
    return total


@_timed
def check_integral_criterion(domain: Domain, p: float, q: float, *, samples: int = DEFAULT_SAMPLES,
                             rng_seed: int = 0, restarts: int = 2, tolerance: float = TOLERANCE,
                             enumeration_cap: int = ENUMERATION_CAP) -> VerificationReport:
    """q < p: the capacity profile integral c_I controls the Sobolev constant in both directions."""
    if not 1 <= q < p:
        raise ParameterError("need 1 <= q < p")
    sp = domain.space
    nu = sp.nu
    rep = _report("integral", domain, {"p": p, "q": q, "samples": samples}, tolerance, rng_seed)
    om = domain.omega
    if not np.any(nu[om] > 0):
        rep.notes.append("nu vanishes on omega: vacuous")
        return rep
    table = subset_table(domain, p)
    prof = capacity_profile(domain, p, enumeration_cap=enumeration_cap)
    c_i = integral_from_profile(prof, p, q)
    s = p / q
    s2 = p / (p - q)
    e_exp = q / (p - q)
    rep.params.update({"c_I": c_i})

    def lam(mass: float) -> float:
        return prof(mass) if mass > 0 else 0.0

    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed):
        a = np.abs(u)
        w = fields.dyadic_window(a)
        if w is None:
            continue
        lo, hi = w
        masses = {j: table.nu_power(superlevel_bits(table, a, j), 1.0, nu) for j in range(lo, hi + 1)}
        integral = fields.lq_power(nu[om], a[om], q)
        e = fields.energy(sp, a, p)
        H = sum(2.0 ** (j * q) * (masses[j] - masses[j + 1]) for j in range(lo, hi))
        P1 = fields.dyadic_sum(a, p, lambda j: lam(table.nu_power(superlevel_bits(table, a, j), 1.0, nu)))
        C1 = fields.dyadic_sum(a, p, lambda j: table.cap(superlevel_bits(table, a, j)).value)
        P2, bound = 0.0, 0.0
        for j in range(lo, hi):
            dm = masses[j] - masses[j + 1]
            if dm > 0:
                P2 += dm ** s2 / lam(masses[j]) ** e_exp
                bound += s2 * _profile_integral(prof, masses[j + 1], masses[j], p, q)
        rep.add(f"{name}:integral<=2^q*band-sum", integral, 2 ** q * H, "half-open dyadic bands")
        rep.add(f"{name}:band-sum<=holder", H, P1 ** (1 / s) * P2 ** (1 / s2), "Hoelder with s = p/q")
        rep.add(f"{name}:profile-sum<=capacity-sum", P1, C1, "profile below the capacity of each level set",
                exact=True)
        rep.add(f"{name}:capacity-sum<=2^p*energy", C1, 2 ** p * e, "truncations on disjoint bands")
        rep.add(f"{name}:mass-sum<=profile-integral", P2, bound, "superadditivity and monotone profile")
        rep.add(f"{name}:profile-integral<=s'*c_I", bound, _mul(s2, c_i), "pieces of the profile integral")
        rep.add(f"{name}:integral<=2^(2q)*(s'c_I)^(1/s')*energy^(q/p)", integral,
                _mul(2 ** (2 * q), _mul(s2, c_i) ** (1 / s2), e ** (q / p)), "Sobolev inequality from the profile")

    se = build_sup_extremal(domain, p, q, profile=prof, enumeration_cap=enumeration_cap)
    est = sobolev_constant(domain, p, q, "zero", rng_seed=rng_seed, restarts=restarts, extra_seeds=[se.u],
                           enumeration_cap=enumeration_cap, with_upper=False)
    u = se.u
    integral = fields.lq_power(nu[om], u[om], q)
    e = fields.energy(sp, u, p)
    F = se.fq_sum
    rp = ratio_parts(domain, u, p, q, "zero", nu).power(p, q)
    rep.params.update({"c_S_lower": est.lower, "levels": se.levels.tolist(), "betas": se.betas.tolist()})
    rep.add("sup:half-fq-sum<=integral", F / 2, integral, "union of witness sets at each height")
    rep.add("sup:energy<=gp-sum", e, se.gp_sum, "gradient of a supremum")
    rep.add("sup:energy<=2*gp-sum", e, 2 * se.gp_sum, "gradient of a supremum")
    rep.add("sup:fq-sum=gp-sum", F, se.gp_sum, "beta balances mass against the profile")
    rep.add("sup:gp-sum=fq-sum", se.gp_sum, F, "beta balances mass against the profile")
    rep.add("sup:fq-sum<=(2*ratio^q)^s'", F, (2 * rp ** (q / p)) ** s2, "ratio of the supremum extremal")
    rep.add("sup:ratio^p<=c_S_lower^p", rp, est.lower_pow, "extremal is a seed", exact=True)
    rep.add("sup:fq-sum<=(2*c_S^q)^s'", F, (2 * est.lower_pow ** (q / p)) ** s2,
            "dyadic sum bounded by the Sobolev constant")
    k = 2.0 ** (s2 - 1) + 1.0 / s2
    rep.add("sup:c_I<=K*fq-sum", c_i, k * F, "profile integral against its dyadic samples")
    rep.add("sup:c_I<=K*(2*c_S^q)^s'", c_i, k * (2 * est.lower_pow ** (q / p)) ** s2,
            "profile integral bounded by the Sobolev constant")
    return rep


def median_level(values: np.ndarray, weights: np.ndarray) -> float:
    """Smallest value a of u with nu(u >= a) >= nu/2 and nu(u > a) <= nu/2."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    half = float(w.sum()) / 2
    for a in np.unique(v):
        if float(w[v >= a].sum()) >= half and float(w[v > a].sum()) <= half:
            return float(a)
    raise ValidationError("no median level")  # unreachable for finite data


@_timed
def check_conductivity(domain: Domain, p: float, q: float, *, samples: int = DEFAULT_SAMPLES, rng_seed: int = 0,
                       restarts: int = 2, tolerance: float = TOLERANCE,
                       enumeration_cap: int = ENUMERATION_CAP) -> VerificationReport:
    """p <= q: conductor constants control the median-centred Sobolev-Poincare constant."""
    if not 1 <= p <= q:
        raise ParameterError("need 1 <= p <= q")
    check_enumerable(domain, enumeration_cap)
    sp = domain.space
    nu = sp.nu
    om = domain.omega
    total = float(nu[om].sum())
    if total <= 0:
        raise ValidationError("conductivity check needs nu(omega) > 0")
    table = subset_table(domain, p)
    rep = _report("conductivity", domain, {"p": p, "q": q, "samples": samples}, tolerance, rng_seed)
    g = gamma_conductor(domain, p, q, enumeration_cap=enumeration_cap)
    gamma = g.value
    rep.params.update({"gamma_con": gamma})
    conds = conductors(table, nu)
    for F, G in conds:
        m = table.nu_power(F, q, nu)
        c = table.con(F, G).value
        r = 0.0 if m == 0 else (math.inf if c == 0 else m ** (p / q) / c)
        name = "{" + ",".join(sp.ids(table.mask(F))) + "}/{" + ",".join(sp.ids(table.mask(G))) + "}"
        rep.add(f"conductor{name}:ratio<=gamma_con", r, gamma, "conductor ratio below the constant", exact=True)
    if g.witness is not None:
        Fb, Gb = table.bits(sp.mask(g.witness["F"])), table.bits(sp.mask(g.witness["G"]))
        c = table.con(Fb, Gb).value
        r = table.nu_power(Fb, q, nu) ** (p / q) / c if c > 0 else math.inf
        rep.add("gamma_con<=witness", gamma, r, "conductor witness reproduces the constant", exact=True)

    inside = fields.edges_within(sp, om)
    one_sided = _mul(p, gamma, 2.0 ** (2 * p - 1)) ** (1 / p)
    final_c = 2.0 ** (1 - 1 / p) * one_sided
    for name, u in sample_fields(domain, p, n_random=samples, rng_seed=rng_seed, signed=True):
        uo = u[om]
        alpha = median_level(uo, nu[om])
        e_u = fields.energy(sp, u * om, p, inside)
        parts = []
        for sign, tag in ((1.0, "upper"), (-1.0, "lower")):
            w = np.where(om, np.maximum(sign * (u - alpha), 0.0), 0.0)
            gmask = om & (w > 0)
            gbits = table.bits(gmask)
            rep.add(f"{name}:{tag}:support-mass<=half", float(nu[gmask].sum()), total / 2,
                    "median split leaves at most half the mass", exact=True)
            ew = fields.energy(sp, w, p, inside)
            norm_p = fields.lq_power(nu[om], w[om], q) ** (p / q)
            qp = fields.qpey_rhs(domain, w, p, q, nu) ** p
            lv = levels(table, w)
            icon = level_integral_of(table, lv, p, lambda b: table.con(b, gbits).value)
            rep.add(f"{name}:{tag}:norm^p<=level-integral", norm_p, qp, "Lq norm against level-set integral")
            rep.add(f"{name}:{tag}:level-integral<=gamma_con*p*conductivity-integral", qp, _mul(gamma, p, icon),
                    "conductor inequality on every level set")
            rep.add(f"{name}:{tag}:conductivity-integral<=2^(2p-1)*energy", icon, 2 ** (2 * p - 1) * ew,
                    "level integral of conductivity bounded by energy")
            parts.append((norm_p ** (1 / p), ew))
        rep.add(f"{name}:split-energy<=energy", parts[0][1] + parts[1][1], e_u, "the two halves share no gradient")
        a_best = ratio_parts(domain, u, p, q, "median", nu).shift
        inf_norm = fields.lq_power(nu[om], uo - a_best, q) ** (1 / q)
        med_norm = fields.lq_power(nu[om], uo - alpha, q) ** (1 / q)
        rep.add(f"{name}:inf-over-constants<=median-norm", inf_norm, med_norm, "median is a competitor")
        rep.add(f"{name}:median-norm<=sum-of-halves", med_norm, parts[0][0] + parts[1][0], "Minkowski")
        rep.add(f"{name}:inf-norm<=C*energy^(1/p)", inf_norm, _mul(final_c, e_u ** (1 / p)),
                "median-centred Sobolev-Poincare inequality")

    # direction (ii): conductivity extremals against the Poincare-type constant
    est = sobolev_constant(domain, p, q, "median", rng_seed=rng_seed, restarts=restarts,
                           enumeration_cap=enumeration_cap, with_upper=False)
    rep.params.update({"c_P_lower": est.lower})
    k = 2.0 ** (1 + 1 / q) + 2.0
    w_om = nu[om]
    for F, G in conds:
        res = table.con(F, G)
        u = res.extremal
        uo = u[om]
        name = "{" + ",".join(sp.ids(table.mask(F))) + "}/{" + ",".join(sp.ids(table.mask(G))) + "}"
        mean = float(np.sum(w_om * uo) / total)
        rp = ratio_parts(domain, u, p, q, "median", nu)
        inf_norm = rp.numer ** (1 / q)
        mean_norm = fields.lq_power(w_om, uo - mean, q) ** (1 / q)
        norm = fields.lq_power(w_om, uo, q) ** (1 / q)
        nu_f = table.nu_power(F, q, nu) ** (1 / q)
        rep.add(f"conductor{name}:mean-norm<=2*inf-norm", mean_norm, 2 * inf_norm, "mean against best constant")
        rep.add(f"conductor{name}:mean^q*nu<=2*mean-norm^q", abs(mean) ** q * total, 2 * mean_norm ** q,
                "field vanishes on at least half the mass")
        rep.add(f"conductor{name}:norm<=mean-norm+mean", norm, mean_norm + abs(mean) * total ** (1 / q), "Minkowski")
        rep.add(f"conductor{name}:nu(F)^(1/q)<=norm", nu_f, norm, "field equals one on F")
        rep.add(f"conductor{name}:ratio^p<=c_P_lower^p", rp.power(p, q), est.lower_pow, "extremal is a seed",
                exact=True)
        rep.add(f"conductor{name}:nu(F)^(1/q)<=K*c_P*con^(1/p)", nu_f,
                _mul(k, est.lower_pow ** (1 / p), res.value ** (1 / p)), "conductor inequality from Poincare")
    return rep


def inject_failure(domain: Domain, p: float, q: float, *, factor: float | None = None, rng_seed: int = 0,
                   samples: int = 8, restarts: int = 1, tolerance: float = TOLERANCE) -> tuple[VerificationReport, VerificationReport, float]:
    """Harness self-test: raise nu on the isocapacitary witness beyond the slack of its binding link.

    The constants of the unperturbed instance are frozen, so the perturbed
    instance must fail. Returns (baseline, perturbed, factor used).
    """
    base = check_sobolev_pq(domain, p, q, samples=samples, rng_seed=rng_seed, restarts=restarts,
                            tolerance=tolerance)
    g = gamma_subset(domain, p, q)
    if not g.witness or not g.value > 0:
        raise ValidationError("failure injection needs a witness of positive mass")
    wlink = base.link("gamma:witness<=gamma")
    if factor is None:
        rel = wlink.slack / max(1.0, abs(wlink.rhs))
        factor = (1 + 10 * (tolerance + max(rel, 0.0))) ** (q / p) * 1.001
    nu = domain.space.nu.copy()
    nu[domain.space.mask(g.witness)] *= factor
    frozen = Frozen(float(base.params["gamma"]), float(base.params["c_S_lower"]) ** p)
    bumped = check_sobolev_pq(domain, p, q, nu=nu, samples=samples, rng_seed=rng_seed, restarts=restarts,
                              tolerance=tolerance, frozen=frozen)
    return base, bumped, float(factor)


CHECKERS = {
    "qpey": check_qpey,
    "capaint": check_capaint,
    "sobolev-pq": check_sobolev_pq,
    "ball-p1": check_ball_criterion,
    "qp": check_qp,
    "integral": check_integral_criterion,
    "conductivity": check_conductivity,
    "conint": check_conint,
    "hardy": check_hardy,
}
