"""Vertex fields, edge gradients, p-energies and level-set integrals.

Fields are plain float arrays aligned with ``space.vertices`` (scalar fields)
or with ``space.edges`` (edge fields). Level-set integrals are evaluated in
closed form on the finite level decomposition, never by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .space import DiscreteMMSpace, Domain


def minimal_upper_gradient(space: DiscreteMMSpace, u: np.ndarray) -> np.ndarray:
    """g(e) = |u(x) - u(y)| / length(e), the smallest edge field dominating every increment."""
    u = np.asarray(u, dtype=float)
    e = space.edges
    return np.abs(u[e[:, 0]] - u[e[:, 1]]) / space.length


def p_energy(space: DiscreteMMSpace, g: np.ndarray, p: float, edges: np.ndarray | None = None) -> float:
    """sum_e mass(e) g(e)^p, optionally restricted by a boolean edge mask."""
    if p < 1:
        raise ParameterError("p must be >= 1")
    terms = space.mass * np.asarray(g, dtype=float) ** p
    if edges is not None:
        terms = terms[edges]
    return float(np.sum(terms))


def energy(space: DiscreteMMSpace, u: np.ndarray, p: float, edges: np.ndarray | None = None) -> float:
    return p_energy(space, minimal_upper_gradient(space, u), p, edges)


def edges_within(space: DiscreteMMSpace, mask: np.ndarray) -> np.ndarray:
    """Edges with both endpoints in ``mask``."""
    e = space.edges
    return mask[e[:, 0]] & mask[e[:, 1]]


def edges_touching(space: DiscreteMMSpace, mask: np.ndarray) -> np.ndarray:
    e = space.edges
    return mask[e[:, 0]] | mask[e[:, 1]]


def lq_power(weights: np.ndarray, values: np.ndarray, q: float) -> float:
    """sum w |v|^q. Monotone in every |v|, which the exact seeding links rely on."""
    return float(np.sum(weights * np.abs(values) ** q))


def _measure(domain: Domain, measure) -> np.ndarray:
    if isinstance(measure, str):
        if measure not in ("mu", "nu"):
            raise ParameterError(f"unknown measure {measure!r}")
        return getattr(domain.space, measure)
    return np.asarray(measure, dtype=float)


def lq_norm(domain: Domain, u: np.ndarray, q: float, measure="nu") -> float:
    m = _measure(domain, measure)[domain.omega]
    return lq_power(m, np.asarray(u)[domain.omega], q) ** (1.0 / q)


@dataclass(frozen=True)
class LevelData:
    """Strict superlevel sets E_t = {x in Omega : |u(x)| > t} at the breakpoints of |u|.

    ``sets[k]`` is E_t for every t in [thresholds[k-1], thresholds[k]) with
    thresholds[-1] read as 0, i.e. the set {|u| >= thresholds[k]}.
    """

    thresholds: np.ndarray
    sets: tuple[np.ndarray, ...]
    mu_mass: np.ndarray
    nu_mass: np.ndarray

    def superlevel(self, t: float) -> np.ndarray:
        """E_t for arbitrary t >= 0."""
        k = int(np.searchsorted(self.thresholds, t, side="right"))
        if k >= len(self.sets):
            return np.zeros_like(self.sets[0]) if self.sets else np.zeros(0, dtype=bool)
        return self.sets[k]


def level_data(domain: Domain, u: np.ndarray) -> LevelData:
    a = np.abs(np.asarray(u, dtype=float)) * domain.omega
    thresholds = np.unique(a[domain.omega & (a > 0)])
    sets = tuple(domain.omega & (a >= t) for t in thresholds)
    sp = domain.space
    mu_mass = np.array([sp.mu[s].sum() for s in sets])
    nu_mass = np.array([sp.nu[s].sum() for s in sets])
    return LevelData(thresholds, sets, mu_mass, nu_mass)


def level_integral(thresholds: np.ndarray, values: np.ndarray, p: float) -> float:
    """p * int_0^inf t^(p-1) F(t) dt for F equal to values[k] on [t_{k-1}, t_k)."""
    t = np.concatenate([[0.0], thresholds])
    return float(np.sum((t[1:] ** p - t[:-1] ** p) * values))


def cavalieri(domain: Domain, u: np.ndarray, p: float, measure="mu") -> float:
    """p int_0^inf t^(p-1) m(E_t) dt, integrated exactly piece by piece."""
    if p < 1:
        raise ParameterError("p must be >= 1")
    m = _measure(domain, measure)
    ld = level_data(domain, u)
    masses = np.array([m[s].sum() for s in ld.sets])
    return level_integral(ld.thresholds, masses, p)


def qpey_rhs(domain: Domain, u: np.ndarray, p: float, q: float, measure="nu") -> float:
    """(p int_0^inf t^(p-1) m(E_t)^(p/q) dt)^(1/p)."""
    if not 0 < p <= q:
        raise ParameterError("need 0 < p <= q")
    m = _measure(domain, measure)
    ld = level_data(domain, u)
    masses = np.array([m[s].sum() for s in ld.sets])
    return level_integral(ld.thresholds, masses ** (p / q), p) ** (1.0 / p)


def truncate_dyadic(u: np.ndarray, j: int) -> np.ndarray:
    """0 where |u| <= 2^(j-1), 1 where |u| >= 2^j, 2^(1-j)|u| - 1 in between."""
    return np.clip(np.ldexp(np.abs(np.asarray(u, dtype=float)), 1 - j) - 1.0, 0.0, 1.0)


def truncate_band(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """(|u| - lo) / (hi - lo) clamped to [0, 1]."""
    return np.clip((np.abs(np.asarray(u, dtype=float)) - lo) / (hi - lo), 0.0, 1.0)


def dyadic_window(u: np.ndarray) -> tuple[int, int] | None:
    """Integers (lo, hi) with 2^lo < min|u| over the support and 2^(hi-1) >= max|u|.

    For j <= lo every dyadic superlevel set equals the support and every
    dyadic truncation is its indicator; for j >= hi both vanish.
    """
    a = np.abs(np.asarray(u, dtype=float))
    pos = a[a > 0]
    if pos.size == 0:
        return None
    lo = math.floor(math.log2(pos.min())) - 2
    hi = math.ceil(math.log2(pos.max())) + 2
    return lo, hi


def geometric_tail(lo: int, p: float) -> float:
    """sum_{j <= lo} 2^(j p)."""
    return 2.0 ** (lo * p) / (1.0 - 2.0 ** (-p))


def dyadic_sum(u: np.ndarray, p: float, term: Callable[[int], float]) -> float:
    """sum over all integers j of 2^(j p) term(j), with term(j) constant for j <= lo.

    ``term`` is evaluated once at the window floor and then summed in closed form.
    """
    w = dyadic_window(u)
    if w is None:
        return 0.0
    lo, hi = w
    total = geometric_tail(lo, p) * term(lo)
    for j in range(lo + 1, hi):
        total += 2.0 ** (j * p) * term(j)
    return total
