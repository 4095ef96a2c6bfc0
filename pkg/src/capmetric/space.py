"""Finite discrete metric measure spaces.

A space is a connected graph with positive edge lengths, a positive volume
measure ``mu`` and a nonnegative target measure ``nu`` on the vertices, a
positive energy weight ``mass`` on the edges, and an optional far-field
boundary. Vertex ids are strings; internally everything is indexed by the
position of a vertex in ``space.vertices``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import SpaceFormatError, ValidationError

_DECIMAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMMSpace:
    vertices: tuple[str, ...]
    mu: np.ndarray
    nu: np.ndarray
    edges: np.ndarray  # (n_edges, 2) vertex indices, i < j
    length: np.ndarray
    mass: np.ndarray
    boundary: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        n = len(self.vertices)
        if n == 0:
            raise ValidationError("space has no vertices")
        if len(set(self.vertices)) != n:
            raise ValidationError("duplicate vertex ids")
        for v in self.vertices:
            if not v or any(c.isspace() for c in v):
                raise ValidationError(f"invalid vertex id {v!r}")
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "nu", _frozen(self.nu))
        edges = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            bad = edges[edges[:, 0] == edges[:, 1]][0, 0]
            raise ValidationError(f"self-loop at {self.vertices[bad]}")
        edges = np.sort(edges, axis=1)
        object.__setattr__(self, "edges", _frozen(edges, np.intp))
        object.__setattr__(self, "length", _frozen(self.length))
        object.__setattr__(self, "mass", _frozen(self.mass))
        object.__setattr__(self, "boundary", frozenset(int(b) for b in self.boundary))

        if self.mu.shape != (n,) or self.nu.shape != (n,):
            raise ValidationError("measure arrays must have one entry per vertex")
        if self.length.shape != (len(edges),) or self.mass.shape != (len(edges),):
            raise ValidationError("edge arrays must have one entry per edge")
        if not np.all(np.isfinite(self.mu)) or np.any(self.mu <= 0):
            raise ValidationError("mu must be positive and finite on every vertex")
        if not np.all(np.isfinite(self.nu)) or np.any(self.nu < 0):
            raise ValidationError("nu must be nonnegative and finite")
        if not np.all(np.isfinite(self.length)) or np.any(self.length <= 0):
            raise ValidationError("edge lengths must be positive")
        if not np.all(np.isfinite(self.mass)) or np.any(self.mass <= 0):
            raise ValidationError("edge masses must be positive")
        pairs = {tuple(e) for e in edges.tolist()}
        if len(pairs) != len(edges):
            raise ValidationError("duplicate edge")
        if any(b < 0 or b >= n for b in self.boundary):
            raise ValidationError("boundary vertex out of range")
        ncomp, _ = connected_components(self.adjacency, directed=False)
        if ncomp != 1:
            raise ValidationError(f"graph is disconnected ({ncomp} components)")

    # construction -------------------------------------------------------

    @classmethod
    def build(
        cls,
        vertices: Sequence[str],
        edges: Iterable[tuple[str, str]],
        *,
        mu: Mapping[str, float] | Sequence[float] | None = None,
        nu: Mapping[str, float] | Sequence[float] | None = None,
        length: Sequence[float] | None = None,
        mass: Sequence[float] | None = None,
        boundary: Iterable[str] = (),
    ) -> "DiscreteMMSpace":
        """Build a space from vertex ids and id pairs, applying the defaults
        nu = mu and mass(x, y) = (mu(x) + mu(y)) / 2."""
        vertices = tuple(vertices)
        index = {v: i for i, v in enumerate(vertices)}

        def per_vertex(m, default):
            if m is None:
                return np.array(default, dtype=float)
            if isinstance(m, Mapping):
                return np.array([m[v] for v in vertices], dtype=float)
            return np.array(m, dtype=float)

        mu_arr = per_vertex(mu, np.ones(len(vertices)))
        nu_arr = per_vertex(nu, mu_arr)
        try:
            e = np.array([(index[a], index[b]) for a, b in edges], dtype=np.intp).reshape(-1, 2)
        except KeyError as exc:
            raise ValidationError(f"edge references unknown vertex {exc.args[0]}") from None
        len_arr = np.ones(len(e)) if length is None else np.array(length, dtype=float)
        if mass is None:
            mass_arr = (mu_arr[e[:, 0]] + mu_arr[e[:, 1]]) / 2 if len(e) else np.zeros(0)
        else:
            mass_arr = np.array(mass, dtype=float)
        try:
            bnd = frozenset(index[b] for b in boundary)
        except KeyError as exc:
            raise ValidationError(f"boundary references unknown vertex {exc.args[0]}") from None
        return cls(vertices, mu_arr, nu_arr, e, len_arr, mass_arr, bnd)

    def replace(self, **changes) -> "DiscreteMMSpace":
        kw = dict(
            vertices=self.vertices, mu=self.mu, nu=self.nu, edges=self.edges,
            length=self.length, mass=self.mass, boundary=self.boundary,
        )
        kw.update(changes)
        return DiscreteMMSpace(**kw)

    # lookups --------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    def index(self, v: str | int) -> int:
        if isinstance(v, (int, np.integer)):
            if not 0 <= v < self.n:
                raise ValidationError(f"vertex index {v} out of range")
            return int(v)
        try:
            return self._index[v]
        except KeyError:
            raise ValidationError(f"unknown vertex {v!r}") from None

    def mask(self, vs: Iterable[str | int] | None) -> np.ndarray:
        """Boolean vertex mask from ids (or indices)."""
        m = np.zeros(self.n, dtype=bool)
        if vs is not None:
            for v in vs:
                m[self.index(v)] = True
        return m

    def ids(self, mask: np.ndarray) -> tuple[str, ...]:
        return tuple(self.vertices[i] for i in np.flatnonzero(mask))

    def field(self, values: Mapping[str, float] | None = None, default: float = 0.0) -> np.ndarray:
        """Vertex array from an id -> value mapping; missing vertices get ``default``."""
        u = np.full(self.n, float(default))
        for v, x in (values or {}).items():
            u[self.index(v)] = float(x)
        return u

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.boundary)] = True
        m.setflags(write=False)
        return m

    @cached_property
    def adjacency(self):
        n = self.n
        e = self.edges
        data = np.concatenate([self.length, self.length])
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    @cached_property
    def distances(self) -> np.ndarray:
        d = shortest_path(self.adjacency, method="D", directed=False)
        d.setflags(write=False)
        return d

    @cached_property
    def diameter(self) -> float:
        return float(self.distances.max())

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(dump_space(self).encode()).hexdigest()[:16]

    def __repr__(self) -> str:
        return f"DiscreteMMSpace(n={self.n}, edges={self.n_edges}, boundary={len(self.boundary)})"


@dataclass(frozen=True, eq=False)
class Domain:
    """The bounded open set Omega: a set of non-boundary vertices of a space."""

    space: DiscreteMMSpace
    omega: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.omega)
        if m.dtype != bool:
            m = self.space.mask(self.omega)
        m = m.copy()
        if m.shape != (self.space.n,):
            raise ValidationError("omega mask has wrong shape")
        if np.any(m & self.space.boundary_mask):
            raise ValidationError("omega must not contain far-field boundary vertices")
        m.setflags(write=False)
        object.__setattr__(self, "omega", m)

    @classmethod
    def of(cls, space: DiscreteMMSpace, omega: Iterable[str | int] | None = None) -> "Domain":
        """Domain from ids; ``None`` means every non-boundary vertex."""
        if omega is None:
            return cls(space, ~space.boundary_mask)
        return cls(space, space.mask(omega))

    @property
    def idx(self) -> np.ndarray:
        return np.flatnonzero(self.omega)

    @property
    def size(self) -> int:
        return int(self.omega.sum())

    @property
    def complement(self) -> np.ndarray:
        return ~self.omega

    def ids(self) -> tuple[str, ...]:
        return self.space.ids(self.omega)

    def with_nu(self, nu: np.ndarray) -> "Domain":
        return Domain(self.space.replace(nu=nu), self.omega)

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256(self.space.digest.encode())
        h.update(",".join(self.ids()).encode())
        return h.hexdigest()[:16]


# queries ------------------------------------------------------------------


def distance(space: DiscreteMMSpace, x, y) -> float:
    return float(space.distances[space.index(x), space.index(y)])


def ball(space: DiscreteMMSpace, x, r: float) -> frozenset[str]:
    """Open ball {y : d(x, y) < r}."""
    if not r > 0:
        raise ValidationError("ball radius must be positive")
    return frozenset(space.ids(ball_mask(space, space.index(x), r)))


def ball_mask(space: DiscreteMMSpace, i: int, r: float) -> np.ndarray:
    return space.distances[i] < r


def candidate_radii(space: DiscreteMMSpace, r_max: float | None = None) -> np.ndarray:
    """Sorted distinct positive pairwise distances, capped at ``r_max``."""
    d = space.distances
    r = np.unique(d[d > 0])
    if r_max is not None:
        r = r[r <= r_max]
    return r


def doubling_estimate(space: DiscreteMMSpace) -> float:
    """Exact doubling constant over all centres and all radii.

    mu(B(x, r)) is constant for r in (d_k, d_{k+1}], so the ratio
    mu(B(x, 2r)) / mu(B(x, r)) only needs to be sampled at pairwise
    distances and their halves.
    """
    radii = candidate_radii(space)
    if radii.size == 0:
        return 1.0
    radii = np.unique(np.concatenate([radii, radii / 2]))
    best = 1.0
    for i in range(space.n):
        order = np.argsort(space.distances[i], kind="stable")
        d = space.distances[i][order]
        cum = np.concatenate([[0.0], np.cumsum(space.mu[order])])
        inner = cum[np.searchsorted(d, radii, side="left")]
        outer = cum[np.searchsorted(d, 2 * radii, side="left")]
        best = max(best, float(np.max(outer / inner)))
    return best


def dist_to_complement(domain: Domain) -> dict[str, float]:
    return dict(zip(domain.ids(), dist_to_complement_array(domain)[domain.omega]))


def dist_to_complement_array(domain: Domain) -> np.ndarray:
    """Per-vertex distance to the complement of Omega (zero off Omega)."""
    comp = domain.complement
    if not comp.any():
        raise ValidationError("distance to complement undefined: omega is the whole space")
    return domain.space.distances[:, comp].min(axis=1) * domain.omega


# file format -----------------------------------------------------------------


def _decimal(tok: str, lineno: int, what: str) -> float:
    if not _DECIMAL.match(tok):
        raise SpaceFormatError(f"line {lineno}: {what} is not a decimal: {tok!r}")
    return float(tok)


def _kv(tokens: list[str], allowed: set[str], lineno: int) -> dict[str, float]:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or key not in allowed:
            raise SpaceFormatError(f"line {lineno}: unexpected token {tok!r}")
        if key in out:
            raise SpaceFormatError(f"line {lineno}: repeated key {key!r}")
        out[key] = _decimal(val, lineno, key)
    return out


def load_space(text: str) -> DiscreteMMSpace:
    """Parse the line-oriented space format (vertex / edge / boundary lines)."""
    vertices: dict[str, tuple[float, float | None]] = {}
    edges: list[tuple[str, str, float, float | None, int]] = []
    boundary: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0]
        if kind == "vertex":
            if len(tok) < 2:
                raise SpaceFormatError(f"line {lineno}: vertex needs an id")
            vid = tok[1]
            if "=" in vid:
                raise SpaceFormatError(f"line {lineno}: vertex needs an id")
            kv = _kv(tok[2:], {"mu", "nu"}, lineno)
            if "mu" not in kv:
                raise SpaceFormatError(f"line {lineno}: vertex {vid} lacks mu=")
            if kv["mu"] <= 0:
                raise SpaceFormatError(f"line {lineno}: mu must be positive")
            if kv.get("nu", 0.0) < 0:
                raise SpaceFormatError(f"line {lineno}: nu must be nonnegative")
            if vid in vertices:
                raise SpaceFormatError(f"line {lineno}: duplicate vertex {vid}")
            vertices[vid] = (kv["mu"], kv.get("nu"))
        elif kind == "edge":
            if len(tok) < 3:
                raise SpaceFormatError(f"line {lineno}: edge needs two ids")
            a, b = tok[1], tok[2]
            kv = _kv(tok[3:], {"len", "mass"}, lineno)
            if "len" not in kv:
                raise SpaceFormatError(f"line {lineno}: edge lacks len=")
            if kv["len"] <= 0:
                raise SpaceFormatError(f"line {lineno}: edge length must be positive")
            if kv.get("mass", 1.0) <= 0:
                raise SpaceFormatError(f"line {lineno}: edge mass must be positive")
            if a == b:
                raise SpaceFormatError(f"line {lineno}: self-loop at {a}")
            edges.append((a, b, kv["len"], kv.get("mass"), lineno))
        elif kind == "boundary":
            if len(tok) != 2:
                raise SpaceFormatError(f"line {lineno}: boundary takes exactly one id")
            if tok[1] in boundary:
                raise SpaceFormatError(f"line {lineno}: duplicate boundary vertex {tok[1]}")
            boundary.append(tok[1])
        else:
            raise SpaceFormatError(f"line {lineno}: unknown directive {kind!r}")

    names = list(vertices)
    index = {v: i for i, v in enumerate(names)}
    mu = np.array([vertices[v][0] for v in names])
    nu = np.array([mu[i] if vertices[v][1] is None else vertices[v][1] for i, v in enumerate(names)])
    seen = set()
    e_idx, lens, masses = [], [], []
    for a, b, ln, ms, lineno in edges:
        for v in (a, b):
            if v not in index:
                raise SpaceFormatError(f"line {lineno}: unknown vertex {v}")
        key = tuple(sorted((index[a], index[b])))
        if key in seen:
            raise SpaceFormatError(f"line {lineno}: duplicate edge {a} {b}")
        seen.add(key)
        e_idx.append(key)
        lens.append(ln)
        masses.append((mu[key[0]] + mu[key[1]]) / 2 if ms is None else ms)
    for b in boundary:
        if b not in index:
            raise SpaceFormatError(f"boundary vertex {b} is not declared")
    return DiscreteMMSpace(
        tuple(names), mu, nu, np.array(e_idx, dtype=np.intp).reshape(-1, 2),
        np.array(lens), np.array(masses), frozenset(index[b] for b in boundary),
    )


def _num(x: float) -> str:
    return format(float(x), ".17g")


def dump_space(space: DiscreteMMSpace) -> str:
    """Serialize with explicit nu and mass so that load(dump(s)) == s."""
    lines = []
    for v, m, n in zip(space.vertices, space.mu, space.nu):
        lines.append(f"vertex {v} mu={_num(m)} nu={_num(n)}")
    for (i, j), ln, ms in zip(space.edges, space.length, space.mass):
        lines.append(f"edge {space.vertices[i]} {space.vertices[j]} len={_num(ln)} mass={_num(ms)}")
    for b in sorted(space.boundary):
        lines.append(f"boundary {space.vertices[b]}")
    return "\n".join(lines) + "\n"


def same_space(a: DiscreteMMSpace, b: DiscreteMMSpace) -> bool:
    return (
        a.vertices == b.vertices
        and np.array_equal(a.mu, b.mu)
        and np.array_equal(a.nu, b.nu)
        and np.array_equal(a.edges, b.edges)
        and np.array_equal(a.length, b.length)
        and np.array_equal(a.mass, b.mass)
        and a.boundary == b.boundary
    )


# fixtures ----------------------------------------------------------------------


def path_graph(n: int, *, mu=None, nu=None, length=None, mass=None,
               boundary: Iterable[str] = (), prefix: str = "v") -> DiscreteMMSpace:
    """Path v0 - v1 - ... - v{n-1} with the default data rules of ``build``."""
    names = [f"{prefix}{i}" for i in range(n)]
    edges = list(zip(names[:-1], names[1:]))
    return DiscreteMMSpace.build(names, edges, mu=mu, nu=nu, length=length, mass=mass, boundary=boundary)


def cycle_graph(n: int, *, prefix: str = "v", boundary: Iterable[str] = ()) -> DiscreteMMSpace:
    names = [f"{prefix}{i}" for i in range(n)]
    edges = [(names[i], names[(i + 1) % n]) for i in range(n)]
    return DiscreteMMSpace.build(names, edges, mass=np.ones(n), boundary=boundary)


def grid_graph(rows: int, cols: int, *, far_field: bool = True) -> DiscreteMMSpace:
    """rows x cols grid with unit data; with ``far_field`` the outer ring is the boundary."""
    names = [f"g{r}_{c}" for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((f"g{r}_{c}", f"g{r}_{c + 1}"))
            if r + 1 < rows:
                edges.append((f"g{r}_{c}", f"g{r + 1}_{c}"))
    bnd = []
    if far_field:
        bnd = [f"g{r}_{c}" for r in range(rows) for c in range(cols)
               if r in (0, rows - 1) or c in (0, cols - 1)]
    return DiscreteMMSpace.build(names, edges, mass=np.ones(len(edges)), boundary=bnd)
