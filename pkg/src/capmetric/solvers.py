"""Minimizers of sum_e w_e |u(x) - u(y)|^p with pinned vertex values.

Every capacity-type problem in the package reduces to this form. Three
routes are used:

* p == 2: one linear solve of the weighted Laplacian on the free vertices;
* p == 1: max-flow / min-cut (Edmonds-Karp); the cut is optimal for the
  relaxed problem by the coarea formula and the flow value is a dual bound;
* otherwise: damped Newton with Armijo backtracking, started from the p = 2
  solution and finished by contracting edges whose increment has collapsed
  to zero (for p < 2 the gradient is not Lipschitz there).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .fields import energy

MAX_ITER = 100_000
TOL = 1e-10
NEWTON_ROUND = 200
MAX_ROUNDS = 50
CONTRACT_THRESHOLDS = (1e-13, 1e-11, 1e-9, 1e-7, 1e-5, 1e-4, 1e-3)


@dataclass
class Solution:
    u: np.ndarray
    value: float
    iterations: int
    residual: float
    certified_lower: float
    converged: bool


@dataclass
class _Problem:
    free: np.ndarray  # vertex indices of the free variables
    A: np.ndarray  # (n_edges, n_free) signed incidence on counted edges
    b: np.ndarray  # pinned contribution to each edge increment
    w: np.ndarray  # edge weights mass / length^p


def _energy(prob: _Problem, x: np.ndarray, p: float) -> float:
    return float(np.sum(prob.w * np.abs(prob.A @ x + prob.b) ** p))


def _gradient(prob: _Problem, x: np.ndarray, p: float) -> np.ndarray:
    d = prob.A @ x + prob.b
    return prob.A.T @ (prob.w * p * np.abs(d) ** (p - 1) * np.sign(d))


def _residual(prob: _Problem, x: np.ndarray, p: float) -> float:
    if x.size == 0:
        return 0.0
    g = _gradient(prob, x, p)
    return float(np.max(np.abs(g)) / max(1.0, float(np.max(prob.w, initial=0.0))))


def _laplace(prob: _Problem, weights: np.ndarray) -> np.ndarray:
    if prob.A.shape[1] == 0:
        return np.zeros(0)
    L = prob.A.T @ (weights[:, None] * prob.A)
    rhs = -prob.A.T @ (weights * prob.b)
    return np.linalg.solve(L, rhs)


def _newton(prob: _Problem, x: np.ndarray, p: float, tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    scale = max(1.0, float(np.max(prob.w, initial=0.0)))
    f = _energy(prob, x, p)
    it = 0
    for it in range(1, max_iter + 1):
        d = prob.A @ x + prob.b
        ad = np.abs(d)
        grad = prob.A.T @ (prob.w * p * ad ** (p - 1) * np.sign(d))
        if np.max(np.abs(grad)) / scale <= tol:
            break
        span = max(1e-300, float(np.max(ad)))
        if p < 2:
            h = prob.w * p * (p - 1) * np.maximum(ad, 1e-9 * span) ** (p - 2)
        else:
            h = prob.w * p * (p - 1) * ad ** (p - 2) + 1e-12 * prob.w * span ** (p - 2)
        H = prob.A.T @ (h[:, None] * prob.A)
        H[np.diag_indices_from(H)] += 1e-14 * (np.trace(H) / len(H) + 1e-300)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = -grad / scale
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad / scale, -float(grad @ grad) / scale
        t = 1.0
        gnorm = float(np.max(np.abs(grad)))
        while True:
            x_new = x + t * step
            f_new = _energy(prob, x_new, p)
            if f_new <= f + 1e-4 * t * slope or t < 1e-20:
                break
            # below energy resolution: accept on gradient decrease instead
            if abs(f_new - f) <= 1e-14 * abs(f) and float(np.max(np.abs(_gradient(prob, x_new, p)))) < gnorm:
                f_new = min(f_new, f)
                break
            t *= 0.5
        if f_new > f:
            break
        if f_new == f and t < 1e-20:
            break
        x, f = x_new, f_new
    return x, it


def _contract(prob: _Problem, x: np.ndarray, pinned_vals: np.ndarray, thr: float):
    """Merge free variables joined by near-zero increments; pin variables that sit
    on a pinned neighbour's value. Returns (reduced problem, expansion, fixed)."""
    nf = len(x)
    parent = list(range(nf))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    fixed = np.full(nf, np.nan)
    d = prob.A @ x + prob.b
    for k in np.flatnonzero(np.abs(d) <= thr):
        cols = np.flatnonzero(prob.A[k])
        if len(cols) == 2:
            a, c = find(cols[0]), find(cols[1])
            if a != c:
                parent[a] = c
        elif len(cols) == 1:
            j = cols[0]
            # pinned neighbour value: b = -A[k, j] * u_pinned
            fixed[j] = -prob.b[k] / prob.A[k, j] if prob.A[k, j] != 0 else np.nan
    roots = np.array([find(i) for i in range(nf)])
    root_fixed: dict[int, float] = {}
    for i in range(nf):
        if not np.isnan(fixed[i]):
            root_fixed.setdefault(roots[i], fixed[i])
    groups = sorted(set(roots.tolist()) - set(root_fixed))
    col = {r: c for c, r in enumerate(groups)}
    C = np.zeros((nf, len(groups)))
    const = np.zeros(nf)
    for i in range(nf):
        r = roots[i]
        if r in root_fixed:
            const[i] = root_fixed[r]
        else:
            C[i, col[r]] = 1.0
    A2 = prob.A @ C
    b2 = prob.b + prob.A @ const
    keep = np.any(A2 != 0, axis=1)
    red = _Problem(prob.free, A2[keep], b2[keep], prob.w[keep])
    return red, C, const


def _max_flow_cut(n: int, arcs: list[tuple[int, int, float]], s: int, t: int):
    """Edmonds-Karp on an undirected capacitated graph. Returns (flow, source side)."""
    cap: list[dict[int, float]] = [dict() for _ in range(n)]
    for a, b, c in arcs:
        cap[a][b] = cap[a].get(b, 0.0) + c
        cap[b][a] = cap[b].get(a, 0.0) + c
    eps = 1e-13 * max((c for _, _, c in arcs), default=1.0)
    flow = 0.0
    while True:
        prev = [-1] * n
        prev[s] = s
        dq = deque([s])
        while dq and prev[t] < 0:
            a = dq.popleft()
            for b, c in cap[a].items():
                if c > eps and prev[b] < 0:
                    prev[b] = a
                    dq.append(b)
        if prev[t] < 0:
            break
        bott = np.inf
        b = t
        while b != s:
            a = prev[b]
            bott = min(bott, cap[a][b])
            b = a
        b = t
        while b != s:
            a = prev[b]
            cap[a][b] -= bott
            cap[b][a] = cap[b].get(a, 0.0) + bott
            b = a
        flow += bott
    side = np.array([pv >= 0 for pv in prev])
    return flow, side


def solve(space, pinned: np.ndarray, values: np.ndarray, edge_mask: np.ndarray, p: float,
          *, tol: float = TOL, max_iter: int = MAX_ITER) -> Solution:
    """Minimize sum over counted edges of mass * (|u(x)-u(y)| / length)^p.

    ``pinned`` is a vertex mask, ``values`` the pinned values (read on the
    mask only, each in [0, 1]), ``edge_mask`` selects the counted edges.
    Free vertices that no counted path links to a pinned vertex are set to 0.
    """
    n = space.n
    e = space.edges[edge_mask]
    w = space.mass[edge_mask] / space.length[edge_mask] ** p
    u = np.where(pinned, values, 0.0).astype(float)

    # free vertices reachable from pinned ones through counted edges
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for a, b in e:
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen = pinned.copy()
    dq = deque(np.flatnonzero(pinned).tolist())
    while dq:
        a = dq.popleft()
        for b in nbrs[a]:
            if not seen[b]:
                seen[b] = True
                dq.append(b)
    # a free component bordered by a single pinned value is constant at that value
    comp = -np.ones(n, dtype=int)
    pinned = pinned.copy()
    for s in np.flatnonzero(seen & ~pinned):
        if comp[s] >= 0:
            continue
        comp[s] = s
        members, border, stack = [s], set(), [s]
        while stack:
            a = stack.pop()
            for b in nbrs[a]:
                if pinned[b]:
                    border.add(float(u[b]))
                elif comp[b] < 0:
                    comp[b] = s
                    members.append(b)
                    stack.append(b)
        if len(border) == 1:
            u[members] = border.pop()
            pinned[members] = True
    free = np.flatnonzero(seen & ~pinned)
    col = -np.ones(n, dtype=int)
    col[free] = np.arange(len(free))

    A = np.zeros((len(e), len(free)))
    bvec = np.zeros(len(e))
    for k, (a, b) in enumerate(e):
        if col[a] >= 0:
            A[k, col[a]] += 1.0
        else:
            bvec[k] += u[a]
        if col[b] >= 0:
            A[k, col[b]] -= 1.0
        else:
            bvec[k] -= u[b]
    prob = _Problem(free, A, bvec, w)

    def finish(x, iterations, lower, converged=True):
        uu = u.copy()
        uu[free] = np.clip(x, 0.0, 1.0)
        xx = uu[free]
        # same reduction as fields.energy so ratios built on it compare exactly
        value = energy(space, uu, p, None if edge_mask.all() else edge_mask)
        res = _residual(prob, xx, p) if p > 1 else 0.0
        if lower is None:
            g = _gradient(prob, xx, p) if xx.size else np.zeros(0)
            lower = value + float(np.sum(np.minimum(g * (0.0 - xx), g * (1.0 - xx))))
        lower = min(max(lower, 0.0), value)
        return Solution(uu, value, iterations, res, lower, converged and res <= tol)

    if p == 1:
        if len(free) == 0:
            return finish(np.zeros(0), 0, None)
        # node ids: free vertices 0..nf-1, source nf, sink nf+1
        nf = len(free)
        S, T = nf, nf + 1
        arcs = []
        fixed = 0.0
        for (a, b), wk in zip(e, w):
            na = col[a] if col[a] >= 0 else (S if u[a] >= 0.5 else T)
            nb = col[b] if col[b] >= 0 else (S if u[b] >= 0.5 else T)
            if na == nb:
                continue
            if na >= nf and nb >= nf:
                fixed += wk
                continue
            arcs.append((na, nb, float(wk)))
        flow, side = _max_flow_cut(nf + 2, arcs, S, T)
        x = side[:nf].astype(float)
        return finish(x, 1, flow + fixed)

    x = _laplace(prob, w) if len(free) else np.zeros(0)
    if p == 2 or len(free) == 0:
        return finish(x, 1, None)

    x, it = _newton(prob, x, p, tol, min(max_iter, NEWTON_ROUND))
    best_res = _residual(prob, x, p)
    rounds = 0
    while best_res > tol and it < max_iter and rounds < MAX_ROUNDS:
        rounds += 1
        span = max(1e-300, float(np.max(np.abs(A @ x + bvec), initial=0.0)))
        f0 = _energy(prob, x, p)
        cand = None
        for thr in CONTRACT_THRESHOLDS:
            red, C, const = _contract(prob, x, values, thr * span)
            y0 = np.linalg.lstsq(C, x - const, rcond=None)[0] if C.shape[1] else np.zeros(0)
            y, it2 = _newton(red, y0, p, tol, NEWTON_ROUND) if C.shape[1] else (y0, 0)
            it += it2
            x2 = C @ y + const
            r2 = _residual(prob, x2, p)
            if r2 < best_res and _energy(prob, x2, p) <= f0 * (1 + 1e-12) + 1e-300:
                cand, best_res = x2, r2
                if r2 <= tol:
                    break
        if cand is None:
            # no contraction helped: plain Newton continues on the full problem
            x, it2 = _newton(prob, x, p, tol, NEWTON_ROUND)
            it += it2
            r = _residual(prob, x, p)
            if r >= best_res:
                break
            best_res = r
        else:
            x = cand
    return finish(x, it, None)
