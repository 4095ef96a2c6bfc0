"""Acceptance suite: one test per numbered criterion, reported as PASS/FAIL lines at the end of the run."""

import io
import itertools
import math
import os
import subprocess
import sys
import time

import networkx as nx
import numpy as np
import pytest

from capmetric import cli, fields
from capmetric import constants as C
from capmetric import verify as V
from capmetric.capacity import cap_masks, capacity_profile, con_masks, hausdorff_content, subset_table
from capmetric.space import DiscreteMMSpace, Domain, doubling_estimate, grid_graph, path_graph

from conftest import DATA, random_space
from oracles import generic_capacity, min_cut, random_sp, space_weights

SUITE_START = time.perf_counter()
PS = (1.0, 1.5, 2.0, 3.0)


def say(n, ok, detail):
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


def rel_slack(lhs, rhs):
    """(rhs - lhs) normalized by max(1, |rhs|), the scale-free comparison used by the checkers."""
    if lhs == rhs:
        return 0.0
    return (rhs - lhs) / max(1.0, abs(rhs))


def atlas(lo, hi):
    return [g for g in nx.graph_atlas_g() if lo <= g.number_of_nodes() <= hi and nx.is_connected(g)]


def atlas_space(g, rng=None):
    n = g.number_of_nodes()
    names = [f"v{i}" for i in range(n)]
    edges = [(names[a], names[b]) for a, b in g.edges]
    if rng is None:
        return DiscreteMMSpace.build(names, edges)
    m = len(edges)
    return DiscreteMMSpace.build(names, edges, mu=rng.uniform(0.3, 3, n), nu=rng.uniform(0, 2, n),
                                 length=rng.uniform(0.3, 3, m), mass=rng.uniform(0.3, 3, m))


def nonempty_subsets(idx):
    for k in range(1, len(idx) + 1):
        for c in itertools.combinations(idx, k):
            yield c


def as_mask(n, members):
    m = np.zeros(n, dtype=bool)
    m[list(members)] = True
    return m


# 1 --------------------------------------------------------------------------------------------


def sp_space(net):
    """Each network edge becomes a two-edge path so parallel edges stay simple; conductance m / l^2 is kept."""
    n = net.n
    names = [f"s{i}" for i in range(n)] + [f"m{k}" for k in range(len(net.edges))]
    edges, length, mass = [], [], []
    rng = np.random.default_rng(len(net.edges))
    for k, (a, b, c) in enumerate(net.edges):
        # halves of conductance 2c each in series give c; vary the length, keep m / l^2 fixed
        for x, y in ((f"s{a}", f"m{k}"), (f"m{k}", f"s{b}")):
            ell = float(rng.uniform(0.5, 2.0))
            edges.append((x, y))
            length.append(ell)
            mass.append(2 * c * ell ** 2)
    return DiscreteMMSpace.build(names, edges, length=length, mass=mass)


@pytest.mark.acceptance(1, "p=2 capacity equals series/parallel effective conductance")
def test_criterion_1_series_parallel():
    rng = np.random.default_rng(1)
    nets = [random_sp(rng, 1 + i % 9) for i in range(25)]
    spaces = [sp_space(net) for net in nets]
    worst = 0.0
    t0 = time.perf_counter()
    for net, sp in zip(nets, spaces):
        om = np.ones(sp.n, dtype=bool)
        om[1] = False  # sink
        E = as_mask(sp.n, [0])  # source
        got = cap_masks(sp, E, om, 2.0).value
        worst = max(worst, abs(got - net.conductance) / net.conductance)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 1.0
    say(1, ok, f"25 fixtures, worst rel err {worst:.2e}, {elapsed:.3f} s")
    assert worst <= 1e-8
    assert elapsed < 1.0


# 2 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(2, "p=1 capacity equals exhaustive min-cut")
def test_criterion_2_min_cut():
    count, worst = 0, 0.0
    for g in atlas(2, 6):
        sp = atlas_space(g)
        n = sp.n
        W = space_weights(sp, 1.0)
        for oc in nonempty_subsets(range(n)):
            om = as_mask(n, oc)
            for k in range(len(oc) + 1):
                for ec in itertools.combinations(oc, k):
                    got = cap_masks(sp, as_mask(n, ec), om, 1.0).value
                    ref = min_cut(n, W, set(ec), set(oc))
                    worst = max(worst, abs(got - ref) / max(1.0, ref))
                    count += 1
    rng = np.random.default_rng(2)
    graphs = atlas(2, 6)
    for _ in range(100):
        g = graphs[int(rng.integers(len(graphs)))]
        sp = atlas_space(g, rng)
        n = sp.n
        oc = [i for i in range(n) if rng.random() < 0.7] or [0]
        ec = [i for i in oc if rng.random() < 0.4]
        got = cap_masks(sp, as_mask(n, ec), as_mask(n, oc), 1.0).value
        ref = min_cut(n, space_weights(sp, 1.0), set(ec), set(oc))
        worst = max(worst, abs(got - ref) / max(1.0, ref))
        count += 1
    say(2, worst <= 1e-8, f"{count} instances, worst rel err {worst:.2e}")
    assert worst <= 1e-8


# 3 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(3, "Cavalieri identity and the level-set norm inequality")
def test_criterion_3_cavalieri_qpey():
    rng = np.random.default_rng(3)
    cav_worst, qpey_worst, eq_worst = 0.0, math.inf, 0.0
    for i in range(500):
        sp = random_space(rng, int(rng.integers(1, 9)))
        dom = Domain(sp, np.ones(sp.n, dtype=bool))
        if i % 5 == 0:
            u = float(rng.uniform(0.1, 8)) * (rng.random(sp.n) < 0.5)
            indicator = True
        else:
            u = rng.standard_normal(sp.n) * np.exp2(rng.uniform(-3, 3, sp.n))
            u[rng.random(sp.n) < 0.2] = 0.0
            indicator = False
        for p in PS:
            for measure in ("mu", "nu"):
                m = getattr(sp, measure)
                direct = float(np.sum(m * np.abs(u) ** p))
                got = fields.cavalieri(dom, u, p, measure)
                if direct > 0:
                    cav_worst = max(cav_worst, abs(got - direct) / direct)
                else:
                    cav_worst = max(cav_worst, abs(got))
            for q in PS:
                if q < p:
                    continue
                lhs = fields.lq_norm(dom, u, q)
                rhs = fields.qpey_rhs(dom, u, p, q)
                s = rel_slack(lhs, rhs)
                qpey_worst = min(qpey_worst, s)
                if p == q or indicator:
                    eq_worst = max(eq_worst, abs(s))
    ok = cav_worst <= 1e-12 and qpey_worst >= -1e-12 and eq_worst <= 1e-12
    say(3, ok, f"500 fields; Cavalieri rel err {cav_worst:.1e}, min slack {qpey_worst:.1e}, "
               f"equality |slack| {eq_worst:.1e}")
    assert cav_worst <= 1e-12
    assert qpey_worst >= -1e-12
    assert eq_worst <= 1e-12


# 4 --------------------------------------------------------------------------------------------


def _n_random_for(dom, p, target=200):
    return max(0, target - len(V.sample_fields(dom, p, n_random=0)))


@pytest.mark.acceptance(4, "level integrals of capacity and conductivity against 2^(2p-1) energy")
def test_criterion_4_capaint_conint():
    rng = np.random.default_rng(4)
    worst, n_links, failed = math.inf, 0, []
    for i in range(20):
        n = int(rng.integers(3, 9))
        sp = random_space(rng, n)
        om = rng.random(n) < 0.75
        om[0], om[-1] = True, False
        dom = Domain(sp, om)
        G = om & (rng.random(n) < 0.7)
        G[0] = True
        for p in (1.0, 2.0, 3.0):
            rep_a = V.check_capaint(dom, p, samples=_n_random_for(dom, p), rng_seed=i)
            rep_b = V.check_conint(dom, p, G, samples=_n_random_for(Domain(sp, G), p), rng_seed=i)
            for rep in (rep_a, rep_b):
                finals = [l for l in rep.links if l.name.endswith("level-integral<=2^(2p-1)*energy")]
                assert len(finals) >= 200
                n_links += len(finals)
                worst = min(worst, min(rel_slack(l.lhs, l.rhs) for l in finals))
                if not rep.passed:
                    failed.append((i, p, rep.theorem, rep.failures()[:3]))
    ok = worst >= -1e-9 and not failed
    say(4, ok, f"{n_links} final links over 20 spaces, min slack {worst:.2e}")
    assert not failed, failed
    assert worst >= -1e-9


# 5 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(5, "isocapacitary sandwich for p <= q")
def test_criterion_5_sandwich():
    graphs = atlas(1, 5)
    assert len(graphs) == 31
    rng = np.random.default_rng(5)
    count, left_worst, right_worst, failed = 0, math.inf, math.inf, []
    for g in graphs:
        for w in range(50):
            sp = atlas_space(g, rng)
            n = sp.n
            if n > 1:
                k = int(rng.integers(1, n))
                dom = Domain(sp, as_mask(n, rng.choice(n, k, replace=False)))
            else:
                dom = Domain.of(sp)
            for p, q in ((1, 1), (2, 2), (2, 3), (1.5, 2)):
                rep = V.check_sobolev_pq(dom, p, q, samples=0, restarts=0, rng_seed=w)
                left = rep.link("sandwich:gamma<=c_S_lower^p")
                right = rep.link("sandwich:c_S_lower^p<=gamma*p*2^(2p-1)")
                left_worst = min(left_worst, left.slack)
                right_worst = min(right_worst, rel_slack(right.lhs, right.rhs))
                if not (left.lhs <= left.rhs and right.passes(1e-9)):
                    failed.append((g.name, w, p, q, left, right))
                count += 1
    est = C.sobolev_constant(Domain.of(path_graph(3), ["v1"]), 2, 2)
    g3 = C.gamma_subset(Domain.of(path_graph(3), ["v1"]), 2, 2).value
    path3_ok = abs(g3 - 0.5) <= 1e-10 and abs(est.lower - 2 ** -0.5) <= 1e-10
    ok = not failed and left_worst >= 0 and right_worst >= -1e-9 and path3_ok
    say(5, ok, f"{count} instances, left slack min {left_worst:.2e}, right slack min {right_worst:.2e}, "
               f"PATH3 gamma={g3!r} c_S_lower={est.lower!r}")
    assert not failed, failed[:3]
    assert left_worst >= 0
    assert right_worst >= -1e-9
    assert path3_ok


# 6 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(6, "q < p: chain and integral criteria; PATH5 profile and c_I")
def test_criterion_6_q_less_than_p():
    rng = np.random.default_rng(6)
    instances = []
    for g in atlas(2, 5):
        sp = atlas_space(g, rng)
        k = int(rng.integers(1, sp.n))
        instances.append(Domain(sp, as_mask(sp.n, rng.choice(sp.n, k, replace=False))))
    for _ in range(20):
        n = int(rng.integers(6, 8))
        sp = random_space(rng, n)
        instances.append(Domain(sp, as_mask(n, rng.choice(n, 5, replace=False))))
    failed, n_links = [], 0
    for i, dom in enumerate(instances):
        assert dom.size <= 5
        for p, q in ((2, 1), (3, 1.5), (3, 2), (1.5, 1)):
            for rep in (V.check_qp(dom, p, q, samples=16, rng_seed=i, max_chain_length=3),
                        V.check_integral_criterion(dom, p, q, samples=16, rng_seed=i)):
                n_links += len(rep.links)
                if not rep.passed:
                    failed.append((i, p, q, rep.theorem, [(l.name, l.lhs, l.rhs) for l in rep.failures()[:3]]))
    dom5 = Domain.of(path_graph(5), ["v1", "v2", "v3"])
    prof = capacity_profile(dom5, 2)
    c_i = C.integral_criterion(dom5, 2, 1).value
    lam_err = float(np.max(np.abs(prof.values - [1, 1.5, 2])))
    path5_ok = list(prof.breaks) == [1, 2, 3] and lam_err <= 1e-12 and abs(c_i - 2.75) <= 1e-12
    ok = not failed and path5_ok
    say(6, ok, f"{len(instances)} domains x 4 (p,q), {n_links} links, {len(failed)} failing reports; "
               f"PATH5 lambda err {lam_err:.1e}, c_I={c_i!r}")
    assert not failed, failed[:3]
    assert path5_ok


# 7 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(7, "ball criterion for p = 1 with measured c_D and content ratio")
def test_criterion_7_ball():
    rng = np.random.default_rng(7)
    instances = [(f"path{n}", path_graph(n, mu=rng.uniform(0.5, 2, n), boundary=["v0", f"v{n - 1}"]))
                 for n in (3, 4, 5, 6, 7)]
    instances += [(f"grid{r}x{c}", grid_graph(r, c)) for r, c in ((3, 3), (3, 4), (4, 4), (4, 5), (5, 5))]
    failed, n_links = [], 0
    for name, sp in instances:
        for q in (1.0, 2.0):
            rep = V.check_ball_criterion(sp, q, samples=16, rng_seed=7)
            n_links += len(rep.links)
            if not rep.passed:
                failed.append((name, q, [(l.name, l.lhs, l.rhs) for l in rep.failures()[:3]]))
    p3 = path_graph(3, boundary=["v0", "v2"])
    gb = C.gamma_ball(p3, 1).value
    cd = doubling_estimate(path_graph(3))
    h = hausdorff_content(path_graph(3), ["v1"])
    path3_ok = abs(gb - 0.5) <= 1e-12 and cd == 3 and abs(h - 1) <= 1e-12
    ok = not failed and path3_ok
    say(7, ok, f"10 instances x q in (1, 2), {n_links} links; PATH3 gamma_ball={gb!r} c_D={cd!r} H={h!r}")
    assert not failed, failed
    assert path3_ok


# 8 --------------------------------------------------------------------------------------------


@pytest.mark.acceptance(8, "conductor constants and the median-centred inequality")
def test_criterion_8_conductivity():
    rng = np.random.default_rng(8)
    failed, n_cond, worst = [], 0, 0.0
    for gi, g in enumerate(atlas(1, 5)):
        sp = atlas_space(g, rng)
        n = sp.n
        variants = [Domain.of(sp)]
        if n > 1:
            variants.append(Domain(sp, np.arange(n) != n - 1))
        for dom in variants:
            nu = sp.nu
            total = nu[dom.omega].sum()
            idx = dom.idx
            for p, q in ((1, 1), (2, 2), (1.5, 2)):
                # independent enumeration of the conductor constant
                best = 0.0
                inside = [(a, b, w) for a, b, w in space_weights(sp, 1.0) if dom.omega[a] and dom.omega[b]]
                for gc in nonempty_subsets(idx):
                    G = as_mask(n, gc)
                    if nu[G].sum() > total / 2:
                        continue
                    for fc in nonempty_subsets(gc):
                        F = as_mask(n, fc)
                        c = con_masks(sp, F, G, dom.omega, p).value
                        if p == 1:
                            ref = min_cut(n, inside, set(fc), set(gc))
                            worst = max(worst, abs(c - ref) / max(1.0, ref))
                        m = nu[F].sum()
                        if m > 0:
                            best = max(best, math.inf if c == 0 else m ** (p / q) / c)
                        n_cond += 1
                got = C.gamma_conductor(dom, p, q).value
                if not (got == best or abs(got - best) <= 1e-12 * best):
                    failed.append((gi, p, q, "gamma_con", got, best))
                rep = V.check_conductivity(dom, p, q, samples=8, rng_seed=gi, restarts=1)
                if not rep.passed:
                    failed.append((gi, p, q, [(l.name, l.lhs, l.rhs) for l in rep.failures()[:3]]))
    alpha = V.median_level(np.array([1, 2, 3, 4.0]), np.full(4, 0.25))
    ok = not failed and alpha == 2 and worst <= 1e-8
    say(8, ok, f"{n_cond} conductors, p=1 min-cut err {worst:.1e}, median alpha={alpha!r}")
    assert not failed, failed[:3]
    assert worst <= 1e-8
    assert alpha == 2


# 9 --------------------------------------------------------------------------------------------


VERIFY_RUNS = [
    ["qpey", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "1", "-q", "2"],
    ["capaint", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "2"],
    ["sobolev-pq", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "2", "-q", "2"],
    ["ball-p1", "--space", "grid5.mms", "-q", "1"],
    ["qp", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "2", "-q", "1"],
    ["integral", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "3", "-q", "2"],
    ["conductivity", "--space", "path5.mms", "-p", "2", "-q", "2"],
    ["conint", "--space", "path5.mms", "--outer", "v1,v2,v3", "-p", "2"],
    ["hardy", "--space", "path5.mms", "--omega", "v1,v2,v3", "-p", "2"],
]


def _cli(argv):
    argv = [os.path.join(DATA, a) if a.endswith(".mms") else a for a in argv]
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(cli.config_from_args(cli.build_parser().parse_args(argv)), out, err)
    return code, out.getvalue()


@pytest.mark.acceptance(9, "byte-identical verify reports and failure injection")
def test_criterion_9_determinism():
    mismatched = []
    for run in VERIFY_RUNS:
        argv = ["verify"] + run + ["--seed", "11", "--samples", "16", "--restarts", "2"]
        a, b = _cli(argv), _cli(argv)
        if a != b or a[0] != 0:
            mismatched.append(run[0])
    # a fresh interpreter must agree byte for byte as well
    argv = ["verify"] + VERIFY_RUNS[2] + ["--seed", "11", "--samples", "16", "--restarts", "2"]
    fresh = subprocess.run([sys.executable, "-m", "capmetric"] +
                           [os.path.join(DATA, a) if a.endswith(".mms") else a for a in argv],
                           capture_output=True, text=True)
    same_process = fresh.stdout == _cli(argv)[1]

    rng = np.random.default_rng(9)
    flips, tried = 0, 0
    doms = [Domain.of(path_graph(5), ["v1", "v2", "v3"]), Domain.of(path_graph(3), ["v1"])]
    while len(doms) < 12:
        n = int(rng.integers(3, 7))
        sp = random_space(rng, n)
        sp = sp.replace(nu=sp.nu + 0.1)
        doms.append(Domain(sp, np.arange(n) < n - 1))
    for dom in doms:
        for p, q in ((1, 1), (2, 2), (1.5, 2), (2, 3)):
            base, bumped, _ = V.inject_failure(dom, p, q, samples=4, restarts=1)
            tried += 1
            flips += base.passed and not bumped.passed
    ok = not mismatched and same_process and flips == tried
    say(9, ok, f"{len(VERIFY_RUNS)} theorem ids repeated, fresh-process match {same_process}, "
               f"injection flipped {flips}/{tried}")
    assert not mismatched, mismatched
    assert same_process
    assert flips == tried


# 10 -------------------------------------------------------------------------------------------


@pytest.mark.acceptance(10, "acceptance suite under 10 minutes")
def test_criterion_10_runtime():
    elapsed = time.perf_counter() - SUITE_START
    say(10, elapsed < 600, f"{elapsed:.1f} s")
    assert elapsed < 600
