import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capmetric import verify as V
from capmetric.errors import ParameterError, ValidationError
from capmetric.space import Domain, grid_graph, path_graph

from conftest import domains


def test_link_semantics():
    assert V.InequalityLink("a", 1, 1, "").slack == 0
    assert V.InequalityLink("a", 1, 2, "").slack == 1
    assert V.InequalityLink("a", 1 + 1e-12, 1, "").passes()
    assert not V.InequalityLink("a", 1 + 1e-12, 1, "", exact=True).passes()
    assert not V.InequalityLink("a", 1.1, 1, "").passes()
    assert not V.InequalityLink("a", math.nan, 1, "").passes()
    assert V.InequalityLink("a", math.inf, math.inf, "").passes()
    assert not V.InequalityLink("a", math.inf, 1, "").passes()
    assert V.InequalityLink("a", 0, math.inf, "").passes()
    # normalization by max(1, |rhs|)
    assert V.InequalityLink("a", 1e6 + 1e-4, 1e6, "").passes()
    assert not V.InequalityLink("a", 1e6 + 1e-2, 1e6, "").passes()


def test_vacuous_products():
    assert V._mul(math.inf, 0.0) == math.inf
    assert V._mul(2.0, 3.0) == 6.0


def test_report_shape(path5_dom):
    rep = V.check_qpey(path5_dom, 1, 2, samples=2)
    d = rep.to_dict()
    assert set(d) == {"theorem", "instance_digest", "params", "links", "notes", "verdict", "runtime_s", "rng_seed"}
    assert set(d["links"][0]) == {"name", "lhs", "rhs", "slack", "anchor", "exact", "pass"}
    assert d["runtime_s"] is None
    assert V.check_qpey(path5_dom, 1, 2, samples=2, timing=True).runtime >= 0
    assert rep.verdict == "pass" and rep.passed


def test_verdict_follows_links(path5_dom):
    rep = V.check_qpey(path5_dom, 1, 2, samples=2)
    rep.add("broken", 2.0, 1.0, "injected")
    assert rep.verdict == "fail"
    assert [l.name for l in rep.failures()] == ["broken"]


def test_sample_fields(path5_dom):
    fs = V.sample_fields(path5_dom, 2, n_random=5, rng_seed=3)
    names = [n for n, _ in fs]
    assert sum(n.startswith("indicator") for n in names) == 7
    assert sum(n.startswith("extremal") for n in names) == 7
    assert sum(n.startswith("random") for n in names) == 5
    for _, u in fs:
        assert not u[~path5_dom.omega].any()
    again = V.sample_fields(path5_dom, 2, n_random=5, rng_seed=3)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(fs, again))


def test_qpey_examples(path5_dom):
    rep = V.check_qpey(path5_dom, 2, 2, samples=8)
    assert rep.passed
    for l in rep.links:
        assert abs(l.slack) <= 1e-12 * max(1, l.rhs)
    rep = V.check_qpey(path5_dom, 1, 3, samples=8)
    for l in rep.links:
        if l.name.startswith("indicator"):
            assert abs(l.slack) <= 1e-12
    with pytest.raises(ParameterError):
        V.check_qpey(path5_dom, 3, 2)


def test_capaint_examples(path3, path5_dom):
    rep = V.check_capaint(Domain.of(path3, ["v1"]), 1, samples=0)
    link = rep.link("indicator{v1}:level-integral<=2^(2p-1)*energy")
    assert (link.lhs, link.rhs) == (pytest.approx(2), pytest.approx(4))
    assert rep.passed
    rep = V.check_capaint(path5_dom, 2, samples=4)
    link = rep.link("extremal{v2}:level-integral<=2^(2p-1)*energy")
    # levels 0.5 and 1: int_0^.5 t cap(Omega) + int_.5^1 t cap({v2}) = 2/8 + 3/8
    assert link.lhs == pytest.approx(0.625, abs=1e-12)
    assert link.rhs == pytest.approx(8.0, abs=1e-12)
    assert rep.passed


def test_conint_examples(path5):
    dom = Domain.of(path5)
    G = ["v1", "v2", "v3"]
    rep = V.check_conint(dom, 2, G, samples=4)
    assert rep.passed
    link = rep.link("extremal{v2}:level-integral<=2^(2p-1)*energy")
    assert link.lhs == pytest.approx(0.625, abs=1e-12)
    full = V.check_conint(dom, 2, list(path5.vertices), samples=4)
    assert full.passed
    assert all(l.lhs == 0 for l in full.links if l.name.endswith("level-integral<=2^(2p-1)*energy"))
    assert V.check_conint(dom, 2, [], samples=2).passed


def test_sobolev_pq_path3(path3):
    rep = V.check_sobolev_pq(Domain.of(path3, ["v1"]), 2, 2, samples=4)
    assert rep.passed
    assert rep.params["gamma"] == pytest.approx(0.5)
    assert rep.params["c_S_lower"] == pytest.approx(2 ** -0.5, abs=1e-12)
    assert rep.link("sandwich:gamma<=c_S_lower^p").slack == pytest.approx(0, abs=1e-15)
    assert rep.link("subset{v1}:seeded-sobolev").slack == pytest.approx(0, abs=1e-15)


def test_sobolev_pq_path5(path5_dom):
    rep = V.check_sobolev_pq(path5_dom, 2, 2, samples=8)
    assert rep.passed
    assert rep.params["gamma"] == pytest.approx(1.5)
    s = rep.link("sandwich:c_S_lower^p<=gamma*p*2^(2p-1)")
    assert s.rhs == pytest.approx(24)
    assert 1.5 <= s.lhs <= 24


def test_zero_nu_passes():
    dom = Domain.of(path_graph(5, nu=[1, 0, 0, 0, 1]), ["v1", "v2", "v3"])
    rep = V.check_sobolev_pq(dom, 2, 2, samples=4)
    assert rep.passed
    assert all(l.lhs == 0 for l in rep.links if l.name.endswith("norm^p<=gamma*p*2^(2p-1)*energy"))
    assert V.check_integral_criterion(dom, 2, 1).passed


def test_ball_examples(path3_far):
    rep = V.check_ball_criterion(path3_far, 1, samples=4)
    assert rep.passed
    link = rep.link("K{v1}:nu(K)^(1/q)<=gamma_ball*c_D*content")
    assert (link.lhs, link.rhs) == (pytest.approx(1), pytest.approx(1.5))
    assert rep.params["c_D"] == 3
    z = V.check_ball_criterion(path_graph(3, nu=[0, 0, 0], boundary=["v0", "v2"]), 1, samples=2)
    assert z.passed


def test_ball_needs_boundary(path3):
    with pytest.raises(ValidationError):
        V.check_ball_criterion(path3, 1)


def test_qp_path5(path5_dom):
    rep = V.check_qp(path5_dom, 2, 1, samples=8)
    assert rep.passed, rep.failures()
    name = "chain{v2}<{v1,v2,v3}"
    assert rep.link(f"{name}:step-sum=energy-sum").lhs == pytest.approx(1 + 1.5 ** 1 * 3)
    assert rep.params["gamma_chain"] == pytest.approx(47 / 6)
    with pytest.raises(ParameterError):
        V.check_qp(path5_dom, 2, 2)


def test_integral_path5(path5_dom):
    rep = V.check_integral_criterion(path5_dom, 2, 1, samples=8)
    assert rep.passed, rep.failures()
    assert rep.params["c_I"] == pytest.approx(2.75, abs=1e-12)
    assert rep.link("sup:fq-sum=gp-sum").slack == pytest.approx(0, abs=1e-12)


def test_median_examples():
    assert V.median_level(np.array([1, 2, 3, 4.0]), np.full(4, 0.25)) == 2
    assert V.median_level(np.array([5.0, 5.0]), np.ones(2)) == 5
    assert V.median_level(np.array([3.0, 1.0, 2.0]), np.ones(3)) == 2


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=9), st.integers(0, 2 ** 32 - 1))
def test_median_definition(vals, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.1, 2, len(v))
    a = V.median_level(v, w)
    half = w.sum() / 2
    assert w[v >= a].sum() >= half and w[v > a].sum() <= half
    for b in np.unique(v):
        if b < a:
            assert not (w[v >= b].sum() >= half and w[v > b].sum() <= half)


def test_conductivity_examples(path5):
    dom = Domain.of(path5, ["v1", "v2", "v3"])
    rep = V.check_conductivity(dom, 2, 2, samples=8)
    assert rep.passed, rep.failures()
    const = V.check_conductivity(dom, 1, 2, samples=0)
    assert const.passed
    with pytest.raises(ValidationError):
        V.check_conductivity(Domain.of(path_graph(5, nu=[1, 0, 0, 0, 1]), ["v1", "v2", "v3"]), 2, 2)


def test_conductivity_constant_field_splits_to_zero(path5):
    dom = Domain.of(path5, ["v1", "v2", "v3"])
    rep = V.check_conductivity(dom, 2, 2, samples=0)
    link = rep.link("indicator{v1,v2,v3}:upper:norm^p<=level-integral")
    assert link.lhs == 0 and link.rhs == 0


def test_conductor_filter():
    # nu concentrated on v2: only sets with nu(G) <= nu(Omega)/2 qualify as conductors
    sp = path_graph(5, nu=[0, 1, 5, 1, 0])
    rep = V.check_conductivity(Domain.of(sp, ["v1", "v2", "v3"]), 2, 2, samples=0)
    names = {l.name.split(":")[0] for l in rep.links if l.name.startswith("conductor")}
    assert all("v2" not in n.split("/")[1] for n in names)


def test_hardy_path5(path5_dom):
    rep = V.check_hardy(path5_dom, 2, samples=4)
    assert rep.theorem == "hardy"
    assert rep.passed
    assert rep.params["gamma"] == pytest.approx(1.125)


def test_determinism(path5_dom):
    for th, fn in [("sobolev-pq", lambda: V.check_sobolev_pq(path5_dom, 2, 3, samples=8, rng_seed=7)),
                   ("qp", lambda: V.check_qp(path5_dom, 2, 1, samples=8, rng_seed=7)),
                   ("conductivity", lambda: V.check_conductivity(path5_dom, 2, 2, samples=8, rng_seed=7))]:
        a = json.dumps(fn().to_dict(), sort_keys=True)
        b = json.dumps(fn().to_dict(), sort_keys=True)
        assert a == b, th


def test_failure_injection(path5_dom):
    base, bumped, factor = V.inject_failure(path5_dom, 2, 2)
    assert base.passed
    assert not bumped.passed
    assert factor > 1
    assert any(l.name.endswith(":isocapacitary") for l in bumped.failures())


def test_injection_below_slack_keeps_passing(path5_dom):
    # a perturbation of a vertex outside the witness leaves the frozen constants valid
    base, bumped, _ = V.inject_failure(path5_dom, 2, 2, factor=1.0)
    assert base.passed and bumped.passed


# properties ----------------------------------------------------------------------------------


def _all_checks(dom, p, q, seed):
    sp = dom.space
    reps = [V.check_qpey(dom, p, max(p, q), samples=4, rng_seed=seed),
            V.check_capaint(dom, p, samples=4, rng_seed=seed)]
    if p <= q:
        reps.append(V.check_sobolev_pq(dom, p, q, samples=4, rng_seed=seed, restarts=1))
        if sp.nu[dom.omega].sum() > 0:
            reps.append(V.check_conductivity(dom, p, q, samples=4, rng_seed=seed, restarts=1))
    else:
        reps.append(V.check_qp(dom, p, q, samples=4, rng_seed=seed, restarts=1, max_chain_length=2))
        reps.append(V.check_integral_criterion(dom, p, q, samples=4, rng_seed=seed, restarts=1))
    return reps


@settings(max_examples=12)
@given(domains(max_n=5), st.sampled_from([(1, 1), (2, 2), (1.5, 3), (2, 1), (3, 1.5)]), st.integers(0, 99))
def test_checkers_pass_and_exact_links_hold(dom, pq, seed):
    p, q = pq
    for rep in _all_checks(dom, p, q, seed):
        assert rep.passed, (rep.theorem, [(l.name, l.lhs, l.rhs) for l in rep.failures()])
        for l in rep.links:
            if l.exact:
                assert l.slack >= 0, (rep.theorem, l)


@settings(max_examples=12)
@given(domains(max_n=5), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.integers(0, 99))
def test_level_chain_composes(dom, p, seed):
    rep = V.check_capaint(dom, p, samples=4, rng_seed=seed)
    tags = {l.name.rsplit(":", 1)[0] for l in rep.links}
    for tag in tags:
        a = rep.link(f"{tag}:level-integral<=2^(p-1)*dyadic-capacity")
        b = rep.link(f"{tag}:dyadic-capacity<=dyadic-truncations")
        c = rep.link(f"{tag}:dyadic-truncations<=2^p*energy")
        end = rep.link(f"{tag}:level-integral<=2^(2p-1)*energy")
        assert a.lhs == end.lhs
        assert a.rhs == pytest.approx(2 ** (p - 1) * b.lhs, rel=1e-12)
        assert 2 ** (p - 1) * c.rhs == pytest.approx(end.rhs, rel=1e-12)
        if a.passes() and b.passes() and c.passes():
            assert end.lhs <= 2 ** (p - 1) * c.rhs * (1 + 1e-9) + 1e-12


@settings(max_examples=12)
@given(domains(max_n=5), st.sampled_from([(1, 1), (2, 2), (1.5, 2), (2, 3)]), st.integers(0, 99))
def test_sobolev_chain_composes(dom, pq, seed):
    p, q = pq
    rep = V.check_sobolev_pq(dom, p, q, samples=4, rng_seed=seed, restarts=1)
    gamma = rep.params["gamma"]
    for l in rep.links:
        if not l.name.endswith(":norm^p<=gamma*p*2^(2p-1)*energy"):
            continue
        tag = l.name.rsplit(":", 1)[0]
        a = rep.link(f"{tag}:norm^p<=level-integral")
        b = rep.link(f"{tag}:level-integral<=gamma*p*capacity-integral")
        c = rep.link(f"{tag}:capacity-integral<=2^(2p-1)*energy")
        assert a.lhs == l.lhs and a.rhs == b.lhs
        composed = gamma * p * c.rhs
        assert l.lhs <= composed * (1 + 2e-9) + 1e-12
        assert composed == pytest.approx(l.rhs, rel=1e-12, abs=1e-300)


@settings(max_examples=8)
@given(domains(min_n=3, max_n=5), st.sampled_from([(1, 1), (2, 2), (1.5, 2)]))
def test_failure_injection_flips(dom, pq):
    p, q = pq
    from capmetric.constants import gamma_subset
    g = gamma_subset(dom, p, q)
    if not g.witness or not g.value > 0 or math.isinf(g.value):
        return
    base, bumped, _ = V.inject_failure(dom, p, q, samples=2, restarts=1)
    assert base.passed and not bumped.passed


def test_ball_on_grid():
    rep = V.check_ball_criterion(grid_graph(4, 4), 1, samples=4)
    assert rep.passed, rep.failures()
