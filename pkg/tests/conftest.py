import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from capmetric.space import DiscreteMMSpace, Domain, path_graph  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = os.path.join(os.path.dirname(__file__), "data")

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, text): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        status = "PASS" if rep.passed else "FAIL"
        prev = _ACCEPTANCE.get(n)
        if prev is None or prev[0] == "PASS":
            _ACCEPTANCE[n] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}")


@pytest.fixture
def path3():
    return path_graph(3)


@pytest.fixture
def path5():
    return path_graph(5)


@pytest.fixture
def path5_dom(path5):
    return Domain.of(path5, ["v1", "v2", "v3"])


@pytest.fixture
def path3_far():
    return path_graph(3, boundary=["v0", "v2"])


@pytest.fixture
def path5_far():
    return path_graph(5, boundary=["v0", "v4"])


def random_space(rng: np.random.Generator, n: int, *, boundary: int = 0, unit: bool = False,
                 extra_edges: int | None = None) -> DiscreteMMSpace:
    """Connected random graph: a random spanning tree plus a few chords."""
    names = [f"x{i}" for i in range(n)]
    edges = {tuple(sorted((i, int(rng.integers(0, i))))) for i in range(1, n)}
    k = int(rng.integers(0, n)) if extra_edges is None else extra_edges
    for _ in range(k):
        a, b = sorted(rng.choice(n, 2, replace=False)) if n > 1 else (0, 0)
        if a != b:
            edges.add((int(a), int(b)))
    edges = sorted(edges)
    e = [(names[a], names[b]) for a, b in edges]
    if unit:
        return DiscreteMMSpace.build(names, e, boundary=names[:boundary])
    m = len(e)
    return DiscreteMMSpace.build(names, e, mu=rng.uniform(0.3, 3, n), nu=rng.uniform(0, 2, n) * (rng.random(n) < 0.9),
                                 length=rng.uniform(0.4, 2.5, m), mass=rng.uniform(0.3, 3, m),
                                 boundary=names[:boundary])


@st.composite
def spaces(draw, min_n=2, max_n=6, boundary=0):
    """Hypothesis strategy for small connected spaces with random data."""
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_space(np.random.default_rng(seed), n, boundary=min(boundary, n - 1))


@st.composite
def domains(draw, min_n=2, max_n=6):
    """A space with a nonempty proper Omega."""
    sp = draw(spaces(min_n=max(2, min_n), max_n=max_n))
    bits = draw(st.integers(1, 2 ** sp.n - 2))
    mask = np.array([(bits >> i) & 1 == 1 for i in range(sp.n)])
    return Domain(sp, mask)
