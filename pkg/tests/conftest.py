import numpy as np
import pytest
from scipy import sparse

from taylorfw import FeasibleSet, Problem, synth_problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logistic_small():
    return synth_problem(64, 8, "logistic", seed=3)


@pytest.fixture(scope="session")
def quadratic_small():
    return synth_problem(64, 8, "quadratic", seed=3)


@pytest.fixture(scope="session")
def sigmoid_small():
    return synth_problem(32, 4, "sigmoid-sq", seed=3)


@pytest.fixture
def one_dim_quadratic():
    """F(x) = 0.5 (x - 2)^2 over [-1, 1]."""
    return Problem(sparse.csc_matrix([[1.0]]), [2.0], "quadratic"), FeasibleSet("l1", 1.0)


def brute_taylor_gradient(problem, theta, x):
    """Direct per-observation sum of the second-order Taylor gradient models."""
    from taylorfw import losses

    W = problem.W.toarray()
    g = np.zeros(problem.p)
    for i in range(problem.n):
        w = W[:, i]
        d1 = losses.loss_d1(problem.family, problem.y[i], theta[i])
        d2 = losses.loss_d2(problem.family, problem.y[i], theta[i])
        g += d1 * w + d2 * w * (w @ x - theta[i])
    return g / problem.n


def random_feasible(fset, p, rng):
    """A random point of the set as a random convex combination of vertices."""
    V = fset.vertices(p)
    c = rng.dirichlet(np.ones(V.shape[0]))
    return c @ V


# acceptance reporting ---------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Record a one-line measurement summary for the running criterion."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else None

    def note(text):
        if number is not None:
            _CRITERIA.setdefault(number, {})["detail"] = text
        print(text)

    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number = next((m.args[0] for m in getattr(report, "_criterion_marks", [])), None)
    if number is None:
        return
    entry = _CRITERIA.setdefault(number, {})
    entry["ok"] = report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report._criterion_marks = list(item.iter_markers("criterion"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry.get("ok") else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {entry.get('detail', '')}")
