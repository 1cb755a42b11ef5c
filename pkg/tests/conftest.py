import numpy as np
import pytest

from soldecomp.decomposition import Decomposition

# criterion number -> (description, outcome, detail)
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "acceptance: acceptance-level test on the full-size model problem")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, text = marker.args
    detail = getattr(item, "criterion_detail", "")
    _CRITERIA[number] = [text, "PASS" if report.passed else "FAIL", detail]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        text, status, detail = _CRITERIA[number]
        line = f"criterion {number}: {status}  {text}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a measured-value summary to the criterion line of the running test."""

    def record(text: str):
        request.node.criterion_detail = text
        print(text)

    return record


def dense_restriction(d: Decomposition) -> np.ndarray:
    """Dense ``R`` with ``R[offset_alpha + k, node] = m(node)^(-1/2)``, built straight from the node sets."""
    R = np.zeros((d.total_size, d.grid.size))
    row = 0
    for nodes in d.subdomain_nodes:
        for node in nodes:
            R[row, node] = 1.0 / np.sqrt(d.multiplicity[node])
            row += 1
    return R


def dense_block_parts(d: Decomposition, A: np.ndarray):
    """Return ``(full, diag, lower, upper)`` of the block operator from dense algebra."""
    R = dense_restriction(d)
    full = R @ A @ R.T
    diag = np.zeros_like(full)
    lower = np.zeros_like(full)
    off = d.offsets
    for a in range(d.p):
        sa = slice(off[a], off[a + 1])
        diag[sa, sa] = full[sa, sa]
        lower[sa, sa] = 0.5 * full[sa, sa]
        for b in range(a):
            sb = slice(off[b], off[b + 1])
            lower[sa, sb] = full[sa, sb]
    upper = full - lower
    return full, diag, lower, upper


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
