import datetime
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from decert.fixtures import DEFAULT_SEED, FIXTURE_EPOCH, FixtureFactory, build_corpus, write_corpus  # noqa: E402

AT = FIXTURE_EPOCH


@pytest.fixture(scope="session")
def corpus():
    anchors, owners, fixtures, ca = build_corpus(DEFAULT_SEED, AT)
    return {"anchors": anchors, "owners": owners, "fixtures": {f.name: f for f in fixtures}, "ca": ca}


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    return write_corpus(tmp_path_factory.mktemp("corpus"), DEFAULT_SEED, AT)


@pytest.fixture
def pki():
    """A fresh root -> intermediate -> abc.com owner hierarchy."""
    f = FixtureFactory(7, AT)
    root = f.root()
    ca = f.intermediate(root)
    owner = f.eec(ca, "abc.com")
    return f, root, ca, owner


def at(**delta):
    return AT + datetime.timedelta(**delta)


CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    yield
    failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
    line = f"{'FAIL' if failed else 'PASS'} criterion {number}: {title}"
    CRITERIA[number] = line
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
