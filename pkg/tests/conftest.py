import itertools
import shutil

import pytest

from fabacl.identity import ca_init

import scenarios


@pytest.fixture(scope="session")
def ca():
    return ca_init("org1-ca")


@pytest.fixture
def ledger(ca):
    return scenarios.trusted_ledger(ca)


_names = itertools.count()


@pytest.fixture
def issue(ca):
    def _issue(attrs, parent=None, name=None):
        return scenarios.issue(ca, name or f"id-{next(_names)}", attrs, parent)

    return _issue


requires_openssl = pytest.mark.skipif(shutil.which("openssl") is None, reason="openssl CLI not installed")


def pytest_terminal_summary(terminalreporter):
    import criteria

    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in criteria.RESULTS:
            terminalreporter.write_line(line)
