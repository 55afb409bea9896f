import pathlib

import pytest

from fds.harness import load_scenario, run_scenario

SCENARIOS = pathlib.Path(__file__).resolve().parents[1] / "src" / "fds" / "scenarios"

# acceptance criteria results, printed one per line after the run
_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    def record(name: str, ok: bool, detail: str = ""):
        _CRITERIA.append((name, bool(ok), detail))
        assert ok, "%s: %s" % (name, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        status = "PASS" if ok else "FAIL"
        line = "%s %s" % (status, name)
        if detail:
            line += " -- %s" % detail
        terminalreporter.write_line(line)


def _run(name, **kwargs):
    return run_scenario(load_scenario(SCENARIOS / name), **kwargs)


@pytest.fixture(scope="session")
def rc_drop_report():
    return _run("rc-drop.json")


@pytest.fixture(scope="session")
def rc_buffer_report():
    return _run("rc-buffer.json")


@pytest.fixture(scope="session")
def acme_bc_report():
    return _run("acme-bc.json")


@pytest.fixture(scope="session")
def acme_basic_report():
    return _run("acme-basic.json")


@pytest.fixture(scope="session")
def acme_basic_firewalled_report():
    return _run("acme-basic.json", firewall=True)


@pytest.fixture(scope="session")
def ring_report():
    return _run("ring-churn.json")
