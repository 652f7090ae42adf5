import pytest

from fresco.infra import build_infrastructure, load_traces, synth_cell_sites


@pytest.fixture(scope="session")
def small_infra():
    """20 sites in 4 cells with 65% edge availability."""
    sites = synth_cell_sites(20, 4, seed=3)
    return build_infrastructure(sites, 4, seed=3, traces=load_traces("synth:ratio=0.65", 20, 2))


@pytest.fixture(scope="session")
def always_on_infra():
    sites = synth_cell_sites(12, 3, seed=5)
    return build_infrastructure(sites, 3, seed=7)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_c" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            name = rep.nodeid.split("::")[-1]
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"{verdict} {name} {detail}".rstrip())
