import pytest

# number -> (short title, runtime limit in seconds)
CRITERIA = {
    1: ("metric identities", 1.0),
    2: ("numerical oracles", 30.0),
    3: ("diffusion correctness", 60.0),
    4: ("calibration and consistency", 30.0),
    5: ("spectral fingerprint", 900.0),
    6: ("EOF white-noise fingerprint", 60.0),
    7: ("under-dispersion detection", 900.0),
    8: ("ensemble bookkeeping", 10.0),
    9: ("bootstrap", 60.0),
}

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture(scope="session")
def desk_run():
    from .desk import train_desk_models

    return train_desk_models()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    r = _results.setdefault(marker.args[0], {"outcome": "passed", "seconds": 0.0})
    r["seconds"] += rep.duration
    if rep.failed:
        r["outcome"] = "failed"
    elif rep.skipped and r["outcome"] == "passed":
        r["outcome"] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, (title, limit) in CRITERIA.items():
        r = _results.get(n)
        if r is None:
            tr.write_line(f"criterion {n} ({title}): NOT RUN")
            continue
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[r["outcome"]]
        tr.write_line(f"criterion {n} ({title}): {status}  {r['seconds']:.1f}s (limit {limit:.0f}s)")
