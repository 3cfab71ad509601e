import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(id, passed, detail)."""

    def record(cid, passed, detail):
        ACCEPTANCE[cid] = (bool(passed), detail)
        print("criterion %s: %s  %s" % (cid, "PASS" if passed else "FAIL", detail))
        return bool(passed)

    return record


def _order(cid):
    num = "".join(ch for ch in cid if ch.isdigit())
    return (int(num) if num else 0, cid)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=_order):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line("criterion %-4s %s  %s" % (cid, "PASS" if ok else "FAIL", detail))
