import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from infadmm import kernels  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available convolution backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.BACKENDS[request.param])
    return request.param


@pytest.fixture
def configs_dir():
    return os.path.join(ROOT, "configs")


# criterion number -> list of (label, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def record(criterion, passed, detail, label=""):
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        status = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        detail = "; ".join(f"{label + ': ' if label else ''}{'pass' if p else 'FAIL'} ({d})"
                           for label, p, d in sorted(parts))
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
