import pytest

from gslm.data import render_dataset
from gslm.synth import SceneSpec

TINY_SPEC = SceneSpec(size=32, body_long_range=(6, 8), body_short_range=(4, 5), part_half=1)


@pytest.fixture(scope="session")
def tiny_train():
    return render_dataset(TINY_SPEC, range(24))


@pytest.fixture(scope="session")
def tiny_eval():
    return render_dataset(TINY_SPEC, range(24, 32))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda ln: int(ln.split()[1])):
            terminalreporter.write_line(line)
