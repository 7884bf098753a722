import pytest

from patchflow.config import parse_config
from patchflow.driver import run

GOLDEN = "grid.n=128\ngrid.half_width=1\nrun.tau=1/256\nrun.T=0.5\nrun.initial_density=disk:0.2\nrun.initial_nutrient=1.5\n"
SWEEP_D = (4e-3, 2e-3, 1e-3, 5e-4)


def golden_config(extra=""):
    """Golden configuration with the keys in ``extra`` overriding the defaults."""
    keys = {line.split("=")[0] for line in extra.splitlines()}
    base = "".join(line + "\n" for line in GOLDEN.splitlines() if line.split("=")[0] not in keys)
    return parse_config(base + extra).run


@pytest.fixture(scope="session")
def golden_traj():
    return run(golden_config())


@pytest.fixture(scope="session")
def golden_sweep(golden_traj):
    runs = [(0.0, golden_traj)]
    for D in SWEEP_D:
        runs.append((D, run(golden_config(f"nutrient.D={D!r}\n"))))
    return runs


CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
