import numpy as np
import pytest

from roughquad.hamiltonians import NoiseHamiltonian, QuadraticHamiltonian
from roughquad.paths import TimeGrid, make_brownian, zero_path


@pytest.fixture
def grid01():
    """Grid on [0, 1] with 257 nodes."""
    return TimeGrid(0.5, 0.5, 257)


@pytest.fixture
def harmonic1():
    return QuadraticHamiltonian.harmonic(1)


@pytest.fixture
def free1():
    return QuadraticHamiltonian.free(1)


@pytest.fixture
def kq1():
    """Noise Hamiltonian q^2 / 2 in one dimension."""
    return NoiseHamiltonian.position(1, 1.0)


@pytest.fixture
def brownian01(grid01):
    return make_brownian(11, grid01)


@pytest.fixture
def zero01(grid01):
    return zero_path(grid01)


def free_kernel(x, y, dt):
    return (2j * np.pi * dt) ** -0.5 * np.exp(1j * (x - y) ** 2 / (2 * dt))


def harmonic_kernel(x, y, dt):
    s, c = np.sin(dt), np.cos(dt)
    return (2j * np.pi * s) ** -0.5 * np.exp(1j * ((x ** 2 + y ** 2) * c - 2 * x * y) / (2 * s))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
