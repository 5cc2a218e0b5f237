import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pshenv import GridField, build_geometry

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")

TWO_PI = 2 * np.pi


@pytest.fixture
def geom1():
    return build_geometry(1)


@pytest.fixture
def geom2():
    return build_geometry(2)


def cos_field(geom, N, amp, axis=0):
    return GridField.from_function(geom, N, lambda *c: amp * np.cos(TWO_PI * c[axis]))


def trig_field(geom, N, coeffs, kmax=2):
    """Real trigonometric polynomial from a flat list of coefficients."""
    d = 2 * geom.complex_dim
    rng = np.random.default_rng(abs(hash(tuple(coeffs))) % 2**32)
    ks = rng.integers(-kmax, kmax + 1, size=(len(coeffs), d))
    phases = rng.uniform(0, TWO_PI, size=len(coeffs))

    def f(*c):
        out = 0.0
        for a, k, p in zip(coeffs, ks, phases):
            out = out + a * np.cos(TWO_PI * sum(ki * ci for ki, ci in zip(k, c)) + p)
        return out

    return GridField.from_function(geom, N, f)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record_criterion(num: int, ok: bool, detail: str) -> bool:
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[num] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])
