import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flowdepth import oracle

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def static64():
    spec = oracle.static_scene(64, 96)
    return (spec, *oracle.render(spec))


@pytest.fixture(scope="session")
def moving64():
    spec = oracle.moving_plane_scene(64, 96)
    return (spec, *oracle.render(spec))


@pytest.fixture(scope="session")
def occluder64():
    spec = oracle.occluder_scene(64, 96)
    return (spec, *oracle.render(spec))


@pytest.fixture(scope="session")
def integer_scene():
    spec = oracle.integer_flow_scene()
    return (spec, *oracle.render(spec))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def record(n: int, ok: bool, detail: str):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
