import numpy as np
import pytest

from klrsc.bench import DESK_DIR, load_luma


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def camera():
    return load_luma(DESK_DIR / "camera.png")


@pytest.fixture(scope="session")
def small_scene(camera):
    """A 48x48 textured crop, big enough for a full (shallow) pipeline run."""
    return np.ascontiguousarray(camera[60:108, 90:138])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
