import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zerospeed import imgproc, synth

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


def textured(h, w, seed=0, density=0.5):
    """Contrast-equalized uint8 value-noise texture of shape (h, w)."""
    tex = synth.make_texture("value_noise", density, h, w, np.random.default_rng(seed))
    return imgproc.apply_clahe(np.clip(np.floor(tex + 0.5), 0, 255).astype(np.uint8))


@pytest.fixture
def texture():
    return textured


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one criterion verdict; the lines are repeated in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE.append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
