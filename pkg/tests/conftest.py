import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mixray.geometry import MetricField

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def flat():
    return MetricField.euclidean()


@pytest.fixture(scope="session")
def hyper():
    return MetricField.constant_curvature(-0.5)


@pytest.fixture(params=["euclidean", "hyperbolic"], scope="session")
def metric(request):
    if request.param == "euclidean":
        return MetricField.euclidean()
    return MetricField.constant_curvature(-0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance report ---------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.parts: list[tuple[str, bool, str]] = []

    def check(self, label: str, ok: bool, detail: str) -> None:
        self.parts.append((label, bool(ok), detail))

    def note(self, label: str, detail: str) -> None:
        """Reported alongside the checks, never asserted."""
        self.parts.append((label, True, detail))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None and all(p[1] for p in self.parts)
        text = "; ".join(f"{label} {detail}{'' if good else ' [FAIL]'}" for label, good, detail in self.parts)
        if exc_type is not None:
            text += f"; raised {exc_type.__name__}: {exc}"
        _ACCEPTANCE[self.number] = (ok, f"{self.title}: {text}")
        if exc_type is None:
            bad = [p[0] for p in self.parts if not p[1]]
            assert not bad, f"criterion {self.number} failed: {', '.join(bad)}"
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {text}")
