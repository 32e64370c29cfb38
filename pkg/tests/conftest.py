import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_phantom():
    from rectnet.phantom import generate_phantom, random_phantom_spec
    spec = random_phantom_spec(7, "desk", n_nodules=3)
    vol, truth, anns = generate_phantom(spec)
    return spec, vol, truth, anns


ACCEPTANCE_LINES: list[str] = []


class CriterionRecorder:
    def __init__(self):
        self.line = None

    def check(self, number: int, title: str, ok: bool, detail: str) -> None:
        self.line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        ACCEPTANCE_LINES.append(self.line)
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion(request):
    rec = CriterionRecorder()
    yield rec
    if rec.line is None:
        ACCEPTANCE_LINES.append(f"FAIL {request.node.name}: stopped before reaching its verdict")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
