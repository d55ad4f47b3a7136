import re
import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "desk",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")
_acceptance_results: dict[int, tuple[str, float]] = {}
_acceptance_names: dict[int, str] = {}


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "test_acceptance" not in item.nodeid:
        return
    m = _CRITERION_RE.search(item.name)
    if not m:
        return
    num = int(m.group(1))
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _acceptance_results[num] = (outcome, call.duration)
    _acceptance_names[num] = item.name


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_acceptance_results):
        outcome, duration = _acceptance_results[num]
        label = _acceptance_names[num].replace(f"test_criterion_{num}_", "").replace("_", " ")
        terminalreporter.write_line(
            f"criterion {num} ({label}): {outcome} [{duration:.1f}s]"
        )


@pytest.fixture
def rng_factory():
    import torch

    def make(seed: int = 0):
        return torch.Generator().manual_seed(seed)

    return make


def pytest_addoption(parser):
    parser.addoption(
        "--acceptance-steps",
        type=int,
        default=2000,
        help="training steps per run in the heavy acceptance criteria",
    )


@pytest.fixture(scope="session")
def acceptance_steps(request):
    return request.config.getoption("--acceptance-steps")


def elapsed_under(budget_s: float):
    """Context manager asserting the wrapped block stays inside a runtime budget."""

    class _Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, *exc):
            self.seconds = time.perf_counter() - self.start
            if exc[0] is None:
                assert self.seconds < budget_s, (
                    f"runtime {self.seconds:.1f}s exceeded budget {budget_s}s"
                )
            return False

    return _Timer()
