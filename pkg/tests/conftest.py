import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from olc.pc_io import PointCloud, QuantizedCloud

torch.set_num_threads(1)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=40)
settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=15)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def random_qc(rng: np.random.Generator, depth: int, n: int) -> QuantizedCloud:
    """Unique random grid coordinates spanning exactly ``depth`` bits."""
    hi = 1 << depth
    pts = rng.integers(0, hi, size=(n, 3))
    pts[0] = hi - 1  # force the coordinate range so quantize infers ``depth``
    if n > 1:
        pts[1] = 0
    pc = PointCloud(pts.astype(np.float64))
    from olc.pc_io import quantize

    qc = quantize(pc, 1.0, origin=(0.0, 0.0, 0.0))
    assert qc.depth == depth
    return qc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model():
    from olc.context import ContextModel, ModelConfig

    return ContextModel(ModelConfig(d=16, layers=1, heads=2, D=2, window=64), seed=3)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"acceptance {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
