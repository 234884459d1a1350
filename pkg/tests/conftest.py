import numpy as np
import pytest
import torch

from xdrecon import kernels
from xdrecon.kspace import ComplexImage

torch.set_num_threads(1)

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=64, w=64, scale=1.0):
    return ComplexImage(rng.standard_normal((h, w)) * scale, rng.standard_normal((h, w)) * scale)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split("criterion ")[1].split(":")[0].split(" ")[0]), s)):
            terminalreporter.write_line(line)
