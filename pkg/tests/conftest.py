import numpy as np
import pytest

from ampose.model import ModelConfig, build_model
from ampose.skeleton import chain, load_skeleton, star

ACCEPTANCE_LINES: list[str] = []

TINY5 = {"name": "tiny5", "num_joints": 5, "root": 0, "edges": [[0, 1], [0, 2], [1, 3], [2, 4]]}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["chain3", "star4", "h36m16", "h36m17"])
def any_skeleton(request):
    return {"chain3": lambda: chain(3), "star4": lambda: star(4)}.get(request.param, lambda: load_skeleton(request.param))()


@pytest.fixture
def tiny_config():
    return ModelConfig(num_joints=5, channels=8, depth=1, num_heads=2, mlp_ratio=2, output_scale=1.0, skeleton=TINY5)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0)


def perturbed(params, rng, scale=0.1):
    return {k: v + rng.normal(scale=scale, size=v.shape) for k, v in params.items()}
