import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from setfield.encode import ObjectSet, encode_field
from setfield.kernels import KernelSpec
from setfield.sampling import SamplerConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def grid_box(lo, hi, n, dim):
    """Tensor grid points and per-point trapezoid weights on a cube."""
    ax = np.linspace(lo, hi, n)
    w1 = np.full(n, ax[1] - ax[0])
    w1[[0, -1]] *= 0.5
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    wmesh = np.meshgrid(*([w1] * dim), indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    w = np.prod(np.column_stack([m.ravel() for m in wmesh]), axis=1)
    return pts, w


@pytest.fixture
def six_scene():
    pos = np.array([[0.0, 0.0], [0.4, 0.0], [0.0, 0.4], [0.4, 0.4], [0.8, 0.2], [0.2, 0.8]])
    feats = np.random.default_rng(0).normal(size=(6, 3))
    return ObjectSet(pos, feats), KernelSpec("gaussian", 0.05, 2)


def encode(objects, spec, m=4096, seed=0, **cfg):
    return encode_field(objects, spec, SamplerConfig(**cfg), m, seed)


# acceptance reporting: one line per criterion, repeated in the terminal summary
_ACCEPTANCE = []


@pytest.fixture
def criterion():
    def record(name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
