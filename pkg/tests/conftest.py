import numpy as np
import pytest
from hypothesis import settings

from fccsim.fcc import FloatFilterBank, Int8FilterBank, fcc_transform
from fccsim.oracle import LayerSpec

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_spec(rng, kind=None, max_hw=16, max_c=32, max_n=32):
    kind = kind or rng.choice(["std", "pw", "dw", "fc"])
    if kind == "fc":
        return LayerSpec("fc", 1, 1, int(rng.integers(1, 129)), int(rng.integers(1, 33)),
                         fcc_enabled=False, layer_id="fc")
    hw = int(rng.integers(3, max_hw + 1))
    c = int(rng.integers(1, max_c + 1))
    if kind == "dw":
        c += c % 2
        return LayerSpec("dw", hw, hw, c, c, 3, int(rng.integers(1, 3)), 1, layer_id="dw")
    n = 2 * int(rng.integers(1, max_n // 2 + 1))
    if kind == "pw":
        return LayerSpec("pw", hw, hw, c, n, 1, 1, 0, layer_id="pw")
    return LayerSpec("std", hw, hw, c, n, 3, int(rng.integers(1, 3)), int(rng.integers(0, 2)),
                     layer_id="std")


def random_store(rng, spec):
    """FCC store made from a random float bank of the layer's shape."""
    return fcc_transform(FloatFilterBank(rng.normal(size=spec.bank_shape))).store


def random_int8(rng, shape):
    return rng.integers(-128, 128, size=shape).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def worked_pair_bank():
    f0 = [-1.5, 127, 0.5, -3]
    f1 = [6.5, -124, 1.5, 1]
    return FloatFilterBank(np.array([f0, f1]).reshape(2, 1, 2, 2), "worked_pair")


@pytest.fixture
def int8_pair():
    return Int8FilterBank(np.array([[[[3]]], [[[-1]]]], dtype=np.int8))


ACCEPTANCE = []  # (criterion, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
