import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fccsim.datapath import (ScheduleError, aru_merge, bit_serialize, im2col, run_schedule,
                             shift_add)
from fccsim.fcc import Int8FilterBank, fcc_transform, reconstruct
from fccsim.mapper import CONFIGS, map_layer
from fccsim.oracle import LayerSpec, conv_direct
from fccsim.schedule import Drain
from tests.conftest import random_int8, random_spec, random_store


@given(hnp.arrays(np.int8, st.integers(1, 40)))
def test_bit_serialize_roundtrip(v):
    assert np.array_equal(bit_serialize(v).values(), v.astype(np.int64))


@given(st.integers(-128, 127), st.integers(-128, 127))
def test_shift_add_is_signed_product(x, w):
    xb = bit_serialize(np.array([x])).planes[:, 0]
    wb = bit_serialize(np.array([w])).planes[:, 0]
    assert shift_add(np.outer(xb, wb)) == x * w


def test_shift_add_shape_check():
    with pytest.raises(IndexError):
        shift_add(np.zeros((8, 7)))


def test_im2col_matches_windows(rng):
    spec = LayerSpec("std", 5, 5, 2, 2, 3, 2, 1)
    x = random_int8(rng, spec.input_shape)
    w = random_int8(rng, spec.bank_shape).astype(np.int64)
    cols = im2col(x, spec)
    assert cols.shape == (18, 9)
    assert np.array_equal(w.reshape(2, -1) @ cols, conv_direct(x, w, spec).reshape(2, -1))


def test_aru_merge_identity_when_disabled():
    ps = np.arange(6).reshape(2, 3)
    assert np.array_equal(aru_merge(ps, np.ones(3), [5], False), ps)
    assert aru_merge(ps, np.ones(3), [5], True)[1].tolist() == [8, 9, 10]


@pytest.mark.parametrize("config", list(CONFIGS))
@pytest.mark.parametrize("kind", ["std", "pw", "dw", "fc"])
def test_schedule_soundness(kind, config, rng):
    spec = random_spec(rng, kind, max_hw=6, max_c=40, max_n=12)
    weights = random_store(rng, spec) if spec.fcc_enabled else random_int8(rng, spec.bank_shape)
    x = random_int8(rng, spec.input_shape)
    sched = map_layer(spec, weights, CONFIGS[config])
    ref = reconstruct(weights).weights if spec.fcc_enabled else weights
    want = conv_direct(x, ref, spec)
    assert np.array_equal(run_schedule(sched, x), want)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_dw_kernel_sizes(k, rng):
    spec = LayerSpec("dw", 7, 7, 10, 10, k, 1, k // 2)
    store = random_store(rng, spec)
    x = random_int8(rng, spec.input_shape)
    want = conv_direct(x, reconstruct(store).weights, spec)
    for cfg in CONFIGS.values():
        assert np.array_equal(run_schedule(map_layer(spec, store, cfg), x), want)


def test_extreme_values():
    spec = LayerSpec("std", 4, 4, 40, 4, 3, 1, 1)
    w = np.full(spec.bank_shape, -127, np.int8)
    w[1::2] = 127
    res = fcc_transform(Int8FilterBank(w))
    x = np.full(spec.input_shape, -128, np.int8)
    got = run_schedule(map_layer(spec, res.store, CONFIGS["full"]), x)
    assert np.array_equal(got, conv_direct(x, res.biased_comp.weights, spec))


def test_double_drain_rejected(rng):
    spec = LayerSpec("pw", 2, 2, 3, 2, fcc_enabled=False)
    sched = map_layer(spec, random_int8(rng, spec.bank_shape), CONFIGS["full"])
    sched.steps.append(Drain((0,)))
    with pytest.raises(ScheduleError):
        run_schedule(sched, random_int8(rng, spec.input_shape))
