import numpy as np
import pytest

from fccsim.fcc import Int8FilterBank, fcc_transform
from fccsim.oracle import LayerError, LayerSpec, conv_direct, recover, window_sum
from tests.conftest import random_int8, random_spec


def naive_conv(x, w, spec):
    """Plain nested loops, zero padding, cross-correlation."""
    C, H, W = spec.input_shape
    Ho, Wo = spec.out_hw
    out = np.zeros((spec.N, Ho, Wo), dtype=np.int64)
    for n in range(spec.N):
        chans = [n] if spec.kind == "dw" else range(C)
        for oy in range(Ho):
            for ox in range(Wo):
                acc = 0
                for ci, c in enumerate(chans):
                    for ky in range(spec.K):
                        for kx in range(spec.K):
                            iy = oy * spec.stride + ky - spec.pad
                            ix = ox * spec.stride + kx - spec.pad
                            if 0 <= iy < H and 0 <= ix < W:
                                acc += int(x[c, iy, ix]) * int(w[n, ci, ky, kx])
                out[n, oy, ox] = acc
    return out


@pytest.mark.parametrize("kind", ["std", "pw", "dw", "fc"])
@pytest.mark.parametrize("seed", range(3))
def test_conv_matches_naive_loops(kind, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, kind, max_hw=7, max_c=6, max_n=6)
    x = random_int8(rng, spec.input_shape)
    w = random_int8(rng, spec.bank_shape)
    assert np.array_equal(conv_direct(x, w, spec), naive_conv(x, w, spec))


def test_scalar_and_identity():
    fc = LayerSpec("fc", 1, 1, 1, 1, fcc_enabled=False)
    assert conv_direct(np.array([2], np.int8), np.full((1, 1, 1, 1), 5), fc).ravel().tolist() == [10]
    eye = LayerSpec("fc", 1, 1, 4, 4, fcc_enabled=False)
    x = np.array([1, -2, 3, -128], np.int8)
    assert conv_direct(x, np.eye(4, dtype=int).reshape(4, 4, 1, 1), eye).ravel().tolist() == x.tolist()


def test_worst_case_fits_int32():
    spec = LayerSpec("std", 16, 16, 32, 2, 3, 1, 1)
    x = np.full(spec.input_shape, -128, np.int8)
    w = np.full(spec.bank_shape, -128)
    assert conv_direct(x, w, spec).max() == 9 * 32 * 128 * 128


@pytest.mark.parametrize("kind", ["std", "pw", "dw"])
def test_recover_identity(kind, rng):
    """conv(x, biased-comp) == conv(x, comp) + window_sum * M."""
    spec = random_spec(rng, kind, max_hw=8, max_c=8, max_n=8)
    x = random_int8(rng, spec.input_shape)
    res = fcc_transform(Int8FilterBank(random_int8(rng, spec.bank_shape).clip(-127, 127)))
    comp = conv_direct(x, res.store.comp_filters(), spec)
    got = recover(comp, window_sum(x, spec), res.store.means, spec)
    assert np.array_equal(got, conv_direct(x, res.biased_comp.weights, spec))


@pytest.mark.parametrize("kw", [
    dict(kind="pw", H=4, W=4, C=2, N=2, K=3),
    dict(kind="dw", H=4, W=4, C=2, N=4, K=3),
    dict(kind="fc", H=2, W=1, C=2, N=2),
    dict(kind="conv", H=4, W=4, C=2, N=2),
    dict(kind="std", H=4, W=4, C=2, N=2, post="relu"),
    dict(kind="std", H=2, W=2, C=1, N=2, K=5),
])
def test_layer_spec_rejects(kw):
    with pytest.raises(LayerError):
        LayerSpec(**kw)


def test_shape_mismatch(rng):
    spec = LayerSpec("pw", 4, 4, 3, 2)
    with pytest.raises(LayerError):
        conv_direct(random_int8(rng, (3, 4, 5)), np.zeros(spec.bank_shape), spec)
    with pytest.raises(LayerError):
        conv_direct(np.full((3, 4, 4), 300), np.zeros(spec.bank_shape), spec)
