import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from granroute import tensor as T
from granroute.errors import NonFiniteGradient, NumericOverflow, OddAxis, ShapeMismatch, VocabOverflow
from granroute.tensor import OpKind, Tensor, backward_vjp, check_gradient, forward_op
from gradcases import op_error
from granroute.tensorfile import encode_tensor, load_tensor, read_tensor, save_tensor


def test_softmax_of_zeros_is_uniform():
    out = T.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [0.5, 0.5])


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_cross_entropy_of_uniform_probs():
    out = forward_op("cross_entropy", [Tensor([[0.2] * 5])], {"targets": [3]})
    assert out.item() == pytest.approx(1.60944, abs=1e-5)
    assert out.item() == pytest.approx(math.log(5), abs=1e-12)


def test_scale_and_add_vjp():
    g = np.array([1.0, -2.0, 3.0])
    x = Tensor([0.5, 0.1, 0.7])
    (gx,) = backward_vjp("scale", [x], g, {"factor": 2.0})
    np.testing.assert_array_equal(gx, 2 * g)
    ga, gb = backward_vjp("add", [x, Tensor([1.0, 1.0, 1.0])], g)
    np.testing.assert_array_equal(ga, g)
    np.testing.assert_array_equal(gb, g)


def test_softmax_vjp_matches_finite_differences():
    x = np.array([1.0, 2.0, 3.0])
    w = np.array([0.3, -1.2, 0.7])
    err = check_gradient(lambda t: T.mul(T.softmax(t), Tensor(w)).sum(), x, eps=1e-5)
    assert err < 1e-6


def test_check_gradient_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    assert check_gradient(lambda t: (t * t).sum(), np.array([1.0, 2.0])) <= 1e-6


def test_check_gradient_rejects_bad_eps_and_nonfinite():
    with pytest.raises(ValueError):
        check_gradient(lambda t: t.sum(), np.ones(2), eps=0.1)
    with pytest.raises(NonFiniteGradient):
        check_gradient(lambda t: t.sum(), np.array([1.0, np.nan]))


def test_catalog_is_closed():
    for kind in OpKind:
        assert kind in T._FORWARD and kind in T._VJP


def test_shape_mismatch_and_overflow():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(NumericOverflow):
        T.scale(Tensor([1e308]), 10.0)
    with pytest.raises(OddAxis):
        T.mean_pool_pair(Tensor(np.ones((3, 2))), axis=0)
    with pytest.raises(VocabOverflow):
        T.embed_lookup(Tensor(np.ones((4, 2))), [4])
    with pytest.raises(ShapeMismatch):
        backward_vjp("scale", [Tensor([1.0, 2.0])], np.ones(3), {"factor": 1.0})


def test_mask_fill_uses_large_negative_not_inf():
    out = T.mask_fill(Tensor([1.0, 2.0]), [False, True])
    assert out.data[1] == -1e9
    probs = T.softmax(out)
    assert probs.data[1] == 0.0 and np.isfinite(probs.data).all()


def test_ops_are_deterministic():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 4))
    for _ in range(3):
        np.testing.assert_array_equal(T.softmax(T.matmul(Tensor(a), Tensor(b))).data, T.softmax(T.matmul(Tensor(a), Tensor(b))).data)


def test_backward_accumulates_through_shared_nodes():
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x * 2.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


# every op against central differences --------------------------------------


@pytest.mark.parametrize("kind", list(OpKind), ids=lambda k: k.value)
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_every_op_matches_finite_differences(kind, seed):
    assert op_error(kind, seed) < 1e-4


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_softmax_rows_form_a_simplex(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=tuple(rng.integers(1, 9, size=2))) * 10
    p = T.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


# tensor file format ---------------------------------------------------------


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int64])
def test_tensor_file_round_trip(tmp_path, dtype):
    arr = (np.arange(24).reshape(2, 3, 4) * 1.5).astype(dtype)
    save_tensor(tmp_path / "x.tensor", arr)
    back = load_tensor(tmp_path / "x.tensor")
    assert back.dtype == arr.dtype
    np.testing.assert_array_equal(back, arr)


def test_tensor_header_layout():
    blob = encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    header, payload = blob.split(b"\n", 1)
    assert json.loads(header) == {"shape": [1, 2], "dtype": "f32"}
    assert payload == np.array([1.0, 2.0], dtype="<f4").tobytes()
    with pytest.raises(Exception):
        read_tensor(io.BytesIO(blob[:-1]))
