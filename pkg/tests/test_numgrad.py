import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudscale.numgrad import (
    Adam,
    GradientTape,
    ShapeError,
    Tensor,
    add,
    apply_activation,
    backward,
    concat_cols,
    finite_diff_check,
    matmul,
    mse,
    reshape,
    scale,
    softmax_rows,
    sum_all,
    transpose,
)


def T(x):
    return Tensor(np.array(x, dtype=float))


# -- forward examples ---------------------------------------------------------


def test_matmul_identity():
    out = matmul(T(np.eye(2)), T([[1, 2], [3, 4]]))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_zero():
    b = np.random.default_rng(0).normal(size=(2, 5))
    assert np.array_equal(matmul(T(np.zeros((2, 2))), T(b)).data, np.zeros((2, 5)))


def test_matmul_hand_product():
    assert matmul(T([[1, 2]]), T([[3], [4]])).item() == 11.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"2x3.*2x3"):
        matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


@pytest.mark.parametrize(
    "kind, x, want",
    [
        ("relu", [[-1, 2]], [[0, 2]]),
        ("tanh", [[0]], [[0]]),
        ("identity", [[-3.5, 7.25]], [[-3.5, 7.25]]),
    ],
)
def test_activation_examples(kind, x, want):
    assert np.array_equal(apply_activation(T(x), kind).data, want)


def test_unknown_activation_rejected():
    with pytest.raises(ValueError):
        apply_activation(T([[1.0]]), "gelu")


def test_softmax_examples():
    assert np.allclose(softmax_rows(T([[0, 0, 0]])).data, [[1 / 3] * 3], atol=1e-15)
    assert np.allclose(softmax_rows(T([[math.log(2), 0]])).data, [[2 / 3, 1 / 3]], atol=1e-15)
    assert softmax_rows(T([[5]])).item() == 1.0


def test_add_bias_row_broadcast():
    out = add(T(np.zeros((3, 2))), T([[1, 2]]))
    assert np.array_equal(out.data, [[1, 2]] * 3)
    with pytest.raises(ShapeError):
        add(T(np.zeros((3, 2))), T(np.zeros((2, 2))))


# -- backward examples --------------------------------------------------------


def test_sum_gradient_is_ones():
    tape = GradientTape()
    w = tape.watch(np.arange(4.0).reshape(2, 2))
    g = backward(sum_all(w), tape)
    assert np.array_equal(g[w].data, np.ones((2, 2)))


def test_zero_residual_gives_zero_gradient():
    tape = GradientTape()
    w = tape.watch(np.array([[1.0, -2.0], [0.5, 3.0]]))
    x = T([[1.0], [2.0]])
    loss = mse(matmul(w, x), matmul(w, x))
    assert np.array_equal(backward(loss, tape)[w].data, np.zeros((2, 2)))


def test_backward_rejects_non_scalar_and_foreign_loss():
    tape = GradientTape()
    w = tape.watch(np.ones((2, 2)))
    with pytest.raises(ValueError):
        backward(w, tape)
    with pytest.raises(ValueError):
        backward(sum_all(w), GradientTape())


def test_unreached_parameter_gets_zero_gradient():
    tape = GradientTape()
    a = tape.watch(np.ones((1, 2)))
    b = tape.watch(np.ones((3, 1)))
    g = backward(sum_all(a), tape)
    assert np.array_equal(g[b].data, np.zeros((3, 1)))


def test_parameter_used_twice_accumulates():
    tape = GradientTape()
    w = tape.watch(np.array([[3.0]]))
    g = backward(matmul(w, w), tape)
    assert g[w].item() == 6.0


def _mlp3(params, x):
    h = x
    for k in range(3):
        h = add(matmul(h, params[2 * k]), params[2 * k + 1])
        h = apply_activation(h, "tanh" if k < 2 else "identity")
    return mse(h, Tensor(np.zeros(h.shape)))


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    sizes = [4, 6, 5, 2]
    params = []
    for a, b in zip(sizes, sizes[1:]):
        params += [rng.normal(0, 0.7, (a, b)), rng.normal(0, 0.1, (1, b))]
    x = Tensor(rng.normal(size=(3, 4)))
    assert finite_diff_check(lambda ps: _mlp3(ps, x), params) < 1e-4


# -- finite_diff_check examples ----------------------------------------------


def test_fd_square():
    assert finite_diff_check(lambda ps: matmul(ps[0], ps[0]), [np.array([[3.0]])]) < 1e-9


def test_fd_constant():
    assert finite_diff_check(lambda ps: Tensor([[4.0]]), [np.array([[1.0, 2.0]])]) == 0.0


def test_fd_tanh_at_zero():
    tape = GradientTape()
    w = tape.watch(np.array([[0.0]]))
    assert backward(apply_activation(w, "tanh"), tape)[w].item() == pytest.approx(1.0)
    assert finite_diff_check(lambda ps: apply_activation(ps[0], "tanh"), [np.array([[0.0]])]) < 1e-9


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda ps: sum_all(ps[0]), [np.ones((1, 1))], h=0.0)


# -- properties ---------------------------------------------------------------

_OPS = ("matmul", "bias", "relu", "tanh", "softmax", "scale", "transpose", "concat", "reshape")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 4),
       rows=st.integers(1, 8), cols=st.integers(1, 8),
       ops=st.lists(st.sampled_from(_OPS), min_size=4, max_size=4))
def test_random_compositions_pass_gradient_check(seed, depth, rows, cols, ops):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(rows, cols))
    params = [x0]
    plan = []
    shape = (rows, cols)
    for op in ops[:depth]:
        if op == "matmul":
            k = int(rng.integers(1, 9))
            params.append(rng.normal(0, 0.6, (shape[1], k)))
            plan.append(("matmul", len(params) - 1))
            shape = (shape[0], k)
        elif op == "bias":
            params.append(rng.normal(size=(1, shape[1])))
            plan.append(("bias", len(params) - 1))
        elif op == "transpose":
            plan.append(("transpose", None))
            shape = (shape[1], shape[0])
        elif op == "reshape":
            plan.append(("reshape", None))
            shape = (1, shape[0] * shape[1])
        else:
            plan.append((op, None))
            if op == "concat":
                shape = (shape[0], 2 * shape[1])
    target = Tensor(rng.normal(size=shape))

    def f(ps):
        h = ps[0]
        for op, idx in plan:
            if op == "matmul":
                h = matmul(h, ps[idx])
            elif op == "bias":
                h = add(h, ps[idx])
            elif op in ("relu", "tanh"):
                h = apply_activation(h, op)
            elif op == "softmax":
                h = softmax_rows(h)
            elif op == "scale":
                h = scale(h, 1.7)
            elif op == "transpose":
                h = transpose(h)
            elif op == "concat":
                h = concat_cols(h, apply_activation(h, "tanh"))
            else:
                h = reshape(h, 1, h.rows * h.cols)
        return add(mse(h, target), scale(sum_all(h), 0.3))

    assert finite_diff_check(f, params) < 1e-4


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.integers(1, 4))
def test_softmax_rows_on_simplex(values, n_rows):
    x = Tensor(np.tile(np.asarray(values), (n_rows, 1)) * np.arange(1, n_rows + 1)[:, None] / n_rows)
    p = softmax_rows(x).data
    assert np.all(p >= 0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)


def test_forward_and_backward_are_deterministic():
    def run():
        rng = np.random.default_rng(3)
        tape = GradientTape()
        w = tape.watch(rng.normal(size=(4, 3)))
        x = Tensor(rng.normal(size=(5, 4)))
        loss = sum_all(softmax_rows(apply_activation(matmul(x, w), "tanh")))
        return loss.data, backward(loss, tape)[w].data

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


def test_adam_decreases_quadratic_and_round_trips_state():
    params = {"w": np.array([[5.0, -3.0]])}
    opt = Adam(lr=0.1)
    for _ in range(200):
        opt.step(params, {"w": 2.0 * params["w"]})
    assert np.all(np.abs(params["w"]) < 0.1)
    clone = Adam()
    clone.load_state_dict(opt.state_dict())
    p1, p2 = {"w": params["w"].copy()}, {"w": params["w"].copy()}
    opt.step(p1, {"w": np.ones((1, 2))})
    clone.step(p2, {"w": np.ones((1, 2))})
    assert np.array_equal(p1["w"], p2["w"])
