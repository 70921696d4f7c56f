import numpy as np
import pytest

from mlfew.autodiff import (
    NumericalError,
    ShapeError,
    SingularMatrixError,
    Tape,
    Tensor,
    add,
    check_gradients,
    clip,
    concat,
    exp,
    inverse,
    l1_normalize,
    log,
    matmul,
    multiply,
    pairwise_sq_dists,
    relu,
    reshape,
    select_rows,
    sigmoid,
    softmax,
    subtract,
)

RNG = np.random.default_rng(1234)


def test_matmul_identity():
    a = Tensor(np.arange(9.0).reshape(3, 3))
    assert np.array_equal(matmul(Tensor(np.eye(3)), a).data, a.data)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_symmetry():
    out = softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_rows_normalized():
    x = Tensor(RNG.standard_normal((20, 7)) * 8)
    out = softmax(x).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_pairwise_sq_dists_value():
    d = pairwise_sq_dists(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]))
    assert d.data[0, 0] == pytest.approx(2.0)


def test_nonfinite_raises():
    with pytest.raises(NumericalError):
        exp(Tensor([1000.0]))
    with pytest.raises(NumericalError):
        log(Tensor([0.0]))


def test_inverse_roundtrip_well_conditioned():
    a = np.eye(10) + 0.05 * RNG.standard_normal((10, 10))
    product = inverse(Tensor(a)).data @ a
    assert np.max(np.abs(product - np.eye(10))) < 1e-8


def test_inverse_singular_raises():
    singular = np.ones((3, 3))
    with pytest.raises(SingularMatrixError):
        inverse(Tensor(singular))


def test_backward_sum_gives_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = x.sum()
    assert np.array_equal(tape.backward(loss)[x], np.ones(3))


def test_backward_times_zero_gives_zeros():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * 0.0).sum()
    assert np.array_equal(tape.backward(loss)[x], np.zeros(3))


def test_backward_sigmoid_of_linear():
    # d/dw sigmoid(w # x) at w=0, x=1 is sigma'(0) = 0.25
    w = Tensor(np.array([[0.0]]), requires_grad=True)
    with Tape() as tape:
        loss = sigmoid(matmul(w, Tensor([[1.0]]))).sum()
    assert tape.backward(loss)[w][0, 0] == pytest.approx(0.25)


def test_backward_requires_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_disconnected_leaf_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        _ = y * 2.0  # y participates but not in the loss
        loss = x.sum()
    grads = tape.backward(loss)
    assert np.array_equal(grads[y], np.zeros(1))
    assert np.array_equal(grads[x], np.ones(2))


def test_two_node_chain_matches_product_rule():
    # loss = sum(exp(a*b)); d/da = b*exp(ab), d/db = a*exp(ab), exactly.
    a_val = np.array([0.3, -1.2])
    b_val = np.array([0.7, 0.25])
    a = Tensor(a_val, requires_grad=True)
    b = Tensor(b_val, requires_grad=True)
    with Tape() as tape:
        loss = exp(a * b).sum()
    grads = tape.backward(loss)
    assert np.array_equal(grads[a], b_val * np.exp(a_val * b_val))
    assert np.array_equal(grads[b], a_val * np.exp(a_val * b_val))


def test_gradient_accumulates_over_reuse():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    assert tape.backward(loss)[x][0] == pytest.approx(4.0)


def test_check_gradients_sum_of_squares():
    err = check_gradients(lambda t: (t * t).sum(), Tensor([1.0, 2.0, 3.0]))
    assert err < 1e-6


def test_check_gradients_constant_function():
    err = check_gradients(lambda t: Tensor(1.0), Tensor([1.0, 2.0]))
    assert err == 0.0


def test_check_gradients_epsilon_domain():
    with pytest.raises(ValueError):
        check_gradients(lambda t: t.sum(), Tensor([1.0]), epsilon=0.5)


@pytest.mark.parametrize("name,builder,shape", [
    ("matmul", lambda c: (lambda x: (matmul(x, Tensor(c["b42"])) * Tensor(c["g32"])).sum()), (3, 4)),
    ("add", lambda c: (lambda x: (add(x, Tensor(c["v4"])) * Tensor(c["g34"])).sum()), (3, 4)),
    ("subtract", lambda c: (lambda x: (subtract(Tensor(c["a34"]), x) * Tensor(c["g34"])).sum()), (3, 4)),
    ("multiply", lambda c: (lambda x: multiply(x, Tensor(c["a34"])).sum()), (3, 4)),
    ("exp", lambda c: (lambda x: (exp(x) * Tensor(c["g34"])).sum()), (3, 4)),
    ("negate", lambda c: (lambda x: ((-x) * Tensor(c["g34"])).sum()), (3, 4)),
    ("sigmoid", lambda c: (lambda x: (sigmoid(x) * Tensor(c["g34"])).sum()), (3, 4)),
    ("softmax", lambda c: (lambda x: (softmax(x) * Tensor(c["g34"])).sum()), (3, 4)),
    ("mean", lambda c: (lambda x: (x.mean(axis=0) * Tensor(c["v4"])).sum()), (3, 4)),
    ("sum_axis", lambda c: (lambda x: (x.sum(axis=1) * Tensor(c["v3"])).sum()), (3, 4)),
    ("reshape", lambda c: (lambda x: (reshape(x, (4, 3)) * Tensor(c["g43"])).sum()), (3, 4)),
    ("concat", lambda c: (lambda x: (concat([x, Tensor(c["a34"])], axis=0) * Tensor(c["g64"])).sum()), (3, 4)),
    ("select", lambda c: (lambda x: (select_rows(x, [2, 0, 1, 2]) * Tensor(c["g44"])).sum()), (3, 4)),
    ("sq_dists", lambda c: (lambda x: (pairwise_sq_dists(x, Tensor(c["b24"])) * Tensor(c["g32"])).sum()), (3, 4)),
    ("l1norm", lambda c: (lambda x: (l1_normalize(x) * Tensor(c["g34"])).sum()), (3, 4)),
])
def test_primitive_gradients_match_finite_differences(name, builder, shape):
    rng = np.random.default_rng(hash(name) % 2**32)
    constants = {
        "a34": rng.standard_normal((3, 4)),
        "b42": rng.standard_normal((4, 2)),
        "b24": rng.standard_normal((2, 4)),
        "v3": rng.standard_normal(3),
        "v4": rng.standard_normal(4),
        "g32": rng.standard_normal((3, 2)),
        "g34": rng.standard_normal((3, 4)),
        "g43": rng.standard_normal((4, 3)),
        "g44": rng.standard_normal((4, 4)),
        "g64": rng.standard_normal((6, 4)),
    }
    point = rng.standard_normal(shape)
    if name == "l1norm":
        point = np.abs(point) + 0.2
    assert check_gradients(builder(constants), Tensor(point)) < 1e-6


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(7)
    g = Tensor(rng.standard_normal((3, 4)))
    point = rng.standard_normal((3, 4))
    point[np.abs(point) < 0.05] += 0.1
    err = check_gradients(lambda x: (relu(x) * g).sum(), Tensor(point))
    assert err < 1e-6


def test_log_gradient():
    rng = np.random.default_rng(8)
    g = Tensor(rng.standard_normal((3, 4)))
    point = rng.random((3, 4)) + 0.5
    assert check_gradients(lambda x: (log(x) * g).sum(), Tensor(point)) < 1e-6


def test_inverse_gradient():
    rng = np.random.default_rng(9)
    g = Tensor(rng.standard_normal((4, 4)))
    point = np.eye(4) + 0.2 * rng.standard_normal((4, 4))
    assert check_gradients(lambda x: (inverse(x) * g).sum(), Tensor(point)) < 1e-5


def test_clip_passes_gradient_only_inside():
    x = Tensor(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
    with Tape() as tape:
        loss = clip(x, -0.5, 0.5).sum()
    assert np.array_equal(tape.backward(loss)[x], [0.0, 1.0, 0.0])


def test_tapes_do_not_interfere():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as outer:
        _ = x * 2.0
        with Tape() as inner:
            inner_loss = (x * 3.0).sum()
        outer_loss = (x * 2.0).sum()
    assert inner.backward(inner_loss)[x][0] == pytest.approx(3.0)
    assert outer.backward(outer_loss)[x][0] == pytest.approx(2.0)


def test_tensor_immutability_of_results():
    x = Tensor([1.0, 2.0])
    y = x + 1.0
    assert y.data is not x.data
    assert np.array_equal(x.data, [1.0, 2.0])
