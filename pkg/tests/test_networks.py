import numpy as np
import pytest

from mlfew.autodiff import NumericalError, Tape, Tensor
from mlfew.networks import Adam, Mlp, glorot_uniform


def test_glorot_bound():
    rng = np.random.default_rng(0)
    w = glorot_uniform(rng, 30, 50)
    bound = np.sqrt(6.0 / 80)
    assert w.shape == (30, 50)
    assert np.all(np.abs(w) <= bound)


def test_zero_net_maps_to_zero():
    net = Mlp([3, 4, 2], np.random.default_rng(0))
    net.set_parameters([Tensor(np.zeros_like(p.data), requires_grad=True)
                        for p in net.parameters()])
    out = net(Tensor(np.ones((5, 3))))
    assert np.array_equal(out.data, np.zeros((5, 2)))


def test_identity_linear_layer():
    net = Mlp([3, 3], np.random.default_rng(0))
    net.set_parameters([Tensor(np.eye(3), requires_grad=True),
                        Tensor(np.zeros(3), requires_grad=True)])
    x = np.random.default_rng(1).standard_normal((4, 3))
    assert np.allclose(net(Tensor(x)).data, x)


def test_duplicated_rows_give_duplicated_outputs():
    net = Mlp([3, 8, 2], np.random.default_rng(2))
    row = np.random.default_rng(3).standard_normal(3)
    out = net(Tensor(np.stack([row, row]))).data
    assert np.array_equal(out[0], out[1])


def test_sigmoid_output_in_unit_interval():
    net = Mlp([4, 8, 1], np.random.default_rng(4), output_activation="sigmoid")
    out = net(Tensor(np.random.default_rng(5).standard_normal((20, 4)) * 5)).data
    assert np.all((out > 0) & (out < 1))


def test_checkpoint_arrays_roundtrip():
    net = Mlp([3, 5, 2], np.random.default_rng(6))
    clone = Mlp.from_arrays(net.to_arrays())
    for a, b in zip(net.parameters(), clone.parameters()):
        assert np.array_equal(a.data, b.data)


def test_adam_effective_lr_schedule():
    opt = Adam(lr=0.001, halve_every=10000)
    assert opt.effective_lr() == pytest.approx(0.001)
    opt.steps = 9999
    assert opt.effective_lr() == pytest.approx(0.001)
    opt.steps = 10000
    assert opt.effective_lr() == pytest.approx(0.0005)
    opt.steps = 25000
    assert opt.effective_lr() == pytest.approx(0.00025)


def test_adam_lr_non_increasing():
    opt = Adam(lr=0.001, halve_every=100)
    previous = np.inf
    for step in range(0, 1000, 50):
        opt.steps = step
        assert opt.effective_lr() <= previous
        previous = opt.effective_lr()


def test_adam_zero_gradient_leaves_params_unchanged():
    opt = Adam()
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    updated, = opt.step([p], [np.zeros(2)])
    assert np.array_equal(updated.data, p.data)


def test_adam_descends_on_quadratic():
    opt = Adam(lr=0.05)
    w = Tensor(np.array([1.0]), requires_grad=True)
    for _ in range(50):
        with Tape() as tape:
            loss = (w * w).sum()
        grad = tape.backward(loss)[w]
        w, = opt.step([w], [grad])
    assert abs(float(w.data)) < 1.0


def test_adam_one_step_decreases_magnitude():
    opt = Adam(lr=0.001)
    w = Tensor(np.array([1.0]), requires_grad=True)
    w2, = opt.step([w], [np.array([2.0])])
    assert abs(float(w2.data)) < 1.0


def test_adam_rejects_nonfinite_gradient():
    opt = Adam()
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(NumericalError):
        opt.step([p], [np.array([np.nan])])
