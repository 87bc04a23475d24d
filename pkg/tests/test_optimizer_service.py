import numpy as np
import pytest

from app.services import autodiff_service as ad
from app.services.autodiff_service import Tape, backward
from app.services.optimizer_service import ParamSet, adam_step, grad_check, relative_error
from app.utils.errors import ShapeMismatch


def test_zero_gradient_leaves_parameters():
    params = ParamSet()
    params.add("w", np.array([1.0, -2.0]))
    adam_step(params, {"w": np.zeros(2)}, lr=0.1)
    assert np.array_equal(params["w"].data, [1.0, -2.0])
    assert params.step_count("w") == 1


def test_first_step_moves_by_learning_rate():
    params = ParamSet()
    params.add("w", np.array([0.0, 0.0]))
    adam_step(params, {"w": np.array([5.0, -0.01])}, lr=0.1)
    assert np.allclose(params["w"].data, [-0.1, 0.1], atol=1e-6)


def test_adam_minimizes_quadratic_bowl():
    params = ParamSet()
    params.add("p", np.array([-4.0, 10.0]))
    for _ in range(500):
        with Tape() as tape:
            d = ad.add_scalar(params["p"], -3.0)
            loss = ad.sum(ad.mul(d, d))
        adam_step(params, backward(tape, loss, dict(params.items())), lr=0.05)
    assert np.all(np.abs(params["p"].data - 3.0) < 0.01)


def test_adam_rejects_wrong_gradient_shape():
    params = ParamSet()
    params.add("w", np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        adam_step(params, {"w": np.zeros(4)}, lr=0.1)
    with pytest.raises(ShapeMismatch):
        adam_step(params, {}, lr=0.1)


def test_param_set_bookkeeping():
    params = ParamSet()
    params.add("a", np.zeros((2, 3)))
    params.add("b", np.arange(4))
    assert params.names() == ["a", "b"]
    assert params.num_parameters == 10
    assert params["b"].data.dtype == np.float32
    with pytest.raises(ValueError):
        params.add("a", np.zeros(1))


def test_load_arrays_replaces_values_and_resets_state():
    params = ParamSet()
    params.add("a", np.zeros(3))
    adam_step(params, {"a": np.ones(3)}, lr=0.1)
    snapshot = params.arrays()
    snapshot["a"][:] = 7.0
    assert not np.any(params["a"].data == 7.0)
    params.load_arrays(snapshot)
    assert np.array_equal(params["a"].data, [7.0, 7.0, 7.0])
    assert params.step_count("a") == 0
    with pytest.raises(ShapeMismatch):
        params.load_arrays({"a": np.zeros(4)})
    with pytest.raises(ShapeMismatch):
        params.load_arrays({})


def test_grad_check_of_squared_norm():
    params = ParamSet()
    params.add("p", np.array([0.3, -1.2, 2.0]))
    report = grad_check(lambda: ad.sum(ad.mul(params["p"], params["p"])), params, h=1e-4)
    assert report.max_error < 1e-6
    assert report.passed


def test_grad_check_restores_parameters():
    params = ParamSet()
    params.add("p", np.array([0.5, 1.5], dtype=np.float32))
    grad_check(lambda: ad.sum(ad.tanh(params["p"])), params)
    assert params["p"].data.dtype == np.float32
    assert np.array_equal(params["p"].data, np.array([0.5, 1.5], dtype=np.float32))


def test_grad_check_of_dead_relu_is_zero():
    params = ParamSet()
    params.add("p", -np.abs(np.array([1.0, 2.0, 0.5])))
    report = grad_check(lambda: ad.sum(ad.relu(params["p"])), params)
    assert report.max_error == 0.0


def test_grad_check_samples_coordinates():
    params = ParamSet()
    params.add("p", np.linspace(-1, 1, 50))
    report = grad_check(lambda: ad.sum(ad.tanh(params["p"])), params, h=1e-5, max_coords=5, seed=3)
    assert report.passed
    assert report.worst is not None and report.worst[0] == "p"


def test_relative_error_floor():
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
