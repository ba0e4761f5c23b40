import numpy as np
import pytest
import torch

from diec.autodiff import GradTape, evaluate_with_gradients, finite_difference_gradient, max_relative_error
from diec.errors import ShapeError


def test_linear_and_quadratic():
    p = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64, requires_grad=True)
    with GradTape({"p": p}) as tape:
        g = tape.gradients(p.sum())
    np.testing.assert_array_equal(g["p"].numpy(), 1.0)
    g = evaluate_with_gradients((p ** 2).sum(), {"p": p})
    np.testing.assert_allclose(g["p"].numpy(), 2 * p.detach().numpy())


def test_unused_parameter_gets_zero_gradient():
    p = torch.ones(2, requires_grad=True)
    q = torch.ones(3, requires_grad=True)
    g = evaluate_with_gradients(p.sum(), {"p": p, "q": q})
    assert torch.equal(g["q"], torch.zeros(3))


def test_non_scalar_loss_rejected():
    p = torch.ones(2, requires_grad=True)
    with pytest.raises(ShapeError):
        evaluate_with_gradients(p * 2, {"p": p})


def test_two_layer_relu_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 4))
    y = rng.standard_normal((7, 2))
    params = {"W1": rng.standard_normal((4, 6)), "b1": rng.standard_normal(6) * 0.1,
              "W2": rng.standard_normal((6, 2)), "b2": rng.standard_normal(2) * 0.1}

    def loss_np(p):
        h = np.maximum(x @ p["W1"] + p["b1"], 0)
        return float(((h @ p["W2"] + p["b2"] - y) ** 2).mean())

    tp = {k: torch.tensor(v, requires_grad=True) for k, v in params.items()}
    h = torch.relu(torch.tensor(x) @ tp["W1"] + tp["b1"])
    loss = ((h @ tp["W2"] + tp["b2"] - torch.tensor(y)) ** 2).mean()
    g = evaluate_with_gradients(loss, tp)
    fd = finite_difference_gradient(loss_np, params, h=1e-3)
    for k in params:
        assert max_relative_error(g[k].numpy(), fd[k]) <= 1e-4, k


def test_fd_coordinate_subset():
    fd = finite_difference_gradient(lambda p: float((p["a"] ** 3).sum()), {"a": np.array([1.0, 2.0, 3.0])},
                                    h=1e-4, coords={"a": np.array([2])})
    np.testing.assert_allclose(fd["a"], [27.0], rtol=1e-6)
