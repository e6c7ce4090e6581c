import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def finite_difference_grads(loss_fn, params, h=1e-3):
    """Central finite differences of a scalar loss over a list of
    parameter tensors, evaluated at 64-bit precision."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Guarded relative error: the floor keeps finite-difference noise on
    exactly-zero gradients (truncation floor ~1e-12 at h=1e-3) from
    registering as disagreement."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.clamp(a.abs() + n.abs(), min=floor)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


@pytest.fixture
def fd_check():
    """Returns max relative error between autograd and central differences."""

    def run(loss_fn, params, h=1e-3):
        loss = loss_fn()
        loss.backward()
        analytic = [p.grad.detach().clone() for p in params]
        for p in params:
            p.grad = None
        numeric = finite_difference_grads(loss_fn, params, h=h)
        return max_relative_error(analytic, numeric)

    return run
