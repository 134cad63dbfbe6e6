"""Shared test helpers: finite-difference gradient checking."""

import numpy as np
import torch


def finite_difference_check(loss_fn, params, eps=1e-5, rel_tol=1e-3):
    """Compare autograd gradients of loss_fn() against central differences.

    loss_fn must be deterministic (fix any sampling noise beforehand) and all
    params must be float64 leaf tensors with requires_grad. Returns the worst
    relative error over parameters; asserts it is below rel_tol.
    """
    params = list(params)
    assert params, "no parameters to check"
    for p in params:
        assert p.dtype == torch.float64, "run finite-difference checks in float64"
        if p.grad is not None:
            p.grad = None

    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for p in params]

    worst = 0.0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat = p.view(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                keep = flat[i].item()
                flat[i] = keep + eps
                up = float(loss_fn())
                flat[i] = keep - eps
                down = float(loss_fn())
                flat[i] = keep
                fd[i] = (up - down) / (2.0 * eps)
            fd = fd.view_as(p)
            scale = max(float(fd.norm()), float(grad.norm()), 1e-8)
            rel = float((fd - grad).norm()) / scale
            worst = max(worst, rel)
    assert worst < rel_tol, f"gradient mismatch: relative error {worst:.3e} >= {rel_tol}"
    return worst


def param_count(module: torch.nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
