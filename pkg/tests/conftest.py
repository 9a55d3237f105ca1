import torch
import pytest


def central_fd_rel_error(make_loss, tensors, eps=1e-5, max_entries=None, seed=0):
    """Worst relative error between autograd gradients and central finite
    differences of the scalar ``make_loss()`` w.r.t. every entry of
    ``tensors`` (leaf tensors with requires_grad).

    ``max_entries`` caps the checked entries per tensor (random but seeded)
    so large parameter tensors stay tractable.
    """
    loss = make_loss()
    grads = torch.autograd.grad(loss, tensors)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.detach().reshape(-1)
        gflat = g.reshape(-1)
        n = flat.numel()
        if max_entries is not None and n > max_entries:
            idx = torch.randperm(n, generator=gen)[:max_entries]
        else:
            idx = torch.arange(n)
        for i in idx.tolist():
            orig = flat[i].item()
            flat[i] = orig + eps
            lp = make_loss().item()
            flat[i] = orig - eps
            lm = make_loss().item()
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            a = gflat[i].item()
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
            worst = max(worst, err)
    return worst


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
